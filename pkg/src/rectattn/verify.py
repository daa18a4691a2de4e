"""Self-contained oracle-equivalence and invariant checks behind `rectattn verify`."""

import numpy as np

from .core import full_attention_oracle, masked_attention_oracle, partition, pool_problem
from .harness import SyntheticSpec, gen_synthetic
from .kernel import block_sparse_attention
from .masks import SparsityConfig, build_sparse_mask
from .rectify import check_result_invariants, rectified_attention_pipeline


def random_mask(rng, n, m) -> np.ndarray:
    mask = rng.random((n, m)) < rng.uniform(0.15, 0.6)
    for row in range(n):
        if not mask[row].any():
            mask[row, rng.integers(0, m)] = True
    return mask


def _spec(rng, seed) -> SyntheticSpec:
    block = int(rng.choice([4, 8, 16]))
    n_blocks = int(rng.integers(2, 9))
    t_v = block * n_blocks
    return SyntheticSpec(seed=seed, t_v=t_v, t_t=int(rng.integers(1, 17)),
                         d=int(rng.choice([8, 16, 32])), block=block,
                         grid_dims=(1, 1, t_v),
                         locality_strength=float(rng.uniform(0, 1.5)),
                         text_norm_boost=float(rng.uniform(1, 3)),
                         intra_block_noise=float(rng.uniform(0, 1)))


def check_kernel_oracle(seed: int, instances: int = 20) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        problem = gen_synthetic(_spec(rng, seed * 1000 + i))
        grid = partition(problem)
        mask = random_mask(rng, grid.n_q, grid.n_kv)
        _, expected = masked_attention_oracle(problem.q_video, problem.k, problem.v, mask, grid)
        got, _ = block_sparse_attention(problem.q_video, problem.k, problem.v, mask, grid)
        worst = max(worst, float(np.abs(got.astype(np.float64) - expected).max()))
    return worst <= 1e-5, f"max |kernel - oracle| = {worst:.3g} over {instances} instances"


def check_zero_sparsity(seed: int, instances: int = 5) -> tuple[bool, str]:
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    config = SparsityConfig(top_k_fraction=1.0, weight_threshold=0.0, adjacency_radius=0)
    for i in range(instances):
        problem = gen_synthetic(_spec(rng, seed * 2000 + i))
        result = rectified_attention_pipeline(problem, config)
        q_all = np.concatenate([problem.q_video, problem.q_text])
        _, expected = full_attention_oracle(q_all, problem.k, problem.v)
        got = np.concatenate([result.output.o_video, result.output.o_text]).astype(np.float64)
        worst = max(worst, float(np.abs(got - expected).max()))
    return worst <= 1e-5, f"max |full-mask pipeline - dense oracle| = {worst:.3g}"


def check_invariants(seed: int, instances: int = 30) -> tuple[bool, str]:
    rng = np.random.default_rng(seed + 2)
    for i in range(instances):
        problem = gen_synthetic(_spec(rng, seed * 3000 + i))
        config = SparsityConfig(top_k_fraction=float(rng.uniform(0.05, 1.0)),
                                weight_threshold=float(rng.uniform(0, 1)),
                                adjacency_radius=int(rng.integers(0, 3)),
                                force_text_blocks=bool(rng.integers(0, 2)))
        result = rectified_attention_pipeline(problem, config)
        if not check_result_invariants(result):
            return False, f"invariant violation on instance {i}"
    return True, f"{instances} randomized configs, zero violations"


def check_mask_monotonicity(seed: int, instances: int = 20) -> tuple[bool, str]:
    rng = np.random.default_rng(seed + 3)
    for i in range(instances):
        problem = gen_synthetic(_spec(rng, seed * 4000 + i))
        grid = partition(problem)
        pooled = pool_problem(problem, grid)
        from .ipar import implicit_full_attention

        a_pool = implicit_full_attention(problem, pooled, grid).a_pool
        f1 = float(rng.uniform(0.05, 0.9))
        f2 = float(rng.uniform(f1, 1.0))
        p1 = float(rng.uniform(0, 0.9))
        p2 = float(rng.uniform(p1, 1.0))
        small = build_sparse_mask(a_pool, SparsityConfig(top_k_fraction=f1, weight_threshold=p1), grid)
        large = build_sparse_mask(a_pool, SparsityConfig(top_k_fraction=f2, weight_threshold=p2), grid)
        if (small.mask & ~large.mask).any():
            return False, f"mask shrank when knobs grew on instance {i}"
    return True, f"{instances} paired configs, mask growth monotone"


CHECKS = (
    ("kernel vs masked oracle", check_kernel_oracle),
    ("zero-sparsity identity", check_zero_sparsity),
    ("pipeline invariants", check_invariants),
    ("mask monotonicity", check_mask_monotonicity),
)


def run_verification(seed: int = 42, verbose: bool = True) -> int:
    failures = 0
    for name, fn in CHECKS:
        ok, detail = fn(seed)
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    if verbose:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 0 if failures == 0 else 1
