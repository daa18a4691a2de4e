#!/usr/bin/env python3
"""Regenerate the golden fixtures under tests/fixtures/.

Section 1 computes expected values with independent reference code only
(scipy softmax, numpy means, a loop-based Morton code), so the fixtures stay
decoupled from the library paths they later check. Section 2 freezes library
outputs (synthetic generator tensors, the demo sweep CSV) captured at the first
verified build; those act as regression pins, not correctness oracles.

Usage: python3 scripts/gen_fixtures.py
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.special import softmax

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"
sys.path.insert(0, str(ROOT / "src"))

from rectattn.rsat import write_rsat  # noqa: E402


def save(name, array):
    write_rsat(FIXTURES / name, np.asarray(array, dtype=np.float64))


# ---------------------------------------------------------------------------
# Section 1: independent oracles
# ---------------------------------------------------------------------------

def fixture_block_pool():
    x = np.random.default_rng(42).standard_normal((8, 4))
    expected = np.stack([x[:4].mean(axis=0), x[4:].mean(axis=0)])
    save("block_pool_expected.rsat", expected)


def fixture_full_attention():
    rng = np.random.default_rng(42)
    q = rng.standard_normal((6, 8))
    k = rng.standard_normal((10, 8))
    v = rng.standard_normal((10, 8))
    weights = softmax(q @ k.T / math.sqrt(8), axis=1)
    save("full_attention_weights.rsat", weights)
    save("full_attention_output.rsat", weights @ v)


def fixture_masked_oracle():
    # T_v=16, T_t=0, B=4: keep diagonal blocks only
    rng = np.random.default_rng(42)
    q = rng.standard_normal((16, 8))
    k = rng.standard_normal((16, 8))
    scores = q @ k.T / math.sqrt(8)
    masked = np.full_like(scores, -np.inf)
    for n in range(4):
        masked[n * 4:(n + 1) * 4, n * 4:(n + 1) * 4] = scores[n * 4:(n + 1) * 4, n * 4:(n + 1) * 4]
    weights = softmax(masked, axis=1)
    save("masked_oracle_weights.rsat", weights)


def _morton_code_reference(t, y, x):
    # bit interleaving by explicit loop: w bit 0, h bit 1, t bit 2, repeating
    code = 0
    for bit in range(21):
        code |= ((x >> bit) & 1) << (3 * bit)
        code |= ((y >> bit) & 1) << (3 * bit + 1)
        code |= ((t >> bit) & 1) << (3 * bit + 2)
    return code


def fixture_morton():
    t, h, w = 2, 4, 4
    codes = []
    for tt in range(t):
        for yy in range(h):
            for xx in range(w):
                codes.append(_morton_code_reference(tt, yy, xx))
    perm = sorted(range(len(codes)), key=lambda i: codes[i])
    save("morton_perm_2_4_4.rsat", np.asarray(perm, dtype=np.float64))


def fixture_mixed_pooled():
    rng = np.random.default_rng(42)
    q_pool = rng.standard_normal((4, 8))
    k_mix = rng.standard_normal((7, 8))  # 4 pooled video rows + 3 raw text rows
    save("mixed_pooled_expected.rsat", softmax(q_pool @ k_mix.T / math.sqrt(8), axis=1))


def fixture_attention_gain():
    rng = np.random.default_rng(42)
    scores = rng.standard_normal((4, 4))
    save("attention_gain_expected.rsat", np.abs(4 * 4 * scores))


def fixture_ipar_composition():
    # Independent end-to-end IPAR reference: plain numpy means + scipy softmax.
    t_v, t_t, b, d = 32, 6, 4, 8
    rng = np.random.default_rng(42)
    q_video = rng.standard_normal((t_v, d))
    k = rng.standard_normal((t_v + t_t, d))
    n = t_v // b
    q_pool = q_video.reshape(n, b, d).mean(axis=1)
    k_v_pool = k[:t_v].reshape(n, b, d).mean(axis=1)
    k_mix = np.concatenate([k_v_pool, k[t_v:]], axis=0)
    a_mix = softmax(q_pool @ k_mix.T / math.sqrt(d), axis=1)
    a_v, a_t = a_mix[:, :n], a_mix[:, n:]
    denom = (b * a_v.sum(axis=1) + a_t.sum(axis=1))[:, None]
    a_v_hat = b * a_v / denom
    a_t_hat = a_t / denom
    n_text = -(-t_t // b)
    a_t_block = np.stack([a_t_hat[:, j * b:min((j + 1) * b, t_t)].sum(axis=1)
                          for j in range(n_text)], axis=1)
    a_pool = np.concatenate([a_v_hat, a_t_block], axis=1)
    save("ipar_a_pool_expected.rsat", a_pool)

    # alignment of the reference a_pool with block-aggregated true attention
    weights = softmax(q_video @ k.T / math.sqrt(d), axis=1)
    lens = [b] * n + [b] * (n_text - 1) + [t_t - (n_text - 1) * b]
    bounds = np.concatenate([[0], np.cumsum(lens)])
    blocked = np.stack([
        np.stack([weights[i * b:(i + 1) * b, bounds[m]:bounds[m + 1]].sum() / b
                  for m in range(len(lens))])
        for i in range(n)])
    cos = float((a_pool.ravel() @ blocked.ravel())
                / (np.linalg.norm(a_pool) * np.linalg.norm(blocked)))
    return {"ipar_blocked_truth_cosine": cos}


def fixture_metric_scalars():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((5, 4))
    return {
        "normalized_l1": float(np.abs(a - b).sum() / np.abs(b).sum()),
        "cosine_similarity": float(a.ravel() @ b.ravel()
                                   / (np.linalg.norm(a) * np.linalg.norm(b))),
    }


# ---------------------------------------------------------------------------
# Section 2: frozen library outputs (regression pins)
# ---------------------------------------------------------------------------

def freeze_generator_outputs():
    from rectattn.harness import SyntheticSpec, gen_synthetic

    spec = SyntheticSpec(seed=42, t_v=256, t_t=16, d=32, block=8, grid_dims=(4, 8, 8),
                         locality_strength=1.0, text_norm_boost=2.0,
                         intra_block_noise=0.3, precision="single")
    problem = gen_synthetic(spec)
    for name in ("q_video", "q_text", "k", "v"):
        write_rsat(FIXTURES / f"synthetic_{name}.rsat", getattr(problem, name))


def freeze_demo_sweep():
    from rectattn.harness import ExperimentConfig, SyntheticSpec, sweep_sparsity
    from rectattn.masks import SparsityConfig

    config = ExperimentConfig(
        synthetic=SyntheticSpec(seed=42, t_v=64, t_t=8, d=16, block=8,
                                grid_dims=(1, 8, 8), locality_strength=1.0,
                                text_norm_boost=2.0, intra_block_noise=0.3),
        sparsity=SparsityConfig(top_k_fraction=0.5, weight_threshold=0.3,
                                adjacency_radius=1, force_text_blocks=True),
        variants=("full", "sparse-unrectified", "sparse-rectified"))
    text = sweep_sparsity(config, [0.5, 0.2, 0.1])
    (FIXTURES / "demo_sweep.csv").write_text(text)


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    fixture_block_pool()
    fixture_full_attention()
    fixture_masked_oracle()
    fixture_morton()
    fixture_mixed_pooled()
    fixture_attention_gain()
    scalars = fixture_metric_scalars()
    scalars.update(fixture_ipar_composition())
    (FIXTURES / "scalars.json").write_text(json.dumps(scalars, indent=2, sort_keys=True) + "\n")
    freeze_generator_outputs()
    freeze_demo_sweep()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
