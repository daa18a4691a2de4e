import numpy as np
import pytest

from rectattn.core import full_attention_oracle, partition, pool_problem
from rectattn.errors import ConfigError
from rectattn.ipar import implicit_full_attention
from rectattn.masks import (CompensationMask, SparsityConfig, all_true_mask,
                            build_sparse_mask)
from rectattn.metrics import normalized_l1
from rectattn.rectify import (apply_rectification, check_result_invariants,
                              rectification_factors, rectified_attention_pipeline)

from conftest import homogeneous_problem, random_problem


def full_output(problem):
    q_all = np.concatenate([problem.q_video, problem.q_text])
    _, out = full_attention_oracle(q_all, problem.k, problem.v)
    return out


def pipeline_output(result):
    return np.concatenate([result.output.o_video, result.output.o_text]).astype(np.float64)


class TestRectificationFactors:
    def test_direct_sum(self):
        a = np.array([[0.5, 0.3, 0.2]])
        mask = np.array([[True, True, False]])
        factors = rectification_factors(a, mask)
        np.testing.assert_allclose(factors.r, [0.8])

    def test_all_true_is_exactly_one(self):
        problem = random_problem(0, t_v=32, t_t=6, d=8, block=4)
        grid = partition(problem)
        imp = implicit_full_attention(problem, pool_problem(problem, grid), grid)
        factors = rectification_factors(imp.a_pool, all_true_mask(grid))
        np.testing.assert_array_equal(factors.r, np.ones(grid.n_q))

    def test_range_and_monotonicity(self):
        problem = random_problem(1, t_v=32, t_t=6, d=8, block=4)
        grid = partition(problem)
        imp = implicit_full_attention(problem, pool_problem(problem, grid), grid)
        small = build_sparse_mask(imp.a_pool, SparsityConfig(0.2, 0.0, 0, False), grid)
        large = build_sparse_mask(imp.a_pool, SparsityConfig(0.6, 0.3, 1, False), grid)
        r_small = rectification_factors(imp.a_pool, small).r
        r_large = rectification_factors(imp.a_pool, large).r
        for r in (r_small, r_large):
            assert (r > 0).all() and (r <= 1 + 1e-6).all()
        assert (r_small <= r_large + 1e-9).all()

    def test_gap_against_true_block_mass(self):
        # quantifies the implicit approximation gap: R from a_pool vs R from
        # the block-summed true attention
        problem = random_problem(42, t_v=32, t_t=6, d=8, block=4)
        grid = partition(problem)
        imp = implicit_full_attention(problem, pool_problem(problem, grid), grid)
        sparse = build_sparse_mask(imp.a_pool, SparsityConfig(0.4, 0.3, 1, True), grid)
        r = rectification_factors(imp.a_pool, sparse).r
        weights, _ = full_attention_oracle(problem.q_video, problem.k, problem.v)
        slices = grid.kv_block_slices()
        r_true = np.empty(grid.n_q)
        for n in range(grid.n_q):
            rows = weights[n * grid.block:(n + 1) * grid.block]
            r_true[n] = sum(rows[:, slices[m]].sum() for m in
                            np.flatnonzero(sparse.mask[n])) / grid.block
        gap = np.abs(r - r_true).max()
        print(f"max |R_implicit - R_true| = {gap:.4f}")
        assert gap < 0.25


class TestApplyRectification:
    def test_all_true_mask_is_bit_exact_identity(self):
        problem = random_problem(2, t_v=32, t_t=6, d=8, block=4, precision="single")
        grid = partition(problem)
        pooled = pool_problem(problem, grid)
        imp = implicit_full_attention(problem, pooled, grid)
        sparse = all_true_mask(grid)
        factors = rectification_factors(imp.a_pool, sparse)
        comp = CompensationMask(mask=np.ones_like(sparse.mask))
        o_v = np.random.default_rng(0).standard_normal((32, 8)).astype(np.float32)
        out = apply_rectification(o_v, factors, imp, sparse, comp, pooled.v_pool, grid)
        np.testing.assert_array_equal(out, o_v)

    def test_no_compensation_is_pure_rescaling(self):
        problem = random_problem(3, t_v=16, t_t=4, d=8, block=4)
        grid = partition(problem)
        pooled = pool_problem(problem, grid)
        imp = implicit_full_attention(problem, pooled, grid)
        sparse = build_sparse_mask(imp.a_pool, SparsityConfig(0.3, 0.0, 0, False), grid)
        factors = rectification_factors(imp.a_pool, sparse)
        comp = CompensationMask(mask=np.zeros_like(sparse.mask))
        o_v = np.random.default_rng(1).standard_normal((16, 8))
        out = apply_rectification(o_v, factors, imp, sparse, comp, pooled.v_pool, grid)
        np.testing.assert_array_equal(out, o_v * np.repeat(factors.r, grid.block)[:, None])

    def test_golden_composition(self):
        # independent double-precision composition of the same formula
        problem = random_problem(42, t_v=32, t_t=6, d=8, block=4, precision="single")
        grid = partition(problem)
        pooled = pool_problem(problem, grid)
        imp = implicit_full_attention(problem, pooled, grid)
        sparse = build_sparse_mask(imp.a_pool, SparsityConfig(0.2, 0.2, 1, True), grid)
        from rectattn.masks import compensation_mask, gain_error

        ge = gain_error(problem, pooled, grid)
        comp = compensation_mask(ge.gain, ge.error, sparse)
        o_v = np.random.default_rng(2).standard_normal((32, 8)).astype(np.float32)
        out = apply_rectification(o_v, factors := rectification_factors(imp.a_pool, sparse),
                                  imp, sparse, comp, pooled.v_pool, grid)

        expected = np.empty((32, 8))
        for n in range(grid.n_q):
            extra = np.zeros(8)
            for m in range(grid.n_kv):
                if not sparse.mask[n, m] and comp.mask[n, m]:
                    extra += imp.a_pool[n, m] * pooled.v_pool[m]
            for i in range(n * grid.block, (n + 1) * grid.block):
                expected[i] = factors.r[n] * o_v[i].astype(np.float64) + extra
        np.testing.assert_allclose(out.astype(np.float64), expected, atol=1e-6, rtol=0)


class TestPipeline:
    def test_zero_sparsity_identity(self):
        problem = random_problem(4, t_v=64, t_t=9, d=16, block=8, precision="single")
        config = SparsityConfig(top_k_fraction=1.0, weight_threshold=0.0,
                                adjacency_radius=0, force_text_blocks=False)
        result = rectified_attention_pipeline(problem, config)
        assert np.abs(pipeline_output(result) - full_output(problem)).max() <= 1e-5

    def test_homogeneous_no_text_is_exact(self):
        problem = homogeneous_problem(5, t_v=32, t_t=0, d=8, block=4)
        config = SparsityConfig(top_k_fraction=0.5, weight_threshold=0.3,
                                adjacency_radius=1, force_text_blocks=False)
        result = rectified_attention_pipeline(problem, config)
        assert np.abs(pipeline_output(result) - full_output(problem)).max() <= 1e-6

    def test_rectified_beats_unrectified(self):
        from rectattn.harness import SyntheticSpec, gen_synthetic

        problem = gen_synthetic(SyntheticSpec(seed=42, t_v=256, t_t=16, d=32, block=8,
                                              grid_dims=(4, 8, 8), locality_strength=1.0,
                                              text_norm_boost=2.0, intra_block_noise=0.3))
        config = SparsityConfig(top_k_fraction=0.2, weight_threshold=0.3,
                                adjacency_radius=1, force_text_blocks=True)
        reference = full_output(problem)
        rect = rectified_attention_pipeline(problem, config, variant="sparse-rectified")
        unrect = rectified_attention_pipeline(problem, config, variant="sparse-unrectified")
        err_rect = normalized_l1(pipeline_output(rect), reference)
        err_unrect = normalized_l1(pipeline_output(unrect), reference)
        assert err_rect < err_unrect

    def test_variant_sharing_and_invariants(self):
        problem = random_problem(6, t_v=64, t_t=10, d=8, block=8)
        config = SparsityConfig(0.25, 0.3, 1, True)
        results = {variant: rectified_attention_pipeline(problem, config, variant=variant)
                   for variant in ("sparse-unrectified", "sparse-rectified",
                                   "sparse-rectified-no-gapr", "compensate-all")}
        masks = [r.sparse_mask.mask for r in results.values()]
        for m in masks[1:]:
            np.testing.assert_array_equal(masks[0], m)
        for result in results.values():
            assert check_result_invariants(result)
        # no-gapr equals pure rescaling of the unrectified output
        unrect = results["sparse-unrectified"]
        no_gapr = results["sparse-rectified-no-gapr"]
        r_rows = np.repeat(no_gapr.factors.r, problem.block)[:, None]
        np.testing.assert_allclose(
            no_gapr.output.o_video,
            (unrect.output.o_video * r_rows).astype(problem.dtype), atol=1e-12)

    def test_implied_mass_bound(self):
        for seed in range(5):
            problem = random_problem(seed, t_v=32, t_t=7, d=8, block=4)
            config = SparsityConfig(0.2, 0.4, 1, False)
            result = rectified_attention_pipeline(problem, config)
            applied = ~result.sparse_mask.mask & result.comp_mask.mask
            implied = result.factors.r + np.where(applied, result.implicit.a_pool, 0.0).sum(axis=1)
            assert (implied <= 1 + 1e-6).all()

    def test_unknown_variant(self):
        problem = random_problem(7, t_v=8, t_t=0, d=8, block=4)
        with pytest.raises(ConfigError):
            rectified_attention_pipeline(problem, SparsityConfig(), variant="bogus")
