import math

import numpy as np
import pytest

from rectattn.core import (AttentionProblem, BlockGrid, block_pool,
                           full_attention_oracle, partition, pool_problem,
                           softmax_rows)
from rectattn.errors import ShapeError
from rectattn.ipar import implicit_full_attention, mixed_pooled_scores, reallocate
from rectattn.metrics import normalized_l1

from conftest import homogeneous_problem, load_fixture, random_problem


def grid_for(n_q, n_kv, block, last_text_len):
    return BlockGrid(n_q=n_q, n_kv=n_kv, block=block,
                     text_block_start=n_q, last_text_block_len=last_text_len)


def blocked_truth(problem, grid):
    """Block-aggregated true attention: mean over the block's queries, summed
    over each key block. Rows are distributions over the M blocks."""
    weights, _ = full_attention_oracle(problem.q_video, problem.k, problem.v)
    out = np.empty((grid.n_q, grid.n_kv))
    for n in range(grid.n_q):
        rows = weights[n * grid.block:(n + 1) * grid.block]
        for m, sl in enumerate(grid.kv_block_slices()):
            out[n, m] = rows[:, sl].sum() / grid.block
    return out


class TestMixedPooledScores:
    def test_no_text_reduces_to_pooled_video_softmax(self):
        problem = random_problem(0, t_v=16, t_t=0, d=8, block=4)
        grid = partition(problem)
        pooled = pool_problem(problem, grid)
        a_mix = mixed_pooled_scores(pooled, problem.d)
        expected = softmax_rows((pooled.q_pool @ pooled.k_v_pool.T) / math.sqrt(8))
        np.testing.assert_array_equal(a_mix, expected)
        assert a_mix.shape == (4, 4)

    def test_identical_keys_give_uniform_rows(self):
        from rectattn.core import PooledSet

        rng = np.random.default_rng(1)
        q_pool = rng.standard_normal((3, 8))
        k_row = rng.standard_normal(8)
        pooled = PooledSet(q_pool=q_pool, k_v_pool=np.tile(k_row, (3, 1)),
                           v_pool=np.zeros((3, 8)), k_mix_pool=np.tile(k_row, (7, 1)))
        a_mix = mixed_pooled_scores(pooled, 8)
        np.testing.assert_allclose(a_mix, 1.0 / 7.0, atol=1e-15, rtol=0)

    def test_golden_seed42(self):
        from rectattn.core import PooledSet

        rng = np.random.default_rng(42)
        q_pool = rng.standard_normal((4, 8))
        k_mix = rng.standard_normal((7, 8))
        pooled = PooledSet(q_pool=q_pool, k_v_pool=k_mix[:4],
                           v_pool=np.zeros((4, 8)), k_mix_pool=k_mix)
        np.testing.assert_allclose(mixed_pooled_scores(pooled, 8),
                                   load_fixture("mixed_pooled_expected.rsat"),
                                   atol=1e-14, rtol=0)

    def test_width_mismatch(self):
        problem = random_problem(2, t_v=8, t_t=2, d=8, block=4)
        pooled = pool_problem(problem, partition(problem))
        with pytest.raises(ShapeError):
            mixed_pooled_scores(pooled, 16)


class TestReallocate:
    def test_direct_formula(self):
        a_mix = np.array([[0.2, 0.8]])
        a_v, a_t = reallocate(a_mix, grid_for(1, 2, 4, 1))
        np.testing.assert_allclose(a_v, [[0.5]])
        np.testing.assert_allclose(a_t, [[0.5]])

    def test_no_text_is_identity(self):
        rows = softmax_rows(np.random.default_rng(2).standard_normal((3, 3)))
        a_v, a_t = reallocate(rows, grid_for(3, 3, 4, 0))
        np.testing.assert_array_equal(a_v, rows)
        assert a_t.shape == (3, 0)

    def test_block_size_one_is_identity(self):
        rows = softmax_rows(np.random.default_rng(3).standard_normal((2, 5)))
        a_v, a_t = reallocate(rows, grid_for(2, 5, 1, 1))
        np.testing.assert_array_equal(a_v, rows[:, :2])
        np.testing.assert_array_equal(a_t, rows[:, 2:])

    def test_rows_still_sum_to_one(self):
        rows = softmax_rows(np.random.default_rng(4).standard_normal((6, 10)))
        a_v, a_t = reallocate(rows, grid_for(6, 7, 4, 2))
        np.testing.assert_allclose(a_v.sum(axis=1) + a_t.sum(axis=1), 1.0,
                                   atol=1e-12, rtol=0)


class TestImplicitFullAttention:
    def test_rows_are_distributions(self):
        for seed in range(5):
            problem = random_problem(seed, t_v=32, t_t=6, d=8, block=4)
            grid = partition(problem)
            imp = implicit_full_attention(problem, pool_problem(problem, grid), grid)
            assert (imp.a_pool >= 0).all()
            np.testing.assert_allclose(imp.a_pool.sum(axis=1), 1.0, atol=1e-6, rtol=0)
            np.testing.assert_allclose(imp.a_mix_pool.sum(axis=1), 1.0, atol=1e-6, rtol=0)

    def test_homogeneous_blocks_lossless(self):
        problem = homogeneous_problem(5, t_v=32, t_t=4, d=8, block=4)
        grid = partition(problem)
        imp = implicit_full_attention(problem, pool_problem(problem, grid), grid)
        np.testing.assert_allclose(imp.a_pool, blocked_truth(problem, grid),
                                   atol=1e-9, rtol=0)

    def test_golden_against_independent_composition(self, golden_scalars):
        rng = np.random.default_rng(42)
        q_video = rng.standard_normal((32, 8))
        k = rng.standard_normal((38, 8))
        problem = AttentionProblem(q_video=q_video, q_text=np.zeros((6, 8)), k=k,
                                   v=rng.standard_normal((38, 8)), d=8, block=4)
        grid = partition(problem)
        imp = implicit_full_attention(problem, pool_problem(problem, grid), grid)
        np.testing.assert_allclose(imp.a_pool, load_fixture("ipar_a_pool_expected.rsat"),
                                   atol=1e-12, rtol=0)
        truth = blocked_truth(problem, grid)
        cos = float(imp.a_pool.ravel() @ truth.ravel()
                    / (np.linalg.norm(imp.a_pool) * np.linalg.norm(truth)))
        assert cos == pytest.approx(golden_scalars["ipar_blocked_truth_cosine"], abs=1e-9)

    def test_no_text_equals_plain_pooled_softmax(self):
        problem = random_problem(6, t_v=24, t_t=0, d=8, block=4)
        grid = partition(problem)
        pooled = pool_problem(problem, grid)
        imp = implicit_full_attention(problem, pooled, grid)
        expected = softmax_rows((pooled.q_pool @ pooled.k_v_pool.T) / math.sqrt(8))
        np.testing.assert_array_equal(imp.a_pool, expected)

    def test_beats_direct_pooling_on_text_heavy_instances(self):
        # smoke version of the alignment property; the full 50-seed suite runs
        # in the acceptance tests
        from rectattn.harness import SyntheticSpec, gen_synthetic

        wins = 0
        for seed in range(10):
            problem = gen_synthetic(SyntheticSpec(
                seed=seed, t_v=64, t_t=8, d=16, block=8, grid_dims=(1, 8, 8),
                locality_strength=1.0, text_norm_boost=2.0, intra_block_noise=0.3,
                precision="double"))
            grid = partition(problem)
            pooled = pool_problem(problem, grid)
            imp = implicit_full_attention(problem, pooled, grid)
            truth = blocked_truth(problem, grid)
            direct = softmax_rows((pooled.q_pool
                                   @ block_pool(problem.k, grid.kv_block_lengths()).T)
                                  / math.sqrt(problem.d))
            if normalized_l1(imp.a_pool, truth) <= normalized_l1(direct, truth):
                wins += 1
        assert wins >= 8
