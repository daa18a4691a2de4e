import numpy as np
import pytest

from rectattn.core import (full_attention_oracle, masked_attention_oracle,
                           partition)
from rectattn.errors import EmptyRowError, ShapeError
from rectattn.kernel import block_sparse_attention, text_full_attention

from conftest import random_problem


def random_mask(rng, n, m, density=0.4):
    mask = rng.random((n, m)) < density
    for row in range(n):
        if not mask[row].any():
            mask[row, rng.integers(0, m)] = True
    return mask


class TestBlockSparseAttention:
    def test_all_true_equals_full_attention(self):
        problem = random_problem(0, t_v=32, t_t=5, d=8, block=4, precision="single")
        grid = partition(problem)
        mask = np.ones((grid.n_q, grid.n_kv), dtype=bool)
        out, _ = block_sparse_attention(problem.q_video, problem.k, problem.v, mask, grid)
        _, expected = full_attention_oracle(problem.q_video, problem.k, problem.v)
        assert np.abs(out.astype(np.float64) - expected).max() <= 1e-5

    def test_single_block_support_is_convex_combination(self):
        problem = random_problem(1, t_v=16, t_t=0, d=8, block=4)
        grid = partition(problem)
        rng = np.random.default_rng(1)
        mask = np.zeros((grid.n_q, grid.n_kv), dtype=bool)
        choice = rng.integers(0, grid.n_kv, size=grid.n_q)
        mask[np.arange(grid.n_q), choice] = True
        out, _ = block_sparse_attention(problem.q_video, problem.k, problem.v, mask, grid)
        slices = grid.kv_block_slices()
        for n in range(grid.n_q):
            v_blk = problem.v[slices[choice[n]]]
            rows = out[n * grid.block:(n + 1) * grid.block]
            assert (rows >= v_blk.min(axis=0) - 1e-12).all()
            assert (rows <= v_blk.max(axis=0) + 1e-12).all()
        _, expected = masked_attention_oracle(problem.q_video, problem.k, problem.v,
                                              mask, grid)
        assert np.abs(out - expected).max() <= 1e-12

    def test_diagonal_plus_text_vs_oracle(self):
        # seed-42, T_v=64, T_t=8, B=8, d=16: dual-route check against the
        # double-precision masked oracle
        problem = random_problem(42, t_v=64, t_t=8, d=16, block=8, precision="single")
        grid = partition(problem)
        mask = np.zeros((grid.n_q, grid.n_kv), dtype=bool)
        mask[np.arange(grid.n_q), np.arange(grid.n_q)] = True
        mask[:, grid.text_block_start:] = True
        out, log_denoms = block_sparse_attention(problem.q_video, problem.k,
                                                 problem.v, mask, grid)
        _, expected = masked_attention_oracle(problem.q_video, problem.k, problem.v,
                                              mask, grid)
        assert np.abs(out.astype(np.float64) - expected).max() <= 1e-5
        assert log_denoms.shape == (problem.t_v,)

    @pytest.mark.parametrize("precision,tol", [("single", 1e-5), ("double", 1e-12)])
    def test_random_masks_match_oracle(self, precision, tol):
        rng = np.random.default_rng(7)
        for i in range(20):
            block = int(rng.choice([4, 8, 16]))
            t_v = block * int(rng.integers(2, 9))
            problem = random_problem(100 + i, t_v=t_v, t_t=int(rng.integers(0, 9)),
                                     d=int(rng.choice([8, 16])), block=block,
                                     precision=precision)
            grid = partition(problem)
            mask = random_mask(rng, grid.n_q, grid.n_kv)
            out, _ = block_sparse_attention(problem.q_video, problem.k, problem.v,
                                            mask, grid)
            _, expected = masked_attention_oracle(problem.q_video, problem.k,
                                                  problem.v, mask, grid)
            assert np.abs(out.astype(np.float64) - expected).max() <= tol

    def test_empty_row_rejected(self):
        problem = random_problem(2, t_v=8, t_t=0, d=8, block=4)
        grid = partition(problem)
        mask = np.zeros((grid.n_q, grid.n_kv), dtype=bool)
        mask[0, 0] = True
        with pytest.raises(EmptyRowError):
            block_sparse_attention(problem.q_video, problem.k, problem.v, mask, grid)

    def test_bit_identical_across_runs_and_thread_counts(self, monkeypatch):
        problem = random_problem(3, t_v=64, t_t=7, d=16, block=8, precision="single")
        grid = partition(problem)
        mask = random_mask(np.random.default_rng(4), grid.n_q, grid.n_kv)
        monkeypatch.setenv("RECTATTN_THREADS", "1")
        serial, ld1 = block_sparse_attention(problem.q_video, problem.k, problem.v,
                                             mask, grid)
        monkeypatch.setenv("RECTATTN_THREADS", "4")
        threaded, ld2 = block_sparse_attention(problem.q_video, problem.k, problem.v,
                                               mask, grid)
        np.testing.assert_array_equal(serial, threaded)
        np.testing.assert_array_equal(ld1, ld2)

    def test_inner_product_counter(self):
        problem = random_problem(5, t_v=32, t_t=0, d=8, block=4)
        grid = partition(problem)
        mask = random_mask(np.random.default_rng(5), grid.n_q, grid.n_kv)
        counters = {}
        block_sparse_attention(problem.q_video, problem.k, problem.v, mask, grid,
                               counters=counters)
        retained = int(mask.sum())
        assert counters["inner_product_ops"] == retained * 4 * 4 * 8

    def test_counter_with_ragged_text_block(self):
        problem = random_problem(6, t_v=8, t_t=3, d=8, block=4)
        grid = partition(problem)
        mask = np.ones((grid.n_q, grid.n_kv), dtype=bool)
        counters = {}
        block_sparse_attention(problem.q_video, problem.k, problem.v, mask, grid,
                               counters=counters)
        expected = sum(4 * length * 8 for length in grid.kv_block_lengths()) * grid.n_q
        assert counters["inner_product_ops"] == expected

    def test_shape_validation(self):
        problem = random_problem(7, t_v=8, t_t=0, d=8, block=4)
        grid = partition(problem)
        with pytest.raises(ShapeError):
            block_sparse_attention(problem.q_video[:4], problem.k, problem.v,
                                   np.ones((grid.n_q, grid.n_kv), dtype=bool), grid)


class TestTextFullAttention:
    def test_empty_text_queries(self):
        problem = random_problem(8, t_v=8, t_t=0, d=8, block=4)
        out = text_full_attention(problem.q_text, problem.k, problem.v, block=4)
        assert out.shape == (0, 8)

    def test_matches_oracle(self):
        problem = random_problem(9, t_v=32, t_t=11, d=8, block=4, precision="single")
        out = text_full_attention(problem.q_text, problem.k, problem.v, block=4)
        _, expected = full_attention_oracle(problem.q_text, problem.k, problem.v)
        assert np.abs(out.astype(np.float64) - expected).max() <= 1e-5

    def test_golden_seed42(self):
        problem = random_problem(42, t_v=32, t_t=8, d=8, block=4)
        out = text_full_attention(problem.q_text, problem.k, problem.v, block=4)
        _, expected = full_attention_oracle(problem.q_text, problem.k, problem.v)
        np.testing.assert_allclose(out, expected, atol=1e-12, rtol=0)
