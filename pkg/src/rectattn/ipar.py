"""Implicit full attention from isolated pooling and cross-modal weight reallocation.

Text tokens lack intra-block homogeneity, so keys are pooled per block for video
tokens only while text keys stay at token granularity. The resulting mixed map
is reweighted so video entries carry their block's total token-level mass, then
renormalized per row and re-aggregated into an N x M block-level distribution.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import AttentionProblem, BlockGrid, PooledSet, softmax_rows
from .errors import DegenerateRowError, ShapeError


@dataclass(frozen=True, eq=False)
class ImplicitAttention:
    """Block-level implicit full attention plus its intermediates.

    ``a_pool``           N x M, rows are probability distributions over blocks
    ``a_mix_pool``       N x (N + T_t), pre-reallocation mixed-granularity map
    ``a_v_reallocated``  N x N, video block masses after reallocation
    ``a_t_reallocated``  N x T_t, per-token text weights after reallocation
    ``a_t_block``        N x (M - N), text weights re-aggregated per block
    """

    a_pool: np.ndarray
    a_mix_pool: np.ndarray
    a_v_reallocated: np.ndarray
    a_t_reallocated: np.ndarray
    a_t_block: np.ndarray


def mixed_pooled_scores(pooled: PooledSet, d: int) -> np.ndarray:
    """Row softmax of pooled queries against the mixed-granularity key sequence."""
    if pooled.q_pool.shape[1] != d or pooled.k_mix_pool.shape[1] != d:
        raise ShapeError(
            f"pooled widths {pooled.q_pool.shape[1]}/{pooled.k_mix_pool.shape[1]} != d={d}")
    scores = (pooled.q_pool @ pooled.k_mix_pool.T) / math.sqrt(d)
    return softmax_rows(scores)


def reallocate(a_mix: np.ndarray, grid: BlockGrid):
    """Rebalance cross-modal weights to token-level granularity.

    Per row, with D = B * sum(video entries) + sum(text entries), video entries
    become ``B * a / D`` (the block's total token-level mass) and text entries
    ``a / D``, so each row still sums to one. With no text columns, or with
    B = 1, the map is returned unchanged: the reallocation is then a
    renormalization of an already-normalized row.
    """
    n = grid.n_q
    if a_mix.ndim != 2 or a_mix.shape[0] != n or a_mix.shape[1] < n:
        raise ShapeError(f"a_mix shape {a_mix.shape} inconsistent with N={n}")
    a_v = a_mix[:, :n]
    a_t = a_mix[:, n:]
    if a_t.shape[1] == 0 or grid.block == 1:
        return a_v.copy(), a_t.copy()
    denom = grid.block * a_v.sum(axis=1) + a_t.sum(axis=1)
    if (denom <= 0).any():
        raise DegenerateRowError(
            f"reallocation denominator is zero on rows {np.flatnonzero(denom <= 0).tolist()}")
    denom = denom[:, None]
    return grid.block * a_v / denom, a_t / denom


def implicit_full_attention(problem: AttentionProblem, pooled: PooledSet,
                            grid: BlockGrid) -> ImplicitAttention:
    """Compose mixed pooled scores, reallocation, and per-block text
    re-aggregation into the final N x M implicit full attention."""
    a_mix = mixed_pooled_scores(pooled, problem.d)
    a_v_hat, a_t_hat = reallocate(a_mix, grid)

    n_text = grid.n_kv - grid.n_q
    a_t_block = np.empty((grid.n_q, n_text), dtype=np.float64)
    for j in range(n_text):
        start = j * grid.block
        stop = min(start + grid.block, problem.t_t)  # ragged final block sums its actual tokens
        a_t_block[:, j] = a_t_hat[:, start:stop].sum(axis=1)

    a_pool = np.concatenate([a_v_hat, a_t_block], axis=1)
    return ImplicitAttention(a_pool=a_pool, a_mix_pool=a_mix,
                             a_v_reallocated=a_v_hat, a_t_reallocated=a_t_hat,
                             a_t_block=a_t_block)
