"""Sparse mask construction and gain-aware compensation masking.

The sparse mask unions greedy importance selection on the implicit attention
map with an adjacency band around the diagonal block (and, optionally, forced
text blocks). The compensation mask marks blocks whose estimated attention gain
exceeds the estimated pooling error; it is computed on all blocks and consumed
only on non-critical ones.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import (AttentionProblem, BlockGrid, PooledSet, block_pool,
                   block_sums, full_attention_oracle)
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class SparsityConfig:
    """Knobs of the sparse mask.

    ``top_k_fraction``    fraction of K/V blocks each query block must retain
    ``weight_threshold``  p, cumulative pooled-weight target per row
    ``adjacency_radius``  r, blocks on each side of the diagonal kept unconditionally
    ``force_text_blocks`` retain all text blocks regardless of importance
    """

    top_k_fraction: float = 0.2
    weight_threshold: float = 0.3
    adjacency_radius: int = 1
    force_text_blocks: bool = True

    def __post_init__(self):
        if not 0.0 < self.top_k_fraction <= 1.0:
            raise ConfigError(f"top_k_fraction must be in (0, 1], got {self.top_k_fraction}")
        if not 0.0 <= self.weight_threshold <= 1.0:
            raise ConfigError(f"weight_threshold must be in [0, 1], got {self.weight_threshold}")
        if self.adjacency_radius < 0:
            raise ConfigError(f"adjacency_radius must be >= 0, got {self.adjacency_radius}")


@dataclass(frozen=True, eq=False)
class SparseMask:
    """Boolean N x M block masks: ``mask`` = importance | adjacency (| forced text)."""

    mask: np.ndarray
    importance: np.ndarray
    adjacency: np.ndarray
    retained_count: np.ndarray

    @property
    def retained_total(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class GainError:
    """Relaxed-form attention gain and pooling error per block, with optional
    exact softmax-form values kept for validation only."""

    gain: np.ndarray
    error: np.ndarray
    exact_gain: np.ndarray | None = None
    exact_error: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class CompensationMask:
    """Blocks where compensation applies; consumed as ``~sparse.mask & mask``."""

    mask: np.ndarray


def all_true_mask(grid: BlockGrid) -> SparseMask:
    shape = (grid.n_q, grid.n_kv)
    ones = np.ones(shape, dtype=bool)
    return SparseMask(mask=ones, importance=ones.copy(), adjacency=np.zeros(shape, dtype=bool),
                      retained_count=np.full(grid.n_q, grid.n_kv, dtype=np.int64))


def build_sparse_mask(a_pool: np.ndarray, config: SparsityConfig,
                      grid: BlockGrid) -> SparseMask:
    """Greedy importance selection plus adjacency band.

    Per row, blocks are taken in descending pooled weight (ties broken by
    ascending block index) until the count floor ceil(top_k_fraction * M) and
    the cumulative-weight target p are both met, capped at M. The adjacency
    band keeps blocks within ``adjacency_radius`` of the diagonal block.
    """
    n, m = grid.n_q, grid.n_kv
    if a_pool.shape != (n, m):
        raise ShapeError(f"a_pool shape {a_pool.shape} != (N, M) = {(n, m)}")

    # stable argsort of -a keeps ties in ascending block index
    order = np.argsort(-a_pool, axis=1, kind="stable")
    sorted_w = np.take_along_axis(a_pool, order, axis=1)
    cumw = np.cumsum(sorted_w, axis=1)
    k_floor = math.ceil(config.top_k_fraction * m)
    meets_p = cumw >= config.weight_threshold
    first_p = np.where(meets_p.any(axis=1), meets_p.argmax(axis=1) + 1, m)
    count = np.clip(np.maximum(k_floor, first_p), 1, m)

    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(m)[None, :], axis=1)
    importance = ranks < count[:, None]

    rows = np.arange(n)[:, None]
    cols = np.arange(m)[None, :]
    adjacency = np.abs(cols - rows) <= config.adjacency_radius

    mask = importance | adjacency
    if config.force_text_blocks and m > n:
        mask[:, grid.text_block_start:] = True
    return SparseMask(mask=mask, importance=importance, adjacency=adjacency,
                      retained_count=mask.sum(axis=1))


def pooled_scores(pooled: PooledSet, grid: BlockGrid, d: int) -> np.ndarray:
    """Pre-softmax pooled scores q_pool k_poolᵀ / √d over all M key blocks,
    text blocks pooled over their actual lengths."""
    k_all_pool = np.concatenate([
        pooled.k_v_pool,
        _pool_rows(pooled.k_mix_pool[grid.n_q:], grid),
    ], axis=0)
    return (pooled.q_pool @ k_all_pool.T) / math.sqrt(d)


def _pool_rows(text_rows: np.ndarray, grid: BlockGrid) -> np.ndarray:
    n_text = grid.n_kv - grid.n_q
    if n_text == 0:
        return np.empty((0, text_rows.shape[1]), dtype=np.float64)
    lens = grid.kv_block_lengths()[grid.n_q:]
    return block_pool(text_rows, lens)


def attention_gain(scores_pool: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Relaxed attention gain |B^q * B^k * s_pool| per block: the absolute block
    sum of the replicated pooled score (ragged text blocks use their actual
    token count)."""
    if scores_pool.shape != (grid.n_q, grid.n_kv):
        raise ShapeError(
            f"scores_pool shape {scores_pool.shape} != (N, M) = {(grid.n_q, grid.n_kv)}")
    lens = np.asarray(grid.kv_block_lengths(), dtype=np.float64)
    return np.abs(grid.block * lens[None, :] * scores_pool)


def pooling_error(problem: AttentionProblem, pooled: PooledSet,
                  grid: BlockGrid) -> np.ndarray:
    """Relaxed pooling error |sum of first-order score deltas| per block.

    Uses the closed form
        len_m * (sum_i q_i - B * q_pool_n) k_pool_mᵀ / √d
      + B * q_pool_n (sum_j k_j - len_m * k_pool_m)ᵀ / √d
    without materializing token pairs. Both deficits vanish analytically by
    mean-centering; they are kept to cover ragged text blocks, where pooling
    over the actual length leaves rounding-level residue.
    """
    if pooled.q_pool.shape != (grid.n_q, problem.d):
        raise ShapeError(f"q_pool shape {pooled.q_pool.shape} != {(grid.n_q, problem.d)}")
    lens_list = grid.kv_block_lengths()
    lens = np.asarray(lens_list, dtype=np.float64)

    q_sums = block_sums(problem.q_video, [grid.block] * grid.n_q)
    q_deficit = q_sums - grid.block * pooled.q_pool  # exactly zero for power-of-two B

    k_all_pool = np.concatenate(
        [pooled.k_v_pool, _pool_rows(pooled.k_mix_pool[grid.n_q:], grid)], axis=0)
    k_sums = block_sums(problem.k, lens_list)
    k_deficit = k_sums - lens[:, None] * k_all_pool

    inv_sqrt_d = 1.0 / math.sqrt(problem.d)
    term1 = (q_deficit @ k_all_pool.T) * lens[None, :] * inv_sqrt_d
    term2 = grid.block * (pooled.q_pool @ k_deficit.T) * inv_sqrt_d
    return np.abs(term1 + term2)


def compensation_mask(gain: np.ndarray, error: np.ndarray,
                      sparse: SparseMask) -> CompensationMask:
    """Blocks with strictly greater gain than error. Independent of the sparse
    mask; the restriction to non-critical blocks happens at application."""
    if gain.shape != error.shape or gain.shape != sparse.mask.shape:
        raise ShapeError(
            f"shapes disagree: gain {gain.shape}, error {error.shape}, mask {sparse.mask.shape}")
    return CompensationMask(mask=gain > error)


def gain_error(problem: AttentionProblem, pooled: PooledSet, grid: BlockGrid,
               scores_pool: np.ndarray | None = None,
               with_exact: bool = False) -> GainError:
    """Assemble relaxed gain/error, optionally with the exact softmax forms.

    The exact forms remap the pooled map to token level (replicated along the
    query dimension, uniform along the key dimension) and take per-token-pair
    absolute sums against brute-force full attention; they are validation
    oracles, quadratic in sequence length.
    """
    if scores_pool is None:
        scores_pool = pooled_scores(pooled, grid, problem.d)
    gain = attention_gain(scores_pool, grid)
    error = pooling_error(problem, pooled, grid)
    if not with_exact:
        return GainError(gain=gain, error=error)

    lens = np.asarray(grid.kv_block_lengths(), dtype=np.float64)
    shift = scores_pool.max(axis=1, keepdims=True)
    e = np.exp(scores_pool - shift)
    denom = (e * lens[None, :]).sum(axis=1, keepdims=True)
    a_pool_token = e / denom  # token-level pooled weight, shared within a block
    exact_gain = grid.block * lens[None, :] * a_pool_token

    weights, _ = full_attention_oracle(problem.q_video, problem.k, problem.v)
    exact_error = np.empty_like(exact_gain)
    for nn in range(grid.n_q):
        w_rows = weights[nn * grid.block:(nn + 1) * grid.block]
        for mm, sl in enumerate(grid.kv_block_slices()):
            exact_error[nn, mm] = np.abs(w_rows[:, sl] - a_pool_token[nn, mm]).sum()
    return GainError(gain=gain, error=error, exact_gain=exact_gain, exact_error=exact_error)
