"""Alignment metrics, sparsity/FLOP accounting, and denominator diagnostics.

FLOP convention, fixed across the package: a multiply-accumulate costs 2
operations and a softmax costs 4 per element (exp + max-subtract + divide
amortized); only ratios are ever asserted, so any consistent convention works.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import AttentionProblem, BlockGrid, PooledSet
from .errors import ShapeError, ZeroReferenceError, ZeroVectorError
from .masks import SparseMask, gain_error, pooled_scores
from .rectify import _stage_op_counts


@dataclass
class AlignmentReport:
    """One experiment variant's alignment and cost summary."""

    variant: str
    normalized_l1: float
    cosine_similarity: float
    sparsity: float
    flops_full: int
    flops_sparse: int
    flops_overhead: int
    wall_time_ms: dict = field(default_factory=dict)
    gapr_agreement: float | None = None
    checks_passed: bool = True


@dataclass(frozen=True, eq=False)
class DenominatorReport:
    """Per-video-token softmax denominators, true vs pooled, and the fraction
    within a relative threshold of each other."""

    s_sum: np.ndarray
    s_sum_pool: np.ndarray
    satisfied_fraction: float
    tau: float


def normalized_l1(test: np.ndarray, reference: np.ndarray) -> float:
    """Sum of absolute differences normalized by the reference magnitude."""
    test = np.asarray(test, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if test.shape != reference.shape:
        raise ShapeError(f"shapes disagree: {test.shape} vs {reference.shape}")
    denom = np.abs(reference).sum()
    if denom == 0.0:
        raise ZeroReferenceError("reference matrix is all zero")
    return float(np.abs(test - reference).sum() / denom)


def cosine_similarity(test: np.ndarray, reference: np.ndarray) -> float:
    """Cosine of the flattened matrices."""
    a = np.asarray(test, dtype=np.float64).ravel()
    b = np.asarray(reference, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"shapes disagree: {test.shape} vs {reference.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def sparsity_and_flops(mask: SparseMask, grid: BlockGrid, d: int):
    """Sparsity ratio (block computations removed relative to full attention)
    plus FLOP counts for the dense path, the sparse path, and the pooled-path
    overhead (pooling, pooled softmax, gain/error, compensation)."""
    n, m, b = grid.n_q, grid.n_kv, grid.block
    block_mask = np.asarray(mask.mask, dtype=bool)
    retained = int(block_mask.sum())
    t_v = n * b
    t = t_v + grid.t_text
    sparsity = 1.0 - retained / (n * m)
    flops_full = 4 * t_v * t * d
    # retained pairs cost B * len_m each; a ragged final text block counts its
    # actual tokens so flops_sparse == flops_full exactly for the all-true mask
    lens = np.asarray(grid.kv_block_lengths(), dtype=np.int64)
    flops_sparse = int(4 * b * d * (block_mask * lens[None, :]).sum())
    flops_overhead = sum(_stage_op_counts(grid, d).values())
    return sparsity, flops_full, flops_sparse, flops_overhead


def denominator_equivalence_report(problem: AttentionProblem, pooled: PooledSet,
                                   grid: BlockGrid, tau: float = 0.05) -> DenominatorReport:
    """Compare the true softmax denominator of every video query token against
    its pooled counterpart, shifting both by the same per-token max."""
    if pooled.q_pool.shape != (grid.n_q, problem.d):
        raise ShapeError(f"q_pool shape {pooled.q_pool.shape} != {(grid.n_q, problem.d)}")
    lens = np.asarray(grid.kv_block_lengths(), dtype=np.float64)
    s_pool = pooled_scores(pooled, grid, problem.d)
    inv_sqrt_d = 1.0 / math.sqrt(problem.d)
    k64 = problem.k.astype(np.float64)

    s_sum = np.empty(problem.t_v, dtype=np.float64)
    s_sum_pool = np.empty(problem.t_v, dtype=np.float64)
    b = grid.block
    for n in range(grid.n_q):
        q_blk = problem.q_video[n * b:(n + 1) * b].astype(np.float64)
        scores = (q_blk @ k64.T) * inv_sqrt_d
        shift = np.maximum(scores.max(axis=1), s_pool[n].max())
        s_sum[n * b:(n + 1) * b] = np.exp(scores - shift[:, None]).sum(axis=1)
        pooled_terms = (lens[None, :] * np.exp(s_pool[n][None, :] - shift[:, None])).sum(axis=1)
        s_sum_pool[n * b:(n + 1) * b] = pooled_terms
    satisfied = np.abs(s_sum - s_sum_pool) < tau * np.abs(s_sum)
    return DenominatorReport(s_sum=s_sum, s_sum_pool=s_sum_pool,
                             satisfied_fraction=float(satisfied.mean()), tau=tau)


def gapr_condition_agreement(problem: AttentionProblem, pooled: PooledSet,
                             grid: BlockGrid) -> float:
    """Fraction of blocks where the relaxed compensation condition agrees with
    the exact softmax-form condition (per-token-pair absolute sums against
    brute-force full attention)."""
    ge = gain_error(problem, pooled, grid, with_exact=True)
    relaxed = ge.gain > ge.error
    exact = ge.exact_gain > ge.exact_error
    return float((relaxed == exact).mean())
