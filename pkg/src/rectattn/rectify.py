"""Attention bias rectification and the end-to-end sparse attention pipeline.

Critical blocks are rescaled by per-query-block factors taken from the implicit
full attention; non-critical blocks marked by the compensation mask are
recovered from pooled weights times pooled values. Every variant shares every
stage except the rectification step, so A/B differences measure rectification
alone.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .core import AttentionProblem, BlockGrid, PooledSet, partition, pool_problem
from .errors import ConfigError, ShapeError
from .ipar import ImplicitAttention, implicit_full_attention
from .kernel import AttentionOutput, block_sparse_attention, text_full_attention
from .masks import (CompensationMask, SparseMask, SparsityConfig, all_true_mask,
                    build_sparse_mask, compensation_mask, gain_error,
                    pooled_scores)

VARIANTS = ("full", "sparse-unrectified", "sparse-rectified",
            "sparse-rectified-no-gapr", "compensate-all")


@dataclass(frozen=True, eq=False)
class RectificationFactors:
    """Per-query-block scalars: the implicit-attention mass of the retained set."""

    r: np.ndarray


@dataclass
class PipelineAccounting:
    """Operation counts (see metrics for the FLOP convention) and stage timings."""

    stage_ops: dict = field(default_factory=dict)
    kernel_inner_product_ops: int = 0
    stage_wall_ms: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PipelineResult:
    output: AttentionOutput
    factors: RectificationFactors
    implicit: ImplicitAttention
    sparse_mask: SparseMask
    comp_mask: CompensationMask
    accounting: PipelineAccounting
    grid: BlockGrid
    pooled: PooledSet
    variant: str


def rectification_factors(a_pool: np.ndarray, mask) -> RectificationFactors:
    """Retained-set mass per row, computed as one minus the excluded mass so a
    full mask yields exactly 1.0 (rows of a_pool are distributions)."""
    block_mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    if block_mask.shape != a_pool.shape:
        raise ShapeError(f"mask shape {block_mask.shape} != a_pool shape {a_pool.shape}")
    excluded = np.where(block_mask, 0.0, a_pool).sum(axis=1)
    return RectificationFactors(r=1.0 - excluded)


def apply_rectification(o_v: np.ndarray, factors: RectificationFactors,
                        implicit: ImplicitAttention, sparse: SparseMask,
                        comp: CompensationMask, v_pool: np.ndarray,
                        grid: BlockGrid) -> np.ndarray:
    """Rescale each video token row by its block's factor and add pooled-value
    compensation on non-critical compensable blocks.

    The pooled-value product realizes the token-level remap of block weights:
    replicating a block weight along the query dimension and spreading it
    uniformly along the key dimension contributes a_pool[n, m] * v_pool[m] to
    every query row of block n.
    """
    if o_v.shape[0] != grid.n_q * grid.block:
        raise ShapeError(f"o_v has {o_v.shape[0]} rows, expected {grid.n_q * grid.block}")
    if v_pool.shape != (grid.n_kv, o_v.shape[1]):
        raise ShapeError(f"v_pool shape {v_pool.shape} != {(grid.n_kv, o_v.shape[1])}")
    r_rows = np.repeat(factors.r, grid.block)
    out = o_v * r_rows[:, None]
    applied = ~sparse.mask & comp.mask
    if applied.any():
        comp_weights = np.where(applied, implicit.a_pool, 0.0)
        comp_rows = comp_weights @ v_pool
        out = out + np.repeat(comp_rows, grid.block, axis=0)
    return out.astype(o_v.dtype)


def check_result_invariants(result: PipelineResult, tol: float = 1e-6) -> bool:
    """Re-assertable invariants: factor range, implied row mass, non-empty rows."""
    r = result.factors.r
    if not ((r > 0).all() and (r <= 1.0 + tol).all()):
        return False
    applied = ~result.sparse_mask.mask & result.comp_mask.mask
    implied = r + np.where(applied, result.implicit.a_pool, 0.0).sum(axis=1)
    if not (implied <= 1.0 + tol).all():
        return False
    if not result.sparse_mask.mask.any(axis=1).all():
        return False
    rows = result.implicit.a_pool.sum(axis=1)
    return bool(np.abs(rows - 1.0).max() <= tol)


def rectified_attention_pipeline(problem: AttentionProblem, config: SparsityConfig,
                                 variant: str = "sparse-rectified") -> PipelineResult:
    """Run the whole pipeline: pool, implicit full attention, gain/error and
    compensation mask, sparse mask, sparse kernel plus text full attention,
    then the variant's rectification step.

    Variants: ``full`` (all-true mask, no rectification), ``sparse-unrectified``
    (skip rectification), ``sparse-rectified`` (factors + gated compensation),
    ``sparse-rectified-no-gapr`` (factors only), ``compensate-all`` (factors +
    compensation on every non-critical block).
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    acct = PipelineAccounting()
    clock = time.perf_counter

    t0 = clock()
    grid = partition(problem)
    pooled = pool_problem(problem, grid)
    acct.stage_wall_ms["pool"] = (clock() - t0) * 1e3

    t0 = clock()
    implicit = implicit_full_attention(problem, pooled, grid)
    acct.stage_wall_ms["implicit"] = (clock() - t0) * 1e3

    t0 = clock()
    scores = pooled_scores(pooled, grid, problem.d)
    ge = gain_error(problem, pooled, grid, scores_pool=scores)
    acct.stage_wall_ms["gain_error"] = (clock() - t0) * 1e3

    t0 = clock()
    if variant == "full":
        sparse = all_true_mask(grid)
    else:
        sparse = build_sparse_mask(implicit.a_pool, config, grid)
    comp = compensation_mask(ge.gain, ge.error, sparse)
    acct.stage_wall_ms["masks"] = (clock() - t0) * 1e3

    t0 = clock()
    counters: dict = {}
    o_video, log_denoms = block_sparse_attention(
        problem.q_video, problem.k, problem.v, sparse, grid, counters=counters)
    acct.kernel_inner_product_ops = counters.get("inner_product_ops", 0)
    acct.stage_wall_ms["sparse_kernel"] = (clock() - t0) * 1e3

    t0 = clock()
    o_text = text_full_attention(problem.q_text, problem.k, problem.v, block=problem.block)
    acct.stage_wall_ms["text_attention"] = (clock() - t0) * 1e3

    t0 = clock()
    factors = rectification_factors(implicit.a_pool, sparse)
    if variant in ("full", "sparse-unrectified"):
        o_rect = o_video
    else:
        if variant == "sparse-rectified":
            comp_used = comp
        elif variant == "sparse-rectified-no-gapr":
            comp_used = CompensationMask(mask=np.zeros_like(comp.mask))
        else:  # compensate-all
            comp_used = CompensationMask(mask=np.ones_like(comp.mask))
        o_rect = apply_rectification(o_video, factors, implicit, sparse, comp_used,
                                     pooled.v_pool, grid)
    acct.stage_wall_ms["rectify"] = (clock() - t0) * 1e3

    acct.stage_ops = _stage_op_counts(grid, problem.d)
    output = AttentionOutput(o_video=o_rect, o_text=o_text,
                             row_log_denominators=log_denoms)
    return PipelineResult(output=output, factors=factors, implicit=implicit,
                          sparse_mask=sparse, comp_mask=comp, accounting=acct,
                          grid=grid, pooled=pooled, variant=variant)


def _stage_op_counts(grid: BlockGrid, d: int) -> dict:
    """Multiply-add counts of the pooled path per stage (2 ops per MAC,
    4 ops per softmax element)."""
    n, m, b = grid.n_q, grid.n_kv, grid.block
    t_v = n * b
    t_t = grid.t_text
    t = t_v + t_t
    return {
        "pooling": 2 * d * (2 * t_v + t + t_t),
        "pooled_softmax": 2 * n * (n + t_t) * d + 4 * n * (n + t_t)
                          + 2 * n * (n + t_t) + n * t_t,
        "gain_error": 2 * n * m * d + 2 * n * m + 2 * (n + m) * d
                      + 4 * n * m * d + 3 * n * m + n * m,
        "compensation": n * m + 2 * n * m * d + 2 * t_v * d + n * m,
    }
