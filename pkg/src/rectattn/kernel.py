"""Block-wise sparse attention in the input precision, via online softmax.

Each query block streams over its retained key blocks in ascending block index,
maintaining a running max, denominator, and weighted-V accumulator, so the
iteration order is canonical and repeated runs are bit-identical. Query blocks
are independent; ``RECTATTN_THREADS`` caps the thread pool that fans them out
(0 or unset mean auto).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import BlockGrid, check_matrix
from .errors import EmptyRowError, ShapeError


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    """Concatenated attention outputs plus per-video-token log softmax
    denominators over the retained set (diagnostic only; rectification never
    reads them)."""

    o_video: np.ndarray
    o_text: np.ndarray
    row_log_denominators: np.ndarray


def thread_count(n_tasks: int) -> int:
    raw = os.environ.get("RECTATTN_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def _query_block_pass(q_blk, k, v, retained, slices, inv_sqrt_d, dtype):
    """Online softmax of one query block over its retained key blocks."""
    b = q_blk.shape[0]
    run_max = np.full(b, -np.inf, dtype=dtype)
    denom = np.zeros(b, dtype=dtype)
    acc = np.zeros((b, v.shape[1]), dtype=dtype)
    ip_ops = 0
    for m in retained:
        sl = slices[m]
        k_blk = k[sl]
        scores = (q_blk @ k_blk.T) * inv_sqrt_d
        new_max = np.maximum(run_max, scores.max(axis=1))
        correction = np.exp(run_max - new_max)
        p = np.exp(scores - new_max[:, None])
        denom = denom * correction + p.sum(axis=1)
        acc = acc * correction[:, None] + p @ v[sl]
        run_max = new_max
        ip_ops += q_blk.shape[0] * k_blk.shape[0] * q_blk.shape[1]
    out = acc / denom[:, None]
    return out, np.log(denom.astype(np.float64)) + run_max.astype(np.float64), ip_ops


def block_sparse_attention(q_v: np.ndarray, k: np.ndarray, v: np.ndarray,
                           mask, grid: BlockGrid,
                           counters: dict | None = None):
    """Sparse attention over retained key blocks for all video query blocks.

    ``mask`` is a ``SparseMask`` or a boolean (N, M) array. Returns
    ``(o_video, row_log_denominators)``. When ``counters`` is given, the number
    of scalar inner-product multiply-adds spent on scores is accumulated under
    ``"inner_product_ops"``.
    """
    check_matrix(q_v, "q_v")
    check_matrix(k, "k")
    check_matrix(v, "v")
    block_mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    if block_mask.shape != (grid.n_q, grid.n_kv):
        raise ShapeError(f"mask shape {block_mask.shape} != (N, M) = {(grid.n_q, grid.n_kv)}")
    if q_v.shape[0] != grid.n_q * grid.block:
        raise ShapeError(f"q_v has {q_v.shape[0]} rows, expected N*B = {grid.n_q * grid.block}")
    if k.shape != v.shape:
        raise ShapeError(f"k shape {k.shape} != v shape {v.shape}")
    empty = ~block_mask.any(axis=1)
    if empty.any():
        raise EmptyRowError(f"mask rows {np.flatnonzero(empty).tolist()} retain no key block")

    dtype = q_v.dtype
    inv_sqrt_d = dtype.type(1.0 / math.sqrt(q_v.shape[1]))
    slices = grid.kv_block_slices()
    retained_per_row = [np.flatnonzero(block_mask[n]) for n in range(grid.n_q)]

    o_video = np.empty((q_v.shape[0], v.shape[1]), dtype=dtype)
    log_denoms = np.empty(q_v.shape[0], dtype=np.float64)

    def run_row(n):
        lo = n * grid.block
        q_blk = q_v[lo:lo + grid.block]
        return _query_block_pass(q_blk, k, v, retained_per_row[n], slices, inv_sqrt_d, dtype)

    workers = thread_count(grid.n_q)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_row, range(grid.n_q)))
    else:
        results = [run_row(n) for n in range(grid.n_q)]

    total_ip = 0
    for n, (out, ld, ip_ops) in enumerate(results):
        lo = n * grid.block
        o_video[lo:lo + grid.block] = out
        log_denoms[lo:lo + grid.block] = ld
        total_ip += ip_ops
    if counters is not None:
        counters["inner_product_ops"] = counters.get("inner_product_ops", 0) + total_ip
    return o_video, log_denoms


def text_full_attention(q_t: np.ndarray, k: np.ndarray, v: np.ndarray,
                        block: int = 128) -> np.ndarray:
    """Full attention for text queries, block-tiled over keys for cache
    efficiency; same contract as the full-attention oracle restricted to the
    text rows, computed in the input precision."""
    check_matrix(q_t, "q_t")
    check_matrix(k, "k")
    check_matrix(v, "v")
    if q_t.shape[1] != k.shape[1]:
        raise ShapeError(f"q_t width {q_t.shape[1]} != k width {k.shape[1]}")
    if k.shape != v.shape:
        raise ShapeError(f"k shape {k.shape} != v shape {v.shape}")
    if q_t.shape[0] == 0:
        return np.empty((0, v.shape[1]), dtype=q_t.dtype)

    dtype = q_t.dtype
    inv_sqrt_d = dtype.type(1.0 / math.sqrt(q_t.shape[1]))
    n_kv = k.shape[0]
    slices = [slice(s, min(s + block, n_kv)) for s in range(0, n_kv, block)]
    out = np.empty((q_t.shape[0], v.shape[1]), dtype=dtype)
    for lo in range(0, q_t.shape[0], block):
        q_blk = q_t[lo:lo + block]
        tile, _, _ = _query_block_pass(q_blk, k, v, range(len(slices)), slices,
                                       inv_sqrt_d, dtype)
        out[lo:lo + q_blk.shape[0]] = tile
    return out
