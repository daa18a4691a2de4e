"""Dense containers, block partitioning, uniform pooling, and brute-force attention oracles.

Conventions used throughout the package:

* matrices are 2-D ``numpy`` arrays, float32 or float64, row-major;
* video tokens occupy rows ``[0, T_v)`` of K and V, text tokens ``[T_v, T_v + T_t)``;
* video query blocks always have exactly ``B`` tokens, the final text block may be
  ragged and is pooled over its actual length;
* every softmax is max-subtracted, and oracles accumulate in double precision
  regardless of the input precision.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlockSizeError, EmptyRowError, MissingGridError, ShapeError

SUPPORTED_DTYPES = (np.float32, np.float64)


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate a 2-D float32/float64 array with finite entries and return it."""
    if not isinstance(x, np.ndarray) or x.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D numpy array, got {type(x).__name__}")
    if x.dtype not in SUPPORTED_DTYPES:
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")
    if x.size and not np.isfinite(x).all():
        raise ShapeError(f"{name} contains non-finite entries")
    return x


def as_matrix(data, precision: str = "double") -> np.ndarray:
    """Build a validated matrix from nested data with an explicit precision tag."""
    if precision not in ("single", "double"):
        raise ShapeError(f"unknown precision tag {precision!r}")
    dtype = np.float32 if precision == "single" else np.float64
    return check_matrix(np.asarray(data, dtype=dtype), "matrix")


@dataclass(frozen=True, eq=False)
class AttentionProblem:
    """One single-head attention call with a video/text split and block geometry.

    ``k`` and ``v`` hold video rows first, then text rows. ``grid_dims`` is the
    optional (t, h, w) token-grid shape of the video tokens in row-major order,
    needed only for Morton reordering.
    """

    q_video: np.ndarray
    q_text: np.ndarray
    k: np.ndarray
    v: np.ndarray
    d: int
    block: int
    grid_dims: tuple[int, int, int] | None = None

    def __post_init__(self):
        check_matrix(self.q_video, "q_video")
        check_matrix(self.q_text, "q_text")
        check_matrix(self.k, "k")
        check_matrix(self.v, "v")
        for name in ("q_video", "q_text", "k", "v"):
            if getattr(self, name).shape[1] != self.d:
                raise ShapeError(f"{name} has width {getattr(self, name).shape[1]}, expected d={self.d}")
        if self.k.shape[0] != self.t_v + self.t_t or self.v.shape[0] != self.t_v + self.t_t:
            raise ShapeError("k/v row counts must equal T_v + T_t")
        if self.block <= 0:
            raise BlockSizeError(f"block size must be positive, got {self.block}")
        if self.t_v % self.block != 0:
            raise BlockSizeError(f"T_v={self.t_v} is not divisible by block size {self.block}")
        dtypes = {m.dtype for m in (self.q_video, self.q_text, self.k, self.v)}
        if len(dtypes) != 1:
            raise ShapeError(f"q/k/v dtypes disagree: {sorted(str(t) for t in dtypes)}")
        if self.grid_dims is not None:
            t, h, w = self.grid_dims
            if t * h * w != self.t_v:
                raise ShapeError(f"grid_dims product {t * h * w} != T_v={self.t_v}")

    @property
    def t_v(self) -> int:
        return self.q_video.shape[0]

    @property
    def t_t(self) -> int:
        return self.q_text.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.q_video.dtype


@dataclass(frozen=True)
class BlockGrid:
    """Block decomposition of a problem: N query blocks, M key/value blocks."""

    n_q: int
    n_kv: int
    block: int
    text_block_start: int
    last_text_block_len: int

    def kv_block_lengths(self) -> list[int]:
        """Token count of every K/V block, video blocks first; only the final
        text block may be shorter than ``block``."""
        lens = [self.block] * self.n_q
        n_text = self.n_kv - self.n_q
        if n_text:
            lens += [self.block] * (n_text - 1) + [self.last_text_block_len]
        return lens

    def kv_block_slices(self) -> list[slice]:
        out, start = [], 0
        for length in self.kv_block_lengths():
            out.append(slice(start, start + length))
            start += length
        return out

    @property
    def t_text(self) -> int:
        n_text = self.n_kv - self.n_q
        return 0 if n_text == 0 else (n_text - 1) * self.block + self.last_text_block_len


@dataclass(frozen=True, eq=False)
class PooledSet:
    """Uniformly pooled representations used by the implicit-attention path.

    ``k_mix_pool`` is the mixed-granularity key sequence: pooled video key
    blocks followed by the raw text key rows.
    """

    q_pool: np.ndarray
    k_v_pool: np.ndarray
    v_pool: np.ndarray
    k_mix_pool: np.ndarray


def partition(problem: AttentionProblem) -> BlockGrid:
    """Derive the block grid of a problem: N = T_v / B, M = N + ceil(T_t / B)."""
    b = problem.block
    if b <= 0:
        raise BlockSizeError(f"block size must be positive, got {b}")
    if problem.t_v % b != 0:
        raise BlockSizeError(f"T_v={problem.t_v} is not divisible by block size {b}")
    n_q = problem.t_v // b
    n_text = -(-problem.t_t // b)
    last = problem.t_t - (n_text - 1) * b if n_text else 0
    return BlockGrid(n_q=n_q, n_kv=n_q + n_text, block=b,
                     text_block_start=n_q, last_text_block_len=last)


def block_pool(x: np.ndarray, block_lens: list[int]) -> np.ndarray:
    """Arithmetic mean of each row block, in double precision.

    Column sums use exactly rounded accumulation (``math.fsum``), so pooling is
    bitwise permutation-invariant within a block, and a homogeneous block pools
    to exactly its row whenever the block length is a power of two (within one
    ulp otherwise).
    """
    check_matrix(x, "x")
    if any(n < 1 for n in block_lens):
        raise ShapeError(f"block lengths must be >= 1, got {block_lens}")
    if sum(block_lens) != x.shape[0]:
        raise ShapeError(f"block lengths sum to {sum(block_lens)}, but x has {x.shape[0]} rows")
    out = np.empty((len(block_lens), x.shape[1]), dtype=np.float64)
    start = 0
    for m, length in enumerate(block_lens):
        rows = np.ascontiguousarray(x[start:start + length].T, dtype=np.float64)
        for c in range(x.shape[1]):
            out[m, c] = math.fsum(rows[c].tolist()) / length
        start += length
    return out


def block_sums(x: np.ndarray, block_lens: list[int]) -> np.ndarray:
    """Exactly rounded column sums per row block (double precision)."""
    check_matrix(x, "x")
    if sum(block_lens) != x.shape[0]:
        raise ShapeError(f"block lengths sum to {sum(block_lens)}, but x has {x.shape[0]} rows")
    out = np.empty((len(block_lens), x.shape[1]), dtype=np.float64)
    start = 0
    for m, length in enumerate(block_lens):
        rows = np.ascontiguousarray(x[start:start + length].T, dtype=np.float64)
        for c in range(x.shape[1]):
            out[m, c] = math.fsum(rows[c].tolist())
        start += length
    return out


def pool_problem(problem: AttentionProblem, grid: BlockGrid) -> PooledSet:
    """Pool a problem per block: Q/K video blocks, all V blocks, and the
    mixed-granularity key sequence (pooled video keys + raw text keys)."""
    video_lens = [grid.block] * grid.n_q
    q_pool = block_pool(problem.q_video, video_lens)
    k_v_pool = block_pool(problem.k[:problem.t_v], video_lens)
    v_pool = block_pool(problem.v, grid.kv_block_lengths())
    k_text = problem.k[problem.t_v:].astype(np.float64)
    k_mix_pool = np.concatenate([k_v_pool, k_text], axis=0)
    return PooledSet(q_pool=q_pool, k_v_pool=k_v_pool, v_pool=v_pool, k_mix_pool=k_mix_pool)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Max-subtracted row softmax in the dtype of ``scores``."""
    shift = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - shift)
    return e / e.sum(axis=1, keepdims=True)


def full_attention_oracle(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Reference full attention, double precision: row-softmax(q kᵀ / √d) and its
    product with v. Returns ``(weights, output)``."""
    check_matrix(q, "q")
    check_matrix(k, "k")
    check_matrix(v, "v")
    if q.shape[1] != k.shape[1] or k.shape[1] != v.shape[1]:
        raise ShapeError(f"q/k/v widths disagree: {q.shape[1]}, {k.shape[1]}, {v.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k has {k.shape[0]} rows but v has {v.shape[0]}")
    q64 = q.astype(np.float64)
    k64 = k.astype(np.float64)
    scores = (q64 @ k64.T) / math.sqrt(q.shape[1])
    weights = softmax_rows(scores)
    return weights, weights @ v.astype(np.float64)


def masked_attention_oracle(q_v: np.ndarray, k: np.ndarray, v: np.ndarray,
                            mask, grid: BlockGrid):
    """Reference block-masked attention, double precision.

    Scores of excluded blocks are treated as -inf before the softmax, so the
    weights of excluded tokens are exactly zero. Returns ``(weights, output)``.
    """
    check_matrix(q_v, "q_v")
    check_matrix(k, "k")
    check_matrix(v, "v")
    block_mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    if block_mask.shape != (grid.n_q, grid.n_kv):
        raise ShapeError(f"mask shape {block_mask.shape} != (N, M) = {(grid.n_q, grid.n_kv)}")
    empty = ~block_mask.any(axis=1)
    if empty.any():
        raise EmptyRowError(f"mask rows {np.flatnonzero(empty).tolist()} retain no key block")
    if q_v.shape[0] != grid.n_q * grid.block:
        raise ShapeError(f"q_v has {q_v.shape[0]} rows, expected N*B = {grid.n_q * grid.block}")

    token_mask = np.zeros((grid.n_q, k.shape[0]), dtype=bool)
    for m, sl in enumerate(grid.kv_block_slices()):
        token_mask[:, sl] = block_mask[:, m][:, None]
    token_mask = np.repeat(token_mask, grid.block, axis=0)

    q64 = q_v.astype(np.float64)
    k64 = k.astype(np.float64)
    scores = (q64 @ k64.T) / math.sqrt(q_v.shape[1])
    scores[~token_mask] = -np.inf
    shift = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - shift)
    e[~token_mask] = 0.0
    weights = e / e.sum(axis=1, keepdims=True)
    return weights, weights @ v.astype(np.float64)


# Morton codes interleave the (t, h, w) coordinate bits with w in the lowest
# position, so row-major order and Morton order agree on 2x2 slices.

def _part1by2(n: int) -> int:
    n &= 0x1FFFFF
    n = (n | (n << 32)) & 0x1F00000000FFFF
    n = (n | (n << 16)) & 0x1F0000FF0000FF
    n = (n | (n << 8)) & 0x100F00F00F00F00F
    n = (n | (n << 4)) & 0x10C30C30C30C30C3
    n = (n | (n << 2)) & 0x1249249249249249
    return n


def morton_code_3d(t: int, y: int, x: int) -> int:
    return (_part1by2(t) << 2) | (_part1by2(y) << 1) | _part1by2(x)


def morton_permutation(grid_dims: tuple[int, int, int]) -> np.ndarray:
    """Permutation ``p`` such that ``tokens[p]`` is in 3-D Morton (Z-order)."""
    t, h, w = grid_dims
    codes = np.empty(t * h * w, dtype=np.uint64)
    i = 0
    for tt in range(t):
        for yy in range(h):
            for xx in range(w):
                codes[i] = morton_code_3d(tt, yy, xx)
                i += 1
    return np.argsort(codes, kind="stable")


def reorder_morton(problem: AttentionProblem):
    """Permute the video tokens of Q/K/V into Morton order over (t, h, w).

    Text rows are untouched. Returns ``(reordered_problem, permutation)`` where
    ``permutation[i]`` is the original row index now at video row ``i``; apply
    the inverse permutation to outputs (or rows) to undo the reordering.
    """
    if problem.grid_dims is None:
        raise MissingGridError("reorder_morton needs grid_dims on the problem")
    perm = morton_permutation(problem.grid_dims)
    t_v = problem.t_v

    def permute(x):
        out = x.copy()
        out[:t_v] = x[:t_v][perm]
        return out

    reordered = AttentionProblem(
        q_video=problem.q_video[perm],
        q_text=problem.q_text.copy(),
        k=permute(problem.k),
        v=permute(problem.v),
        d=problem.d,
        block=problem.block,
        grid_dims=problem.grid_dims,
    )
    return reordered, perm


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    return inv
