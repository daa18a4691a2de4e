"""RSAT tensor files: magic ``RSAT``, version u8=1, dtype u8 (0=f32, 1=f64),
rank u8, rank little-endian u64 dims, then row-major little-endian data."""

import struct
from pathlib import Path

import numpy as np

from .errors import IoError

MAGIC = b"RSAT"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_rsat(path, array: np.ndarray) -> None:
    """Write a float32/float64 array of any rank to an RSAT file (atomically)."""
    arr = np.asarray(array)
    if arr.dtype not in _CODE_FOR:
        raise IoError(f"RSAT stores float32/float64 only, got {arr.dtype}")
    path = Path(path)
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<BBB", VERSION, _CODE_FOR[arr.dtype], arr.ndim)
    payload += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        tmp.replace(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_rsat(path) -> np.ndarray:
    """Read an RSAT file back into a numpy array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 7 or raw[:4] != MAGIC:
        raise IoError(f"{path} is not an RSAT file")
    version, dtype_code, rank = struct.unpack_from("<BBB", raw, 4)
    if version != VERSION:
        raise IoError(f"{path}: unsupported RSAT version {version}")
    if dtype_code not in _DTYPE_CODES:
        raise IoError(f"{path}: unknown dtype code {dtype_code}")
    header_end = 7 + 8 * rank
    if len(raw) < header_end:
        raise IoError(f"{path}: truncated RSAT header")
    dims = struct.unpack_from(f"<{rank}Q", raw, 7)
    dtype = _DTYPE_CODES[dtype_code]
    count = 1
    for dim in dims:
        count *= dim
    expected = header_end + count * dtype.itemsize
    if len(raw) != expected:
        raise IoError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="))
