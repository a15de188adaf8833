"""Validated float64 arrays and the LTSR binary tensor format.

LTSR layout (all little-endian)::

    b"LTSR1" | u32 rank | u32 dims[rank] | f64 data[prod(dims)]  (row-major)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import DimMismatch, LarenError, NonFiniteError

MAX_RANK = 4
MAGIC = b"LTSR1"


def as_tensor(x, *, allow_nonfinite: bool = False) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array after checking the tensor invariants."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim > MAX_RANK:
        raise DimMismatch(f"rank {arr.ndim} exceeds {MAX_RANK}")
    if any(d <= 0 for d in arr.shape):
        raise DimMismatch(f"dims must be positive, got {arr.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


def encode_ltsr(x) -> bytes:
    arr = as_tensor(x)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f8").tobytes(order="C")


def decode_ltsr(buf: bytes) -> np.ndarray:
    if buf[:5] != MAGIC:
        raise LarenError("not an LTSR tensor (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 5)
    if not 1 <= rank <= MAX_RANK:
        raise DimMismatch(f"bad LTSR rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", buf, 9)
    offset = 9 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != offset + 8 * count:
        raise DimMismatch(f"LTSR payload size does not match dims {dims}")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return as_tensor(arr.reshape(dims).astype(np.float64))


def save_ltsr(path: str | os.PathLike, x) -> None:
    Path(path).write_bytes(encode_ltsr(x))


def load_ltsr(path: str | os.PathLike) -> np.ndarray:
    return decode_ltsr(Path(path).read_bytes())
