"""FFTN tensor files.

Layout (all little-endian)::

    b"FFTN"  magic
    0x01     version byte
    u32      rank
    u32 * rank  dims
    f32 * prod(dims)  row-major payload
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import DataIOError, TensorFormatError

MAGIC = b"FFTN"
VERSION = 1
_HEADER = len(MAGIC) + 1 + 4


def encode(array) -> bytes:
    arr = np.asarray(array, dtype="<f4", order="C")
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("refusing to write non-finite values")
    head = MAGIC + bytes([VERSION]) + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER:
        raise TensorFormatError(f"{source}: truncated header ({len(buf)} bytes, need {_HEADER})")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"{source}: bad magic {buf[:4]!r} at offset 0")
    if buf[4] != VERSION:
        raise TensorFormatError(f"{source}: unsupported version {buf[4]} at offset 4")
    (rank,) = struct.unpack_from("<I", buf, 5)
    dims_end = _HEADER + 4 * rank
    if len(buf) < dims_end:
        raise TensorFormatError(f"{source}: rank {rank} needs dims up to offset {dims_end}, file has {len(buf)} bytes")
    dims = struct.unpack_from(f"<{rank}I", buf, _HEADER)
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    want = dims_end + 4 * n
    if len(buf) != want:
        raise TensorFormatError(
            f"{source}: payload starting at offset {dims_end} should end at {want}, file ends at {len(buf)}"
        )
    return np.reshape(np.frombuffer(buf, dtype="<f4", count=n, offset=dims_end), tuple(dims)).copy()


def write_tensor(path, array) -> bytes:
    data = encode(array)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return data


def read_tensor(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    return decode(buf, str(path))


def git_blob_hash(data: bytes) -> str:
    """Content hash as ``git hash-object`` computes it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
