"""Rank-4 float32 tensors and the ``FTNSR`` tensor file format.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 and shape
``(n, c, h, w)``; :func:`as_tensor` is the single validation point.

File layout (all integers little-endian)::

    offset  size  field
    0       5     magic  b"FTNSR"
    5       2     version (u16) = 1
    7       1     dtype   (u8)  = 0  -> float32
    8       1     rank    (u8)  = 4
    9       16    dims    4 x u32
    25      4*n   payload, float32 LE, row-major (w fastest)
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    TensorFileError,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
)

MAGIC = b"FTNSR"
VERSION = 1
DTYPE_F32 = 0
RANK = 4

_HEADER = struct.Struct("<5sHBB4I")
HEADER_SIZE = _HEADER.size  # 25


def as_tensor(a, copy: bool = False) -> np.ndarray:
    """Return ``a`` as a C-contiguous rank-4 float32 array.

    Raises ``ValueError`` for anything that is not rank 4 with positive dims.
    """
    t = np.ascontiguousarray(a, dtype=np.float32)
    if copy and t is a:
        t = t.copy()
    if t.ndim != RANK:
        raise ValueError(f"tensor must be rank 4 (n, c, h, w), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ValueError(f"tensor dims must be positive, got {t.shape}")
    return t


def tensor_to_bytes(t) -> bytes:
    t = as_tensor(t)
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, RANK, *t.shape)
    return header + t.astype("<f4", copy=False).tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 5 or buf[:5] != MAGIC:
        if len(buf) < 5 and MAGIC.startswith(bytes(buf)):
            raise TruncatedPayload("header truncated", len(buf))
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:5])!r}", 0)
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayload(f"header needs {HEADER_SIZE} bytes, file has {len(buf)}", len(buf))
    _, version, dtype, rank, *dims = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}", 5)
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"unsupported dtype code {dtype}", 7)
    if rank != RANK:
        raise UnsupportedDtype(f"unsupported rank {rank}", 8)
    for i, d in enumerate(dims):
        if d == 0:
            raise TensorFileError("dims must be positive", 9 + 4 * i)
    count = int(np.prod(dims, dtype=np.int64))
    need = HEADER_SIZE + 4 * count
    if len(buf) < need:
        raise TruncatedPayload(f"payload needs {4 * count} bytes, file has {len(buf) - HEADER_SIZE}", len(buf))
    if len(buf) > need:
        raise TensorFileError(f"{len(buf) - need} trailing bytes after payload", need)
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER_SIZE)
    return data.astype(np.float32).reshape(dims)


def tensor_read(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read tensor file {os.fspath(path)}: {exc.strerror}") from exc
    return tensor_from_bytes(buf)


def tensor_write(t, path) -> None:
    data = tensor_to_bytes(t)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as exc:
        raise IoFailure(f"cannot write tensor file {os.fspath(path)}: {exc.strerror}") from exc


def channel_sum(x) -> np.ndarray:
    """Sum over the channel axis, accumulating channels in ascending order.

    The explicit loop pins the summation order so results are reproducible
    bit for bit (``np.sum`` may reorder).
    """
    x = as_tensor(x)
    acc = x[:, 0:1].copy()
    for c in range(1, x.shape[1]):
        acc += x[:, c : c + 1]
    return acc


def pad2d(x, pad: int) -> np.ndarray:
    """Zero-pad both spatial axes by ``pad`` on every side."""
    if pad < 0:
        raise ValueError(f"pad must be non-negative, got {pad}")
    x = as_tensor(x)
    if pad == 0:
        return x.copy()
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out
