"""GEMM convolution, AoI masks and the block-aligned focused convolution.

Both convolution paths unroll the input into a patch matrix (one row per
output position) and reduce it against the flattened filters with the same
fixed-order K loop, so an output element computed by :func:`focused_conv`
is bit-identical to the one :func:`dense_conv` produces.  BLAS is avoided
on purpose: its blocking changes the accumulation order with matrix size.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ChannelMismatch, IoFailure, MaskShapeMismatch, ShapeMismatch
from .tensor import as_tensor, pad2d

DEFAULT_BLOCK_SIZE = 8


@dataclass(frozen=True)
class ConvParams:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def patch_len(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    @property
    def macs_per_slot(self) -> int:
        return self.out_channels * self.patch_len

    def out_dims(self, h: int, w: int) -> tuple[int, int]:
        """Output spatial dims for an ``h x w`` input; raises if empty."""
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(
                f"{self.kernel_h}x{self.kernel_w} kernel with padding {self.padding} "
                f"does not fit a {h}x{w} input"
            )
        return oh, ow


@dataclass(frozen=True)
class BlockConfig:
    """Number of consecutive output positions processed as one unit."""

    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if int(self.block_size) < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")

    @classmethod
    def default(cls) -> "BlockConfig":
        """Block config honouring the ``FOCAL_BLOCK_SIZE`` override."""
        env = os.environ.get("FOCAL_BLOCK_SIZE")
        return cls(int(env)) if env else cls()


@dataclass(frozen=True, eq=False)
class AoiMask:
    """Binary relevance grid at some layer's output resolution."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or min(bits.shape) < 1:
            raise ValueError(f"mask must be a non-empty 2-D grid, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            if not np.isin(bits, (0, 1)).all():
                raise ValueError("mask values must be binary")
            bits = bits.astype(bool)
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def full(cls, h: int, w: int, value: bool = True) -> "AoiMask":
        return cls(np.full((h, w), value, dtype=bool))

    @property
    def h(self) -> int:
        return self.bits.shape[0]

    @property
    def w(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def fraction(self) -> float:
        return self.count() / self.bits.size

    def issubset(self, other: "AoiMask") -> bool:
        return self.shape == other.shape and not (self.bits & ~other.bits).any()

    def __eq__(self, other):
        if not isinstance(other, AoiMask):
            return NotImplemented
        return self.shape == other.shape and bool((self.bits == other.bits).all())

    def __repr__(self):
        return f"AoiMask({self.h}x{self.w}, fraction={self.fraction():.3f})"


class MacCounter:
    """Accumulates multiply-accumulates actually executed by the kernels."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


# -- patch extraction --------------------------------------------------------


def _check_input(x, p: ConvParams) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[1] != p.in_channels:
        raise ChannelMismatch(f"input has {x.shape[1]} channels, conv expects {p.in_channels}")
    return x


def _windows(img: np.ndarray, p: ConvParams) -> np.ndarray:
    """Strided view (c, out_h, out_w, kh, kw) over one padded image."""
    oh, ow = p.out_dims(img.shape[1], img.shape[2])
    xp = pad2d(img[None], p.padding)[0]
    win = sliding_window_view(xp, (p.kernel_h, p.kernel_w), axis=(1, 2))
    return win[:, :: p.stride, :: p.stride][:, :oh, :ow]


def _patches_t(img: np.ndarray, p: ConvParams, positions=None) -> np.ndarray:
    """Transposed patch matrix (K, S) for the given flat output positions.

    ``positions=None`` means every output position in raster order.  K is
    ordered channel-major, then kernel row, then kernel column.
    """
    if positions is None:
        win = _windows(img, p)
        return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(p.patch_len, -1)
    # gather only the requested columns straight from the flat padded image
    _, ow = p.out_dims(img.shape[1], img.shape[2])
    xp = pad2d(img[None], p.padding)[0]
    c, hp, wp = xp.shape
    tap = (
        np.arange(c)[:, None, None] * (hp * wp)
        + np.arange(p.kernel_h)[None, :, None] * wp
        + np.arange(p.kernel_w)[None, None, :]
    ).reshape(-1)
    origin = (positions // ow) * (p.stride * wp) + (positions % ow) * p.stride
    return np.take(xp.reshape(-1), tap[:, None] + origin[None, :])


def im2col(x, p: ConvParams) -> np.ndarray:
    """Patch matrix of shape (out_h*out_w, in_channels*kh*kw) for a batch-1 input."""
    x = _check_input(x, p)
    if x.shape[0] != 1:
        raise ShapeMismatch(f"im2col expects batch 1, got {x.shape[0]}")
    return np.ascontiguousarray(_patches_t(x[0], p).T)


def _gemm(wmat: np.ndarray, pt: np.ndarray, counter: MacCounter | None) -> np.ndarray:
    """(OC, K) x (K, S) product, each element accumulated k = 0, 1, ..., K-1."""
    oc, k = wmat.shape
    s = pt.shape[1]
    if s == 0:
        return np.zeros((oc, 0), dtype=np.float32)
    wcols = np.ascontiguousarray(wmat.T)[:, :, None]  # (K, OC, 1)
    prows = pt[:, None, :]  # (K, 1, S)
    acc = wcols[0] * prows[0]
    tmp = np.empty_like(acc)
    for wc, pr in zip(wcols[1:], prows[1:]):
        np.multiply(wc, pr, out=tmp)
        np.add(acc, tmp, out=acc)
    if counter is not None:
        counter.add(acc.size * k)
    return acc


def _check_weights(weights, bias, p: ConvParams):
    w = np.ascontiguousarray(weights, dtype=np.float32)
    expect = (p.out_channels, p.in_channels, p.kernel_h, p.kernel_w)
    if w.shape != expect:
        raise ShapeMismatch(f"weights have shape {w.shape}, expected {expect}")
    b = np.ascontiguousarray(bias, dtype=np.float32).reshape(-1)
    if b.size != p.out_channels:
        raise ShapeMismatch(f"bias has {b.size} entries, expected {p.out_channels}")
    return w.reshape(p.out_channels, -1), b[:, None]


def dense_conv(x, weights, bias, p: ConvParams, counter: MacCounter | None = None) -> np.ndarray:
    x = _check_input(x, p)
    wmat, b = _check_weights(weights, bias, p)
    oh, ow = p.out_dims(x.shape[2], x.shape[3])
    out = np.empty((x.shape[0], p.out_channels, oh, ow), dtype=np.float32)
    for n in range(x.shape[0]):
        acc = _gemm(wmat, _patches_t(x[n], p), counter)
        out[n] = (acc + b).reshape(p.out_channels, oh, ow)
    return out


def focused_conv(
    x,
    weights,
    bias,
    p: ConvParams,
    mask: AoiMask,
    block: BlockConfig = BlockConfig(),
    fill: float | str = 0.0,
    counter: MacCounter | None = None,
) -> np.ndarray:
    """Convolution restricted to the block-aligned AoI.

    Only rows of selected runs enter the patch matrix.  Positions outside
    every selected run get ``fill`` in all channels; ``fill="bias"`` uses
    each channel's bias instead.
    """
    x = _check_input(x, p)
    wmat, b = _check_weights(weights, bias, p)
    oh, ow = p.out_dims(x.shape[2], x.shape[3])
    if mask.shape != (oh, ow):
        raise MaskShapeMismatch(f"mask is {mask.h}x{mask.w}, layer output is {oh}x{ow}")
    positions = np.flatnonzero(align_mask(mask, block).bits)
    out = np.empty((x.shape[0], p.out_channels, oh * ow), dtype=np.float32)
    for n in range(x.shape[0]):
        if isinstance(fill, str):
            if fill != "bias":
                raise ValueError(f"fill must be a number or 'bias', got {fill!r}")
            out[n] = b
        else:
            out[n] = np.float32(fill)
        if positions.size:
            acc = _gemm(wmat, _patches_t(x[n], p, positions), counter)
            out[n][:, positions] = acc + b
    return out.reshape(x.shape[0], p.out_channels, oh, ow)


# -- masks --------------------------------------------------------------------


def threshold_aoi(x_sum, tau: float) -> AoiMask:
    """Positions whose channel sum is >= ``tau``.

    The comparison runs in float64 so ``tau`` is never rounded to float32.
    """
    x_sum = as_tensor(x_sum)
    if x_sum.shape[:2] != (1, 1):
        raise ShapeMismatch(f"expected a (1, 1, h, w) channel sum, got {x_sum.shape}")
    return AoiMask(x_sum[0, 0].astype(np.float64) >= float(tau))


def resize_mask(m: AoiMask, out_h: int, out_w: int) -> AoiMask:
    """Nearest-neighbour resample: out[i, j] = m[i*h//out_h, j*w//out_w]."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dims must be >= 1, got {out_h}x{out_w}")
    if (out_h, out_w) == m.shape:
        return m
    rows = np.arange(out_h) * m.h // out_h
    cols = np.arange(out_w) * m.w // out_w
    return AoiMask(m.bits[np.ix_(rows, cols)])


def selected_runs(m: AoiMask, block: BlockConfig) -> np.ndarray:
    """Boolean flag per run of ``block_size`` raster positions (last may be short)."""
    flat = m.bits.reshape(-1)
    b = block.block_size
    n_runs = -(-flat.size // b)
    padded = np.zeros(n_runs * b, dtype=bool)
    padded[: flat.size] = flat
    return padded.reshape(n_runs, b).any(axis=1)


def align_mask(m: AoiMask, block: BlockConfig) -> AoiMask:
    """Grow the mask to whole runs: a run with any relevant position is kept entirely."""
    if block.block_size == 1:
        return m
    runs = selected_runs(m, block)
    flat = np.repeat(runs, block.block_size)[: m.bits.size]
    return AoiMask(flat.reshape(m.shape))


def count_focused_macs(p: ConvParams, m: AoiMask, block: BlockConfig) -> tuple[int, int]:
    """(selected_slots, macs) the focused conv will execute for mask ``m``."""
    runs = selected_runs(m, block)
    b = block.block_size
    lengths = np.full(runs.size, b, dtype=np.int64)
    lengths[-1] = m.bits.size - (runs.size - 1) * b
    slots = int(lengths[runs].sum())
    return slots, slots * p.macs_per_slot


# -- PGM export ---------------------------------------------------------------


def mask_to_pgm(m: AoiMask) -> bytes:
    header = f"P5\n{m.w} {m.h}\n255\n".encode("ascii")
    return header + np.where(m.bits, 255, 0).astype(np.uint8).tobytes()


def mask_export_pgm(m: AoiMask, path) -> None:
    try:
        with open(path, "wb") as f:
            f.write(mask_to_pgm(m))
    except OSError as exc:
        raise IoFailure(f"cannot write mask {os.fspath(path)}: {exc.strerror}") from exc


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)\s+(\d+)\s+(\d+)\s")


def mask_from_pgm(buf: bytes) -> AoiMask:
    """Parse a binary PGM; any non-zero pixel is relevant."""
    match = _PGM_HEADER.match(buf)
    if not match:
        raise ValueError("not a binary (P5) PGM file")
    w, h, maxval = (int(g) for g in match.groups())
    if maxval > 255:
        raise ValueError("16-bit PGM is not supported")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=match.end())
    return AoiMask((data != 0).reshape(h, w))


def mask_read_pgm(path) -> AoiMask:
    with open(path, "rb") as f:
        return mask_from_pgm(f.read())
