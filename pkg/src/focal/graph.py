"""Sequential model graphs, the forward pass and dense -> fCNN conversion.

All activations are rank-4 ``(1, c, h, w)`` tensors; ``flatten`` and
``linear`` produce ``(1, features, 1, 1)`` so every layer speaks the same
shape convention.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernel
from .errors import (
    IndexOutOfRange,
    NoConvAfterK,
    ShapeCompositionError,
    ShapeMismatch,
)
from .kernel import AoiMask, BlockConfig, ConvParams, MacCounter
from .tensor import as_tensor, channel_sum

Dims = tuple  # (c, h, w)


def _frozen(a, shape=None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    if shape is not None:
        a = a.reshape(shape)
    if a.flags.writeable:  # already-frozen arrays are shared, not copied
        a = a.copy()
        a.flags.writeable = False
    return a


class _Context:
    def __init__(self):
        self.aoi: AoiMask | None = None


# -- layers -------------------------------------------------------------------


@dataclass(eq=False)
class Conv:
    params: ConvParams
    weights: np.ndarray
    bias: np.ndarray
    # source tensor files by field name; lets a saved manifest reference them
    files: dict = field(default_factory=dict, repr=False)

    type = "conv"

    def __post_init__(self):
        p = self.params
        self.weights = _frozen(self.weights)
        expect = (p.out_channels, p.in_channels, p.kernel_h, p.kernel_w)
        if self.weights.shape != expect:
            raise ShapeMismatch(f"conv weights have shape {self.weights.shape}, expected {expect}")
        self.bias = _frozen(self.bias, (-1,))
        if self.bias.size != p.out_channels:
            raise ShapeMismatch(f"conv bias has {self.bias.size} entries, expected {p.out_channels}")

    def out_dims(self, dims: Dims) -> Dims:
        c, h, w = dims
        if c != self.params.in_channels:
            raise ShapeMismatch(f"expects {self.params.in_channels} input channels, got {c}")
        return (self.params.out_channels, *self.params.out_dims(h, w))

    def dense_macs(self, dims: Dims) -> int:
        _, oh, ow = self.out_dims(dims)
        return oh * ow * self.params.macs_per_slot

    def run(self, x, ctx, counter):
        return kernel.dense_conv(x, self.weights, self.bias, self.params, counter)


@dataclass(eq=False)
class FocusedConv(Conv):
    block: BlockConfig = field(default_factory=BlockConfig)
    fill: float | str = 0.0

    type = "focused_conv"

    def run(self, x, ctx, counter):
        if ctx.aoi is None:
            raise ShapeMismatch("focused conv reached without an AoI mask")
        _, _, h, w = x.shape
        oh, ow = self.params.out_dims(h, w)
        mask = kernel.resize_mask(ctx.aoi, oh, ow)
        return kernel.focused_conv(x, self.weights, self.bias, self.params, mask, self.block, self.fill, counter)


@dataclass(eq=False)
class ThresholdAoI:
    tau: float

    type = "threshold_aoi"

    def out_dims(self, dims):
        return dims

    def run(self, x, ctx, counter):
        ctx.aoi = kernel.threshold_aoi(channel_sum(x), self.tau)
        return x


@dataclass(eq=False)
class ReLU:
    type = "relu"

    def out_dims(self, dims):
        return dims

    def run(self, x, ctx, counter):
        return np.maximum(x, np.float32(0.0))


@dataclass(eq=False)
class MaxPool:
    kernel: int
    stride: int

    type = "maxpool"

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("maxpool kernel and stride must be >= 1")

    def out_dims(self, dims):
        c, h, w = dims
        if h < self.kernel or w < self.kernel:
            raise ShapeMismatch(f"{self.kernel}x{self.kernel} pool does not fit a {h}x{w} input")
        return (c, (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1)

    def run(self, x, ctx, counter):
        _, oh, ow = self.out_dims(x.shape[1:])
        s = self.stride
        out = None
        for di in range(self.kernel):
            for dj in range(self.kernel):
                tap = x[:, :, di : di + s * (oh - 1) + 1 : s, dj : dj + s * (ow - 1) + 1 : s]
                out = tap.copy() if out is None else np.maximum(out, tap, out=out)
        return out


@dataclass(eq=False)
class GlobalAvgPool:
    type = "gap"

    def out_dims(self, dims):
        return (dims[0], 1, 1)

    def run(self, x, ctx, counter):
        return x.mean(axis=(2, 3), keepdims=True, dtype=np.float32)


@dataclass(eq=False)
class Flatten:
    type = "flatten"

    def out_dims(self, dims):
        return (math.prod(dims), 1, 1)

    def run(self, x, ctx, counter):
        return x.reshape(x.shape[0], -1, 1, 1)


@dataclass(eq=False)
class Affine:
    """Per-channel ``x * scale + shift``; holds folded batch norm."""

    scale: np.ndarray
    shift: np.ndarray
    files: dict = field(default_factory=dict, repr=False)

    type = "affine"

    def __post_init__(self):
        self.scale = _frozen(self.scale, (-1,))
        self.shift = _frozen(self.shift, (-1,))
        if self.scale.size != self.shift.size:
            raise ShapeMismatch("affine scale and shift differ in length")

    def out_dims(self, dims):
        if dims[0] != self.scale.size:
            raise ShapeMismatch(f"affine has {self.scale.size} channels, input has {dims[0]}")
        return dims

    def run(self, x, ctx, counter):
        return x * self.scale[:, None, None] + self.shift[:, None, None]


@dataclass(eq=False)
class Linear:
    weight: np.ndarray  # (out_features, in_features)
    bias: np.ndarray
    files: dict = field(default_factory=dict, repr=False)

    type = "linear"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        if w.ndim == 4:
            w = w.reshape(w.shape[-2:])
        if w.ndim != 2:
            raise ShapeMismatch(f"linear weight must be a matrix, got shape {w.shape}")
        self.weight = _frozen(w)
        self.bias = _frozen(self.bias, (-1,))
        if self.bias.size != self.out_features:
            raise ShapeMismatch(f"linear bias has {self.bias.size} entries, expected {self.out_features}")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def out_dims(self, dims):
        n = math.prod(dims)
        if n != self.in_features:
            raise ShapeMismatch(f"expects {self.in_features} input features, got {n} from dims {tuple(dims)}")
        return (self.out_features, 1, 1)

    def dense_macs(self, dims) -> int:
        return self.in_features * self.out_features

    def run(self, x, ctx, counter):
        v = x.reshape(x.shape[0], -1)
        y = v @ self.weight.T + self.bias
        if counter is not None:
            counter.add(v.shape[0] * self.in_features * self.out_features)
        return y.reshape(x.shape[0], -1, 1, 1).astype(np.float32, copy=False)


LAYER_TYPES = {cls.type: cls for cls in (Conv, FocusedConv, ThresholdAoI, ReLU, MaxPool, GlobalAvgPool, Flatten, Affine, Linear)}


def is_conv(layer) -> bool:
    """True for plain and focused convolutions."""
    return isinstance(layer, Conv)


# -- graph --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelGraph:
    input_dims: tuple
    layers: tuple
    name: str = "model"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ShapeCompositionError(f"input_dims must be three positive counts, got {self.input_dims}", -1)
        thresholds = [i for i, l in enumerate(self.layers) if isinstance(l, ThresholdAoI)]
        if len(thresholds) > 1:
            raise ShapeCompositionError("more than one threshold_aoi layer", thresholds[1])
        t = thresholds[0] if thresholds else None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, FocusedConv) and (t is None or i < t):
                raise ShapeCompositionError("focused_conv must come after the threshold_aoi layer", i)
            if t is not None and i > t and type(layer) is Conv:
                raise ShapeCompositionError("plain conv after the threshold_aoi layer", i)
        dims = [self.input_dims]
        for i, layer in enumerate(self.layers):
            try:
                dims.append(tuple(layer.out_dims(dims[-1])))
            except ShapeMismatch as exc:
                raise ShapeCompositionError(str(exc), i) from None
        object.__setattr__(self, "_dims", tuple(dims))

    def __len__(self):
        return len(self.layers)

    @property
    def output_dims(self) -> tuple:
        return self._dims[-1]

    def in_dims(self, i: int) -> tuple:
        return self._dims[i]

    def out_dims(self, i: int) -> tuple:
        return self._dims[i + 1]

    @property
    def threshold_index(self) -> int | None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ThresholdAoI):
                return i
        return None

    @property
    def is_focused(self) -> bool:
        return self.threshold_index is not None

    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if is_conv(l)]


class ForwardResult(NamedTuple):
    output: np.ndarray
    captured: np.ndarray | None
    aoi: AoiMask | None


def forward(g: ModelGraph, x, capture: int | None = None, *, macs: dict | None = None, times: dict | None = None) -> ForwardResult:
    """Run ``g`` on a batch-1 input.

    ``capture`` selects a layer whose output is returned alongside the
    final output.  ``macs`` (layer index -> executed MACs) and ``times``
    (layer index -> seconds) are filled in when given.
    """
    x = as_tensor(x)
    if x.shape != (1, *g.input_dims):
        raise ShapeMismatch(f"input has shape {x.shape}, model expects {(1, *g.input_dims)}")
    if capture is not None and not 0 <= capture < len(g.layers):
        raise IndexOutOfRange(f"capture index {capture} outside 0..{len(g.layers) - 1}")
    ctx = _Context()
    captured = None
    for i, layer in enumerate(g.layers):
        counter = MacCounter() if macs is not None and hasattr(layer, "dense_macs") else None
        t0 = time.perf_counter()
        x = layer.run(x, ctx, counter)
        if times is not None:
            times[i] = time.perf_counter() - t0
        if counter is not None:
            macs[i] = counter.total
        if i == capture:
            captured = x.copy()
    return ForwardResult(x, captured, ctx.aoi)


def convert_to_fcnn(g: ModelGraph, k: int, tau: float, block: BlockConfig | None = None, fill: float | str = 0.0) -> ModelGraph:
    """Insert a threshold after layer ``k`` and focus every later conv.

    Weights, biases and source tensor files are shared with ``g``, which is
    left untouched.
    """
    if g.is_focused:
        raise ValueError(f"model {g.name!r} already contains a threshold_aoi layer")
    if not 1 <= k < len(g.layers):
        raise IndexOutOfRange(f"k={k} outside 1..{len(g.layers) - 1}")
    if not any(is_conv(l) for l in g.layers[k + 1 :]):
        raise NoConvAfterK(f"no conv layer after layer {k}")
    block = block or BlockConfig.default()
    tail = []
    for layer in g.layers[k + 1 :]:
        if type(layer) is Conv:
            layer = FocusedConv(layer.params, layer.weights, layer.bias, dict(layer.files), block=block, fill=fill)
        tail.append(layer)
    return ModelGraph(g.input_dims, (*g.layers[: k + 1], ThresholdAoI(float(tau)), *tail), name=f"{g.name}-fcnn")


def with_tau(g: ModelGraph, tau: float) -> ModelGraph:
    """Copy of an fCNN with a different threshold."""
    t = g.threshold_index
    if t is None:
        raise ValueError("model has no threshold_aoi layer")
    layers = list(g.layers)
    layers[t] = replace(layers[t], tau=float(tau))
    return ModelGraph(g.input_dims, layers, g.name)


def downsample_points(g: ModelGraph) -> list[int]:
    """Indices of spatial layers whose output is smaller than their input."""
    points = []
    for i, layer in enumerate(g.layers):
        if isinstance(layer, (Conv, MaxPool, GlobalAvgPool)):
            _, h, w = g.in_dims(i)
            _, oh, ow = g.out_dims(i)
            if oh < h or ow < w:
                points.append(i)
    return points


def split_index_for_conv_count(g: ModelGraph, n_dense: int) -> int:
    """Layer index to threshold after so that exactly ``n_dense`` convs stay dense.

    That is the layer right before the next conv, so activations and pools
    trailing the last dense conv stay in the dense prefix.
    """
    convs = g.conv_indices()
    if not 1 <= n_dense < len(convs):
        raise IndexOutOfRange(f"dense conv count {n_dense} outside 1..{len(convs) - 1}")
    return convs[n_dense] - 1


# -- MAC accounting -----------------------------------------------------------


class MacEntry(NamedTuple):
    index: int
    type: str
    dense: int
    focused: int


@dataclass
class MacReport:
    entries: list

    @property
    def dense_total(self) -> int:
        return sum(e.dense for e in self.entries)

    @property
    def focused_total(self) -> int:
        return sum(e.focused for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "layers": [e._asdict() for e in self.entries],
            "dense_total": self.dense_total,
            "focused_total": self.focused_total,
        }


def prefix_mask(h: int, w: int, fraction: float) -> AoiMask:
    """Mask whose first ``round(fraction*h*w)`` raster positions are relevant."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    flat = np.zeros(h * w, dtype=bool)
    flat[: round(fraction * h * w)] = True
    return AoiMask(flat.reshape(h, w))


def count_macs(g: ModelGraph, aoi: AoiMask | None = None, aoi_fraction: float | None = None) -> MacReport:
    """Per-layer dense and focused MAC counts.

    Focused layers use ``aoi`` (a measured layer-k mask, resized per layer)
    when given, else a raster-prefix mask covering ``aoi_fraction`` of each
    layer's output, else a full mask.
    """
    entries = []
    for i, layer in enumerate(g.layers):
        if not hasattr(layer, "dense_macs"):
            continue
        dims = g.in_dims(i)
        dense = layer.dense_macs(dims)
        focused = dense
        if isinstance(layer, FocusedConv):
            _, oh, ow = g.out_dims(i)
            if aoi is not None:
                mask = kernel.resize_mask(aoi, oh, ow)
            elif aoi_fraction is not None:
                mask = prefix_mask(oh, ow, aoi_fraction)
            else:
                mask = AoiMask.full(oh, ow)
            focused = kernel.count_focused_macs(layer.params, mask, layer.block)[1]
        entries.append(MacEntry(i, layer.type, dense, focused))
    return MacReport(entries)
