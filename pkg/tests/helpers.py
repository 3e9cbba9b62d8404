"""Reference implementations and synthetic fixtures shared by the tests."""
from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np

from focal.graph import Conv, GlobalAvgPool, Linear, ModelGraph, ReLU
from focal.kernel import ConvParams


def naive_conv(x, w, b, p: ConvParams) -> np.ndarray:
    """Six nested loops in float32 scalars, same accumulation order as the kernel.

    Each output starts from the (c=0, i=0, j=0) product, adds the following
    products in ascending (c, i, j) order and adds the bias last.
    """
    n, ic, h, wd = x.shape
    xp = np.zeros((n, ic, h + 2 * p.padding, wd + 2 * p.padding), np.float32)
    xp[:, :, p.padding : p.padding + h, p.padding : p.padding + wd] = x
    oh, ow = p.out_dims(h, wd)
    out = np.zeros((n, p.out_channels, oh, ow), np.float32)
    for bi in range(n):
        for o in range(p.out_channels):
            for r in range(oh):
                for q in range(ow):
                    acc = None
                    for c in range(ic):
                        for i in range(p.kernel_h):
                            for j in range(p.kernel_w):
                                v = np.float32(w[o, c, i, j]) * np.float32(xp[bi, c, r * p.stride + i, q * p.stride + j])
                                acc = v if acc is None else np.float32(acc + v)
                    out[bi, o, r, q] = np.float32(acc + np.float32(b[o]))
    return out


def naive_channel_sum(x) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, 1, h, w), np.float32)
    for bi in range(n):
        for i in range(h):
            for j in range(w):
                acc = np.float32(x[bi, 0, i, j])
                for ch in range(1, c):
                    acc = np.float32(acc + x[bi, ch, i, j])
                out[bi, 0, i, j] = acc
    return out


def random_conv_case(rng, max_hw=12):
    ic, oc = (int(v) for v in rng.integers(1, 6, 2))
    kh, kw = (int(v) for v in rng.integers(1, 4, 2))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    h = int(rng.integers(max(1, kh - 2 * pad), max_hw))
    w = int(rng.integers(max(1, kw - 2 * pad), max_hw))
    p = ConvParams(ic, oc, kh, kw, stride, pad)
    x = rng.standard_normal((1, ic, h, w)).astype(np.float32)
    wt = rng.standard_normal((oc, ic, kh, kw)).astype(np.float32)
    b = rng.standard_normal(oc).astype(np.float32)
    return x, wt, b, p


# -- synthetic tau-search setting ---------------------------------------------

SYN_SIZE = 16


def synthetic_graph() -> ModelGraph:
    """1x1 identity conv, relu, then a second conv: layer 1's channel sum is the input."""
    one = np.ones((1, 1, 1, 1), np.float32)
    return ModelGraph(
        (1, SYN_SIZE, SYN_SIZE),
        (
            Conv(ConvParams(1, 1, 1, 1), one, np.zeros(1, np.float32)),
            ReLU(),
            Conv(ConvParams(1, 1, 1, 1), one, np.zeros(1, np.float32)),
            GlobalAvgPool(),
            Linear(np.ones((2, 1), np.float32), np.zeros(2, np.float32)),
        ),
        name="synthetic",
    )


def synthetic_calibration(seed: int = 0) -> list:
    """One input whose values are an even grid on [0, 1]: tau0 = 0, max = 1."""
    v = np.linspace(0.0, 1.0, SYN_SIZE * SYN_SIZE, dtype=np.float32)
    np.random.default_rng(seed).shuffle(v)
    return [v.reshape(1, 1, SYN_SIZE, SYN_SIZE)]


def kept_fraction(tau: float, gamma: float = 1.0) -> float:
    """Closed-form kept fraction; ``gamma`` bends the curve, keeping it monotone."""
    return min(1.0, max(0.0, 1.0 - tau)) ** gamma


def synthetic_metrics(tau: float, gamma: float = 1.0):
    kept = kept_fraction(tau, gamma)
    return 1.0 - (1.0 - kept) * 0.1, 100.0 * (0.3 + 0.7 * kept), kept


class SyntheticOracle:
    """accuracy = 1 - 0.1 * removed, latency = 100 * (0.3 + 0.7 * kept)."""

    def __init__(self, gamma: float = 1.0):
        self.gamma = gamma
        self.calls = 0

    def __call__(self, g: ModelGraph):
        self.calls += 1
        t = g.threshold_index
        tau = g.layers[t].tau if t is not None else -math.inf
        acc, lat, kept = synthetic_metrics(tau, self.gamma)
        return SimpleNamespace(accuracy=acc, latency_ms=lat, aoi_mean=kept)


def grid_feasible(trace, T: float, A: float, gamma: float = 1.0, j_max: int | None = None) -> list:
    """Brute-force scan of tau0 + j*eps_min; returns the feasible taus."""
    if j_max is None:
        j_max = math.floor((1.0 - trace.tau0) / trace.eps_min) + 2
    hits = []
    for j in range(j_max + 1):
        tau = trace.tau0 + j * trace.eps_min
        acc, lat, _ = synthetic_metrics(tau, gamma)
        if lat <= T and acc >= A:
            hits.append(tau)
    return hits
