"""Linear energy model of an fCNN and the choice of the dense prefix length.

With per-conv energies ``E[0..N-1]``, per-focused-layer overhead ``c`` and
expected AoI fraction ``a``, keeping the first ``k`` convs dense costs::

    E_total(k) = (N - k) * c + sum(E[:k]) + a * sum(E[k:])

The overhead is charged once per focused layer; the fraction scales the
dense energy of the layers it replaces.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import EmptyCalibrationSet, InfeasibleBudget, NotAConvLayer
from ..graph import FocusedConv, ModelGraph, forward, is_conv
from ..kernel import AoiMask, BlockConfig, dense_conv, focused_conv

MODES = ("mac", "time")


@dataclass
class EnergyProfile:
    energies: list
    overhead: float = 0.0
    mode: str = "mac"
    # graph layer index of each conv, when the profile came from a model
    conv_indices: list = field(default_factory=list)

    def __post_init__(self):
        if any(e < 0 for e in self.energies):
            raise ValueError("layer energies must be non-negative")
        if self.overhead < 0:
            raise ValueError("overhead must be non-negative")
        if self.conv_indices and len(self.conv_indices) != len(self.energies):
            raise ValueError("conv_indices and energies differ in length")

    @property
    def n(self) -> int:
        return len(self.energies)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyProfile":
        return cls(list(d["energies"]), d.get("overhead", 0.0), d.get("mode", "mac"), list(d.get("conv_indices", [])))

    @classmethod
    def load(cls, path) -> "EnergyProfile":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def project_energy(p: EnergyProfile, k: int, a):
    if not 0 <= k <= p.n:
        raise ValueError(f"k={k} outside 0..{p.n}")
    if not 0 <= a <= 1:
        raise ValueError(f"AoI fraction {a} outside [0, 1]")
    dense = sum(p.energies[:k], 0)
    focused = sum(p.energies[k:], 0)
    return (p.n - k) * p.overhead + dense + a * focused


def energy_table(p: EnergyProfile, a) -> list:
    """``[(k, E_total), ...]`` for every candidate k in 1..N-1."""
    return [(k, project_energy(p, k, a)) for k in range(1, p.n)]


def select_k(p: EnergyProfile, budget, a) -> int:
    """Largest k in 1..N-1 whose projected energy fits ``budget``.

    Raises :class:`InfeasibleBudget` when no k fits, including when the
    model has fewer than two convs.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if not 0 <= a <= 1:
        raise ValueError(f"AoI fraction {a} outside [0, 1]")
    if p.n < 2:
        raise InfeasibleBudget(f"need at least 2 conv layers to split, profile has {p.n}")
    for k in range(p.n - 1, 0, -1):
        if project_energy(p, k, a) <= budget:
            return k
    floor = min(e for _, e in energy_table(p, a))
    raise InfeasibleBudget(f"budget {budget} is below the cheapest projection {floor} (overhead {p.overhead} per focused layer)")


def overhead_from_costs(focused_costs, dense_costs) -> float:
    """max(0, median focused-at-100%-AoI cost - median dense cost)."""
    return max(0.0, statistics.median(focused_costs) - statistics.median(dense_costs))


def _layer_inputs(g: ModelGraph, index: int, inputs) -> list:
    if index == 0:
        return [np.asarray(x, np.float32) for x in inputs]
    return [forward(g, x, capture=index - 1).captured for x in inputs]


def measure_overhead_c(g: ModelGraph, index: int, calibration_inputs, repeats: int = 5) -> float:
    """Extra milliseconds a focused conv at 100% AoI costs over the dense conv."""
    layer = g.layers[index] if 0 <= index < len(g.layers) else None
    if not is_conv(layer):
        raise NotAConvLayer(f"layer {index} is not a conv layer")
    if not calibration_inputs:
        raise EmptyCalibrationSet("overhead measurement needs calibration inputs")
    block = layer.block if isinstance(layer, FocusedConv) else BlockConfig.default()
    _, oh, ow = g.out_dims(index)
    full = AoiMask.full(oh, ow)
    dense_t, focused_t = [], []
    for x in _layer_inputs(g, index, calibration_inputs):
        for _ in range(repeats):
            t0 = time.perf_counter()
            dense_conv(x, layer.weights, layer.bias, layer.params)
            t1 = time.perf_counter()
            focused_conv(x, layer.weights, layer.bias, layer.params, full, block)
            t2 = time.perf_counter()
            dense_t.append((t1 - t0) * 1e3)
            focused_t.append((t2 - t1) * 1e3)
    return overhead_from_costs(focused_t, dense_t)


def mac_bookkeeping(g: ModelGraph, index: int) -> int:
    """Elements a focused conv touches beyond the dense GEMM: mask scan plus output scatter."""
    c, oh, ow = g.out_dims(index)
    return oh * ow * (1 + c)


def profile_energy(g: ModelGraph, mode: str = "mac", calibration_inputs=None, repeats: int = 5,
                   warmup: int = 2) -> EnergyProfile:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    convs = g.conv_indices()
    if mode == "mac":
        energies = [g.layers[i].dense_macs(g.in_dims(i)) for i in convs]
        overhead = statistics.fmean(mac_bookkeeping(g, i) for i in convs) if convs else 0.0
        return EnergyProfile(energies, overhead, mode, convs)
    if not calibration_inputs:
        raise EmptyCalibrationSet("time-mode profiling needs calibration inputs")
    for _ in range(warmup):
        forward(g, calibration_inputs[0])
    samples = {i: [] for i in convs}
    for x in calibration_inputs:
        for _ in range(repeats):
            times = {}
            forward(g, x, times=times)
            for i in convs:
                samples[i].append(times[i] * 1e3)
    energies = [statistics.median(samples[i]) for i in convs]
    overhead = statistics.fmean(measure_overhead_c(g, i, calibration_inputs, repeats) for i in convs) if convs else 0.0
    return EnergyProfile(energies, overhead, mode, convs)
