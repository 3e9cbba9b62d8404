"""Training-free search for the activation threshold tau.

Candidate thresholds live on the grid ``tau0 + j * eps_min``.  The search
climbs from ``tau0`` (100% AoI) with steps starting at ``eps0`` and
doubling until the latency target holds, then, if accuracy falls short,
walks back down inside the bracket between the last too-slow and the
first too-inaccurate point: one step scaled by the accuracy shortfall,
then bisection.
Restricting probes to the grid makes the outcome comparable with an
exhaustive scan at ``eps_min`` resolution.

The oracle is any callable ``model -> report`` whose report exposes
``accuracy``, ``latency_ms`` and ``aoi_mean``; it is assumed monotone:
raising tau never raises accuracy and never raises latency.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyCalibrationSet
from ..graph import ModelGraph, convert_to_fcnn, forward, with_tau
from ..kernel import BlockConfig
from ..tensor import channel_sum

SUCCESS = "success"
INFEASIBLE = "infeasible"
TIMED_OUT = "timed_out"

TRACE_FIELDS = ("pass", "tau", "accuracy", "latency_ms", "aoi_fraction")


@dataclass
class SearchConfig:
    T: float  # latency target, ms
    A: float  # accuracy target, fraction
    eps0: float | None = None  # None: derived from calibration activations
    eps_min: float | None = None
    max_passes: int = 16
    wall_timeout: float = 600.0  # seconds

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"latency target T must be positive, got {self.T}")
        if not 0 <= self.A <= 1:
            raise ValueError(f"accuracy target A must be in [0, 1], got {self.A}")
        if self.eps0 is not None and not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if self.eps_min is not None and not self.eps_min > 0:
            raise ValueError("eps_min must be positive")
        if self.eps0 is not None and self.eps_min is not None and not self.eps0 > self.eps_min:
            raise ValueError("eps0 must exceed eps_min")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


@dataclass
class SearchRecord:
    pass_no: int
    tau: float
    accuracy: float
    latency_ms: float
    aoi_fraction: float
    phase: str

    def row(self) -> list:
        return [self.pass_no, self.tau, self.accuracy, self.latency_ms, self.aoi_fraction]


@dataclass
class SearchTrace:
    status: str
    records: list = field(default_factory=list)
    tau: float | None = None
    tau0: float | None = None
    eps0: float | None = None
    eps_min: float | None = None

    @property
    def passes(self) -> int:
        return len(self.records)

    @property
    def succeeded(self) -> bool:
        return self.status == SUCCESS

    def final(self) -> SearchRecord | None:
        return self.records[-1] if self.records else None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "tau": self.tau,
            "tau0": self.tau0,
            "eps0": self.eps0,
            "eps_min": self.eps_min,
            "passes": [
                {"pass": r.pass_no, "tau": r.tau, "accuracy": r.accuracy, "latency_ms": r.latency_ms,
                 "aoi_fraction": r.aoi_fraction, "phase": r.phase}
                for r in self.records
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def write(self, json_path, csv_path) -> None:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write(self.to_csv())


def calibration_sums(g: ModelGraph, k: int, inputs) -> np.ndarray:
    """Channel-summed layer-k activations of every calibration input, flattened."""
    if not inputs:
        raise EmptyCalibrationSet("tau search needs calibration inputs")
    return np.concatenate([channel_sum(forward(g, x, capture=k).captured).reshape(-1) for x in inputs]).astype(np.float64)


def default_steps(sums: np.ndarray) -> tuple[float, float]:
    """(eps0, eps_min): a sixteenth of the min..p95 spread, and 1/64 of that."""
    lo = float(sums.min())
    spread = float(np.percentile(sums, 95)) - lo
    if not spread > 0:
        spread = float(sums.max()) - lo
    if not spread > 0:
        spread = max(abs(lo), 1.0)
    eps0 = spread / 16
    return eps0, eps0 / 64


def search_tau(
    g: ModelGraph,
    k: int,
    oracle,
    cfg: SearchConfig,
    calibration_inputs,
    block: BlockConfig | None = None,
    fill: float | str = 0.0,
    clock=time.monotonic,
) -> SearchTrace:
    sums = calibration_sums(g, k, calibration_inputs)
    tau0 = float(sums.min())
    eps0, eps_min = default_steps(sums)
    eps0 = cfg.eps0 if cfg.eps0 is not None else eps0
    eps_min = cfg.eps_min if cfg.eps_min is not None else (eps0 / 64 if cfg.eps0 is not None else eps_min)
    if not eps0 > eps_min:
        raise ValueError(f"eps0 ({eps0}) must exceed eps_min ({eps_min})")
    up = max(1, round(eps0 / eps_min))
    # beyond this grid index no calibration activation survives
    j_top = math.floor((float(sums.max()) - tau0) / eps_min) + 1

    base = convert_to_fcnn(g, k, tau0, block, fill)
    trace = SearchTrace(TIMED_OUT, tau0=tau0, eps0=eps0, eps_min=eps_min)
    start = clock()

    def tau_at(j: int) -> float:
        return tau0 + j * eps_min

    def exhausted() -> bool:
        return trace.passes >= cfg.max_passes or clock() - start > cfg.wall_timeout

    def probe(j: int, phase: str):
        r = oracle(with_tau(base, tau_at(j)))
        trace.records.append(SearchRecord(trace.passes + 1, tau_at(j), r.accuracy, r.latency_ms, r.aoi_mean, phase))
        return r.latency_ms <= cfg.T, r.accuracy >= cfg.A, r.accuracy

    def finish(status: str, j: int | None = None) -> SearchTrace:
        trace.status = status
        trace.tau = tau_at(j) if j is not None else None
        return trace

    # ascend: shrink the AoI until the latency target holds; the step
    # starts at eps0 and doubles so the whole range is covered in few passes
    j, lo, step = 0, None, up
    fast, accurate, acc = probe(0, "init")
    while not fast:
        if not accurate:
            return finish(INFEASIBLE)  # higher tau only loses more accuracy
        lo = j
        if j >= j_top:
            return finish(INFEASIBLE)  # AoI already empty
        if exhausted():
            return finish(TIMED_OUT)
        j = min(j + step, j_top)
        step *= 2
        fast, accurate, acc = probe(j, "ascend")
    if accurate:
        return finish(SUCCESS, j)
    if lo is None:
        return finish(INFEASIBLE)  # 100% AoI is fast enough but already too inaccurate

    # descend inside (lo, hi): lo is too slow, hi too inaccurate
    hi = j
    adaptive = True
    while hi - lo > 1:
        if exhausted():
            return finish(TIMED_OUT)
        if adaptive:
            # first step back scales with the accuracy shortfall
            rel = abs(cfg.A - acc) / cfg.A if cfg.A > 0 else 1.0
            eps = min(max(eps0 * rel, eps_min), eps0)
            c = hi - max(1, min(round(eps / eps_min), hi - lo - 1))
            adaptive = False
        else:
            c = (lo + hi) // 2
        fast, accurate, acc_c = probe(c, "descend")
        if fast and accurate:
            return finish(SUCCESS, c)
        if not fast and not accurate:
            return finish(INFEASIBLE)
        if fast:
            hi, acc = c, acc_c
        else:
            lo = c
    return finish(INFEASIBLE)
