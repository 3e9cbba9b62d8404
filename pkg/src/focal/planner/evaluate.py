"""Accuracy / latency / MAC evaluation of a model over a dataset."""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..dataset import Dataset
from ..errors import EmptyDataset, LabelMismatch
from ..graph import ModelGraph, forward

REPORT_FIELDS = (
    "model",
    "samples",
    "accuracy",
    "latency_ms",
    "macs_total",
    "macs_per_inference",
    "aoi_mean",
    "aoi_min",
    "aoi_max",
)
IMPROVEMENT_FIELDS = ("accuracy", "latency_ms", "macs_per_inference")


@dataclass
class EvalReport:
    model: str
    samples: int
    accuracy: float
    latency_ms: float
    macs_total: int
    macs_per_inference: float
    aoi_mean: float
    aoi_min: float
    aoi_max: float

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in REPORT_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{k: d[k] for k in REPORT_FIELDS})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerow([self.to_dict()[k] for k in REPORT_FIELDS])
        return buf.getvalue()

    def write(self, json_path, csv_path=None, baseline: "EvalReport | None" = None) -> None:
        doc = self.to_dict()
        if baseline is not None:
            doc["baseline"] = baseline.to_dict()
            doc["improvement"] = improvement(baseline, self)
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", encoding="utf-8") as f:
                f.write(self.to_csv())


def relative_change(unmodified: float, focused: float) -> float:
    """|unmodified - focused| / unmodified."""
    if unmodified == 0:
        return 0.0 if focused == 0 else float("inf")
    return abs(unmodified - focused) / abs(unmodified)


def improvement(baseline: EvalReport, report: EvalReport) -> dict:
    return {k: relative_change(getattr(baseline, k), getattr(report, k)) for k in IMPROVEMENT_FIELDS}


def evaluate_model(
    g: ModelGraph,
    dataset: Dataset,
    warmup: int = 2,
    repeats: int = 5,
    timing_samples: int | None = 8,
) -> EvalReport:
    """Top-1 accuracy, median per-inference latency and executed MACs.

    Accuracy and MACs cover every sample.  Latency is the median wall time
    of single inferences over ``repeats`` sequential passes across the
    first ``timing_samples`` samples (all when None), after ``warmup``
    untimed runs.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    classes = g.output_dims[0]
    correct = 0
    macs_total = 0
    fractions = []
    for i, (x, label) in enumerate(zip(dataset.inputs, dataset.labels)):
        if label >= classes:
            raise LabelMismatch(f"sample {i}: label {label} but model has {classes} outputs")
        macs = {}
        res = forward(g, x, macs=macs)
        correct += int(np.argmax(res.output.reshape(-1)) == label)
        macs_total += sum(macs.values())
        fractions.append(res.aoi.fraction() if res.aoi is not None else 1.0)

    timed = dataset.inputs if timing_samples is None else dataset.inputs[:timing_samples]
    for _ in range(warmup):
        forward(g, timed[0])
    latencies = []
    for _ in range(repeats):
        for x in timed:
            t0 = time.perf_counter()
            forward(g, x)
            latencies.append(time.perf_counter() - t0)

    n = len(dataset)
    return EvalReport(
        model=g.name,
        samples=n,
        accuracy=correct / n,
        latency_ms=statistics.median(latencies) * 1e3,
        macs_total=macs_total,
        macs_per_inference=macs_total / n,
        aoi_mean=statistics.fmean(fractions),
        aoi_min=min(fractions),
        aoi_max=max(fractions),
    )


class DatasetOracle:
    """Evaluation oracle backed by a real dataset (see :func:`evaluate_model`)."""

    def __init__(self, dataset: Dataset, warmup: int = 2, repeats: int = 5, timing_samples: int | None = 8):
        self.dataset = dataset
        self.warmup = warmup
        self.repeats = repeats
        self.timing_samples = timing_samples

    def __call__(self, g: ModelGraph) -> EvalReport:
        return evaluate_model(g, self.dataset, self.warmup, self.repeats, self.timing_samples)
