"""Labelled tensor datasets stored as ``index.csv`` plus FTNSR samples.

Each line of ``index.csv`` is ``relative_tensor_path,integer_label``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, IoFailure, LabelMismatch, MissingTensorFile, ParseError, ShapeMismatch
from .tensor import as_tensor, tensor_read, tensor_write

INDEX = "index.csv"


@dataclass
class Dataset:
    inputs: list
    labels: list
    paths: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise LabelMismatch(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        for i, label in enumerate(self.labels):
            if int(label) != label or label < 0:
                raise LabelMismatch(f"sample {i}: label must be a non-negative integer, got {label!r}")
        self.inputs = [as_tensor(x) for x in self.inputs]
        self.labels = [int(v) for v in self.labels]

    def __len__(self):
        return len(self.inputs)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.inputs[:n], self.labels[:n], self.paths[:n])

    def check_dims(self, input_dims) -> None:
        want = (1, *input_dims)
        for i, x in enumerate(self.inputs):
            if x.shape != want:
                where = self.paths[i] if i < len(self.paths) else f"sample {i}"
                raise ShapeMismatch(f"{where}: shape {x.shape}, model expects {want}")


def load_dataset(root, input_dims=None) -> Dataset:
    root = Path(root)
    index = root / INDEX
    if not index.is_file():
        raise MissingTensorFile(f"dataset index not found: {index}")
    inputs, labels, paths = [], [], []
    try:
        with open(index, newline="", encoding="utf-8") as f:
            for lineno, row in enumerate(csv.reader(f), start=1):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 2:
                    raise ParseError(f"{index}: expected 'path,label'", lineno, 1)
                rel, label = row[0].strip(), row[1].strip()
                try:
                    label = int(label)
                except ValueError:
                    raise ParseError(f"{index}: label {label!r} is not an integer", lineno, len(row[0]) + 2) from None
                if label < 0:
                    raise LabelMismatch(f"{index}:{lineno}: negative label {label}")
                path = root / rel
                if not path.is_file():
                    raise MissingTensorFile(f"{index}:{lineno}: sample not found: {path}")
                inputs.append(tensor_read(path))
                labels.append(label)
                paths.append(str(path))
    except (MissingTensorFile, IoFailure):
        raise
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {root}: {exc}") from exc
    if not inputs:
        raise EmptyDataset(f"dataset {root} has no samples")
    ds = Dataset(inputs, labels, paths)
    if input_dims is not None:
        ds.check_dims(input_dims)
    return ds


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    width = len(str(max(len(ds) - 1, 0)))
    lines = []
    for i, (x, label) in enumerate(zip(ds.inputs, ds.labels)):
        name = f"sample_{i:0{width}d}.ftnsr"
        tensor_write(x, root / name)
        lines.append(f"{name},{label}\n")
    (root / INDEX).write_text("".join(lines), encoding="utf-8")


def random_inputs(input_dims, n: int, seed: int = 0) -> list:
    """Uniform [0, 1) calibration inputs for models without a dataset."""
    rng = np.random.default_rng(seed)
    return [rng.random((1, *input_dims), dtype=np.float32) for _ in range(n)]
