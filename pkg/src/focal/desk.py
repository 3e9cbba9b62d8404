"""Desk-scale models and synthetic data standing in for pretrained CNNs.

``python -m focal.desk OUT_DIR`` writes both models and a blob dataset so
the CLI can be exercised end to end.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .dataset import Dataset, save_dataset
from .graph import Conv, GlobalAvgPool, Linear, MaxPool, ModelGraph, ReLU
from .kernel import ConvParams
from .manifest import model_save


def _conv(rng, ic, oc, k=3, stride=1, padding=1, positive=False):
    fan_in = ic * k * k
    w = rng.standard_normal((oc, ic, k, k)).astype(np.float32) * np.float32(np.sqrt(2.0 / fan_in))
    if positive:
        w = np.abs(w) / np.float32(2.0)
    b = rng.uniform(-0.05, 0.05, oc).astype(np.float32)
    return Conv(ConvParams(ic, oc, k, k, stride, padding), w, b)


def desk_cnn(seed: int = 0, input_dims=(3, 64, 64), classes: int = 4) -> ModelGraph:
    """Six 3x3 convs in three stages with random He-initialised weights.

    The two stem convs use non-negative filters so their activations track
    input brightness, as trained first layers tend to.  Layer 4 (the first
    max pool) is the first downsample point.
    """
    rng = np.random.default_rng(seed)
    c = input_dims[0]
    layers = [
        _conv(rng, c, 8, positive=True), ReLU(), _conv(rng, 8, 8, positive=True), ReLU(), MaxPool(2, 2),
        _conv(rng, 8, 16), ReLU(), _conv(rng, 16, 16), ReLU(), MaxPool(2, 2),
        _conv(rng, 16, 32), ReLU(), _conv(rng, 32, 32), ReLU(),
        GlobalAvgPool(),
    ]
    w = rng.standard_normal((classes, 32)).astype(np.float32) * np.float32(np.sqrt(1.0 / 32))
    layers.append(Linear(w, np.zeros(classes, np.float32)))
    return ModelGraph(tuple(input_dims), tuple(layers), name="desk_cnn")


def _box(oc, ic, groups_out, groups_in, scale):
    """3x3 box filters connecting output group ``o // groups_out`` to input group ``c // groups_in``."""
    w = np.zeros((oc, ic, 3, 3), np.float32)
    for o in range(oc):
        for c in range(ic):
            if o // groups_out == c // groups_in:
                w[o, c] = scale
    return w


def blob_classifier(size: int = 48, classes: int = 4) -> ModelGraph:
    """Hand-set CNN predicting which input channel carries a bright blob.

    Every conv is a non-negative box filter that keeps channel groups
    apart, so the logits are per-group mean activations.  Layer 4 is the
    first downsample point.
    """
    g = 4
    zeros = lambda n: np.zeros(n, np.float32)  # noqa: E731
    layers = [
        Conv(ConvParams(classes, classes, 3, 3, 1, 1), _box(classes, classes, 1, 1, 1 / 9), zeros(classes)),
        ReLU(),
        Conv(ConvParams(classes, classes, 3, 3, 1, 1), _box(classes, classes, 1, 1, 1 / 9), zeros(classes)),
        ReLU(),
        MaxPool(2, 2),
        Conv(ConvParams(classes, classes * g, 3, 3, 1, 1), _box(classes * g, classes, g, 1, 1 / 9), zeros(classes * g)),
        ReLU(),
        Conv(ConvParams(classes * g, classes * g, 3, 3, 1, 1), _box(classes * g, classes * g, g, g, 1 / 36), zeros(classes * g)),
        ReLU(),
        Conv(ConvParams(classes * g, classes * g, 3, 3, 1, 1), _box(classes * g, classes * g, g, g, 1 / 36), zeros(classes * g)),
        ReLU(),
        GlobalAvgPool(),
    ]
    fc = np.zeros((classes, classes * g), np.float32)
    for o in range(classes * g):
        fc[o // g, o] = 1 / g
    layers.append(Linear(fc, zeros(classes)))
    return ModelGraph((classes, size, size), tuple(layers), name="blob_classifier")


def blob_image(dims, channel: int, center, sigma: float = 3.0, amplitude: float = 1.5,
               noise: float = 0.5, rng=None) -> np.ndarray:
    """Uniform background noise on every channel plus a Gaussian blob on one."""
    c, h, w = dims
    rng = rng if rng is not None else np.random.default_rng(0)
    x = rng.uniform(0.0, noise, (1, c, h, w)).astype(np.float32) if noise > 0 else np.zeros((1, c, h, w), np.float32)
    yy, xx = np.mgrid[0:h, 0:w]
    blob = amplitude * np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2 * sigma**2))
    x[0, channel] += blob.astype(np.float32)
    return x


def blob_dataset(n: int = 64, size: int = 48, classes: int = 4, seed: int = 0, **kw) -> Dataset:
    """Balanced dataset: label = channel holding the blob, blob placed at random."""
    rng = np.random.default_rng(seed)
    inputs, labels = [], []
    margin = size // 6
    for i in range(n):
        label = i % classes
        center = rng.integers(margin, size - margin, 2)
        inputs.append(blob_image((classes, size, size), label, center, rng=rng, **kw))
        labels.append(label)
    return Dataset(inputs, labels)


def write_demo(out_dir) -> None:
    out = Path(out_dir)
    model_save(desk_cnn(), out / "desk_cnn" / "model.json")
    model_save(blob_classifier(), out / "blob" / "model.json")
    save_dataset(blob_dataset(), out / "blob" / "data")
    rng = np.random.default_rng(1)
    save_dataset(Dataset([rng.random((1, 3, 64, 64), dtype=np.float32) for _ in range(8)], [0] * 8), out / "desk_cnn" / "data")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write desk-scale demo models and datasets.")
    parser.add_argument("out_dir")
    args = parser.parse_args(argv)
    write_demo(args.out_dir)
    print(f"wrote demo models and datasets under {args.out_dir}")


if __name__ == "__main__":
    main()
