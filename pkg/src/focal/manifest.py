"""JSON model manifests backed by FTNSR tensor files.

Example::

    {
      "name": "tiny",
      "input_dims": [3, 32, 32],
      "layers": [
        {"type": "conv", "in_channels": 3, "out_channels": 8, "kernel": [3, 3],
         "stride": 1, "padding": 1, "weights": "c0.w.ftnsr", "bias": "c0.b.ftnsr"},
        {"type": "relu"},
        {"type": "gap"},
        {"type": "linear", "in_features": 8, "out_features": 10,
         "weight": "fc.w.ftnsr", "bias": "fc.b.ftnsr"}
      ]
    }

Tensor paths are relative to the manifest.  Conv weights are (oc, ic, kh,
kw); biases, affine scale/shift are (1, n, 1, 1); linear weights are
(1, 1, out, in).  ``threshold_aoi.tau`` may be the strings "inf"/"-inf".
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import (
    FocalError,
    IoFailure,
    MissingTensorFile,
    ParseError,
    ShapeCompositionError,
    ShapeMismatch,
)
from .graph import (
    Affine,
    Conv,
    Flatten,
    FocusedConv,
    GlobalAvgPool,
    Linear,
    MaxPool,
    ModelGraph,
    ReLU,
    ThresholdAoI,
)
from .kernel import BlockConfig, ConvParams
from .tensor import tensor_read, tensor_write

TENSOR_FIELDS = {
    "conv": ("weights", "bias"),
    "focused_conv": ("weights", "bias"),
    "affine": ("scale", "shift"),
    "linear": ("weight", "bias"),
}


def _float_to_json(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _float_from_json(v, where):
    if isinstance(v, str):
        if v in ("inf", "+inf", "-inf"):
            return float(v)
        raise ParseError(f"{where}: expected a number or 'inf'/'-inf', got {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _int(spec, key, where, default=None):
    if key not in spec:
        if default is None:
            raise ParseError(f"{where}: missing field {key!r}")
        return default
    v = spec[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{where}: field {key!r} must be an integer, got {v!r}")
    return v


def _load_tensor(base: Path, spec, key, where):
    if key not in spec:
        raise ParseError(f"{where}: missing tensor field {key!r}")
    path = (base / spec[key]).resolve()
    if not path.is_file():
        raise MissingTensorFile(f"{where}: tensor file not found: {path}")
    return tensor_read(path), str(path)


def _layer_from_json(spec, base: Path, i: int):
    where = f"layer {i}"
    if not isinstance(spec, dict) or "type" not in spec:
        raise ParseError(f"{where}: expected an object with a 'type' field")
    kind = spec["type"]
    try:
        if kind in ("conv", "focused_conv"):
            w, wpath = _load_tensor(base, spec, "weights", where)
            b, bpath = _load_tensor(base, spec, "bias", where)
            oc, ic, kh, kw = w.shape
            kernel = spec.get("kernel", [kh, kw])
            declared = (spec.get("out_channels", oc), spec.get("in_channels", ic), *kernel)
            if tuple(declared) != w.shape:
                raise ShapeCompositionError(f"declared conv shape {tuple(declared)} disagrees with weights {w.shape}", i)
            params = ConvParams(ic, oc, kh, kw, _int(spec, "stride", where, 1), _int(spec, "padding", where, 0))
            files = {"weights": wpath, "bias": bpath}
            if kind == "conv":
                return Conv(params, w, b, files)
            fill = spec.get("fill", 0.0)
            fill = fill if fill == "bias" else _float_from_json(fill, where)
            block = BlockConfig(_int(spec, "block_size", where, BlockConfig.default().block_size))
            return FocusedConv(params, w, b, files, block=block, fill=fill)
        if kind == "threshold_aoi":
            if "tau" not in spec:
                raise ParseError(f"{where}: missing field 'tau'")
            return ThresholdAoI(_float_from_json(spec["tau"], where))
        if kind == "relu":
            return ReLU()
        if kind == "maxpool":
            k = _int(spec, "kernel", where)
            return MaxPool(k, _int(spec, "stride", where, k))
        if kind == "gap":
            return GlobalAvgPool()
        if kind == "flatten":
            return Flatten()
        if kind == "affine":
            s, spath = _load_tensor(base, spec, "scale", where)
            t, tpath = _load_tensor(base, spec, "shift", where)
            return Affine(s, t, {"scale": spath, "shift": tpath})
        if kind == "linear":
            w, wpath = _load_tensor(base, spec, "weight", where)
            b, bpath = _load_tensor(base, spec, "bias", where)
            layer = Linear(w, b, {"weight": wpath, "bias": bpath})
            for key, actual in (("in_features", layer.in_features), ("out_features", layer.out_features)):
                if spec.get(key, actual) != actual:
                    raise ShapeCompositionError(f"declared {key}={spec[key]} disagrees with weight shape {w.shape}", i)
            return layer
    except (ShapeMismatch, ValueError) as exc:
        if isinstance(exc, FocalError) and not isinstance(exc, ShapeMismatch):
            raise
        raise ShapeCompositionError(str(exc), i) from None
    raise ParseError(f"{where}: unknown layer type {kind!r}")


def model_from_dict(doc: dict, base_dir) -> ModelGraph:
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object")
    for key in ("input_dims", "layers"):
        if key not in doc:
            raise ParseError(f"manifest is missing field {key!r}")
    dims = doc["input_dims"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d > 0 for d in dims)):
        raise ParseError(f"input_dims must be three positive integers, got {dims!r}")
    base = Path(base_dir)
    layers = [_layer_from_json(spec, base, i) for i, spec in enumerate(doc["layers"])]
    return ModelGraph(tuple(dims), tuple(layers), str(doc.get("name", "model")))


def model_load(path) -> ModelGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingTensorFile(f"manifest not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    return model_from_dict(doc, path.parent)


def _tensor_ref(layer, key, array, manifest: Path, index: int, shape) -> str:
    src = layer.files.get(key)
    if src and Path(src).is_file():
        return Path(os.path.relpath(src, manifest.parent)).as_posix()
    name = f"{manifest.stem}.L{index}.{key}.ftnsr"
    target = manifest.parent / name
    tensor_write(np.asarray(array).reshape(shape), target)
    layer.files[key] = str(target.resolve())
    return name


def model_to_dict(g: ModelGraph, manifest_path) -> dict:
    """Manifest document for ``g``; writes tensors that have no source file yet."""
    manifest = Path(manifest_path).resolve()
    layers = []
    for i, layer in enumerate(g.layers):
        spec = {"type": layer.type}
        if isinstance(layer, Conv):
            p = layer.params
            spec.update(
                in_channels=p.in_channels,
                out_channels=p.out_channels,
                kernel=[p.kernel_h, p.kernel_w],
                stride=p.stride,
                padding=p.padding,
            )
            if isinstance(layer, FocusedConv):
                spec["block_size"] = layer.block.block_size
                spec["fill"] = layer.fill if layer.fill == "bias" else _float_to_json(layer.fill)
            spec["weights"] = _tensor_ref(layer, "weights", layer.weights, manifest, i, layer.weights.shape)
            spec["bias"] = _tensor_ref(layer, "bias", layer.bias, manifest, i, (1, -1, 1, 1))
        elif isinstance(layer, ThresholdAoI):
            spec["tau"] = _float_to_json(layer.tau)
        elif isinstance(layer, MaxPool):
            spec.update(kernel=layer.kernel, stride=layer.stride)
        elif isinstance(layer, Affine):
            spec["scale"] = _tensor_ref(layer, "scale", layer.scale, manifest, i, (1, -1, 1, 1))
            spec["shift"] = _tensor_ref(layer, "shift", layer.shift, manifest, i, (1, -1, 1, 1))
        elif isinstance(layer, Linear):
            spec.update(in_features=layer.in_features, out_features=layer.out_features)
            spec["weight"] = _tensor_ref(layer, "weight", layer.weight, manifest, i, (1, 1, *layer.weight.shape))
            spec["bias"] = _tensor_ref(layer, "bias", layer.bias, manifest, i, (1, -1, 1, 1))
        layers.append(spec)
    return {"name": g.name, "input_dims": list(g.input_dims), "layers": layers}


def model_save(g: ModelGraph, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = model_to_dict(g, path)
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc
