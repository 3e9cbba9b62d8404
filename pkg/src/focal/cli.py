"""``focal`` command line: inspect, plan-k, search-tau, eval, infer, convert.

Exit codes: 0 success, 2 input error, 3 infeasible budget, 4 search timed
out, 5 targets infeasible.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import load_dataset, random_inputs
from .errors import FocalError, InfeasibleBudget
from .graph import convert_to_fcnn, count_macs, downsample_points, forward, split_index_for_conv_count
from .kernel import BlockConfig, mask_export_pgm
from .manifest import model_load, model_save
from .planner import (
    INFEASIBLE,
    SUCCESS,
    DatasetOracle,
    EnergyProfile,
    EvalReport,
    SearchConfig,
    energy_table,
    evaluate_model,
    improvement,
    profile_energy,
    search_tau,
    select_k,
)
from .tensor import tensor_read

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BUDGET = 3
EXIT_TIMEOUT = 4
EXIT_INFEASIBLE = 5

log = logging.getLogger("focal")


def table(headers, rows) -> str:
    """Left-aligned text table."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _fill(text: str):
    return text if text == "bias" else float(text)


def _block(args) -> BlockConfig:
    return BlockConfig(args.block_size) if args.block_size else BlockConfig.default()


# -- subcommands --------------------------------------------------------------


def cmd_inspect(args) -> int:
    g = model_load(args.manifest)
    points = set(downsample_points(g))
    macs = {e.index: e.dense for e in count_macs(g).entries}
    rows = []
    for i, layer in enumerate(g.layers):
        extra = ""
        if hasattr(layer, "params"):
            p = layer.params
            extra = f"{p.kernel_h}x{p.kernel_w} s{p.stride} p{p.padding}"
        elif layer.type == "maxpool":
            extra = f"{layer.kernel}x{layer.kernel} s{layer.stride}"
        elif layer.type == "threshold_aoi":
            extra = f"tau={layer.tau:.6g}"
        rows.append([i, layer.type, extra, g.in_dims(i), g.out_dims(i), macs.get(i, 0), "yes" if i in points else ""])
    print(f"model {g.name}: input {g.input_dims}, output {g.output_dims}")
    print(table(["idx", "type", "config", "in", "out", "dense_macs", "downsample"], rows))
    print(f"total dense MACs: {sum(macs.values())}")
    print(f"downsample points (candidate k): {sorted(points)}")
    return EXIT_OK


def cmd_plan_k(args) -> int:
    g = None
    if args.profile:
        profile = EnergyProfile.load(args.profile)
    elif args.manifest:
        g = model_load(args.manifest)
        calib = None
        if args.proxy == "time":
            if args.dataset:
                calib = load_dataset(args.dataset, g.input_dims).inputs[: args.calibration]
            else:
                calib = random_inputs(g.input_dims, args.calibration, args.seed)
        profile = profile_energy(g, args.proxy, calib)
    else:
        raise FocalError("plan-k needs a model manifest or --profile")
    if args.overhead is not None:
        profile.overhead = args.overhead
    rows = [[k, _fmt(e), "yes" if e <= args.budget else ""] for k, e in energy_table(profile, args.aoi_fraction)]
    print(f"profile: mode={profile.mode} N={profile.n} overhead={_fmt(float(profile.overhead))}")
    print(table(["k", "projected_energy", "fits_budget"], rows))
    result = {"profile": profile.to_dict(), "budget": args.budget, "aoi_fraction": args.aoi_fraction,
              "table": [{"k": k, "energy": e} for k, e in energy_table(profile, args.aoi_fraction)]}
    code = EXIT_OK
    try:
        k = select_k(profile, args.budget, args.aoi_fraction)
    except InfeasibleBudget as exc:
        print(f"infeasible: {exc}")
        result.update(status="infeasible", k=None)
        code = EXIT_BUDGET
    else:
        result.update(status="ok", k=k)
        msg = f"selected k = {k} dense conv layers"
        if g is not None:
            split = split_index_for_conv_count(g, k)
            result["split_layer"] = split
            msg += f" (threshold after layer {split}; use --k {split} with search-tau/convert)"
        print(msg)
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return code


def _target(text: str, reference: float) -> float:
    """Absolute value, or a percentage of ``reference`` when suffixed with '%'."""
    if text.endswith("%"):
        return float(text[:-1]) / 100 * reference
    return float(text)


def cmd_search_tau(args) -> int:
    g = model_load(args.manifest)
    ds = load_dataset(args.dataset, g.input_dims)
    oracle = DatasetOracle(ds, args.warmup, args.repeats, args.timing_samples)
    T, A = args.T, args.A
    if T.endswith("%") or A.endswith("%"):
        dense = oracle(g)
        log.info("dense model: accuracy %.4f, latency %.3f ms", dense.accuracy, dense.latency_ms)
        T, A = _target(T, dense.latency_ms), _target(A, dense.accuracy)
    cfg = SearchConfig(float(T), min(float(A), 1.0), args.eps0, args.eps_min, args.max_passes, args.timeout)
    trace = search_tau(g, args.k, oracle, cfg, ds.inputs[: args.calibration], _block(args), _fill(args.fill))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.json", out / "trace.csv")
    rows = [[r.pass_no, r.phase, _fmt(r.tau), _fmt(r.accuracy), _fmt(r.latency_ms), _fmt(r.aoi_fraction)] for r in trace.records]
    print(f"targets: latency <= {cfg.T:.4g} ms, accuracy >= {cfg.A:.4g}")
    print(table(["pass", "phase", "tau", "accuracy", "latency_ms", "aoi_fraction"], rows))
    print(f"status: {trace.status}" + (f", tau = {trace.tau!r}" if trace.tau is not None else ""))
    if trace.status == SUCCESS:
        fcnn = convert_to_fcnn(g, args.k, trace.tau, _block(args), _fill(args.fill))
        model_save(fcnn, out / "fcnn.json")
        print(f"wrote {out / 'fcnn.json'}")
        return EXIT_OK
    return EXIT_INFEASIBLE if trace.status == INFEASIBLE else EXIT_TIMEOUT


def cmd_eval(args) -> int:
    g = model_load(args.manifest)
    ds = load_dataset(args.dataset, g.input_dims)
    report = evaluate_model(g, ds, args.warmup, args.repeats, args.timing_samples)
    baseline = None
    if args.baseline:
        with open(args.baseline, encoding="utf-8") as f:
            baseline = EvalReport.from_dict(json.load(f))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.json", out / "report.csv", baseline)
    d = report.to_dict()
    headers = ["metric", "value"]
    rows = [[k, _fmt(v)] for k, v in d.items()]
    if baseline is not None:
        imp = improvement(baseline, report)
        headers += ["baseline", "improvement"]
        b = baseline.to_dict()
        rows = [[k, _fmt(v), _fmt(b[k]), f"{imp[k] * 100:.2f}%" if k in imp else ""] for k, v in d.items()]
    print(table(headers, rows))
    return EXIT_OK


def cmd_infer(args) -> int:
    g = model_load(args.manifest)
    x = tensor_read(args.tensor)
    res = forward(g, x)
    logits = res.output.reshape(-1)
    print(f"label: {int(np.argmax(logits))}")
    if res.aoi is not None:
        print(f"aoi fraction: {res.aoi.fraction():.4f}")
    if args.export_mask:
        if res.aoi is None:
            print("model has no threshold layer; no mask written")
        else:
            mask_export_pgm(res.aoi, args.export_mask)
            print(f"wrote mask {args.export_mask}")
    return EXIT_OK


def cmd_convert(args) -> int:
    g = model_load(args.manifest)
    fcnn = convert_to_fcnn(g, args.k, args.tau, _block(args), _fill(args.fill))
    model_save(fcnn, args.output)
    print(f"wrote {args.output}: {len(fcnn.layers)} layers, threshold after layer {args.k}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="focal", description="Focused-convolution CNN inference and planning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def focus_opts(p):
        p.add_argument("--block-size", type=int, default=None, help="default: $FOCAL_BLOCK_SIZE or 8")
        p.add_argument("--fill", default="0.0", help="value for skipped outputs, or 'bias'")

    def timing_opts(p):
        p.add_argument("--warmup", type=int, default=2)
        p.add_argument("--repeats", type=int, default=5)
        p.add_argument("--timing-samples", type=int, default=8)

    p = sub.add_parser("inspect", help="print layer table, MACs and downsample points")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("plan-k", help="choose how many convs stay dense under an energy budget")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--profile", help="EnergyProfile JSON instead of profiling a model")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--aoi-fraction", type=float, required=True)
    p.add_argument("--proxy", choices=("mac", "time"), default="mac")
    p.add_argument("--overhead", type=float, default=None, help="override the per-layer overhead c")
    p.add_argument("--dataset", help="calibration inputs for --proxy time")
    p.add_argument("--calibration", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the k report here")
    p.set_defaults(func=cmd_plan_k)

    p = sub.add_parser("search-tau", help="search the threshold for latency/accuracy targets")
    p.add_argument("manifest")
    p.add_argument("dataset")
    p.add_argument("--k", type=int, required=True, help="layer index the threshold follows")
    p.add_argument("-T", required=True, help="latency target in ms, or N%% of the dense latency")
    p.add_argument("-A", required=True, help="accuracy target in [0,1], or N%% of the dense accuracy")
    p.add_argument("--eps0", type=float, default=None)
    p.add_argument("--eps-min", type=float, default=None)
    p.add_argument("--max-passes", type=int, default=16)
    p.add_argument("--timeout", type=float, default=600.0, help="wall-clock limit, seconds")
    p.add_argument("--calibration", type=int, default=32, help="samples used to initialise tau")
    p.add_argument("--out-dir", default=".")
    focus_opts(p)
    timing_opts(p)
    p.set_defaults(func=cmd_search_tau)

    p = sub.add_parser("eval", help="accuracy, latency, MACs and AoI statistics")
    p.add_argument("manifest")
    p.add_argument("dataset")
    p.add_argument("--baseline", help="report.json of the unmodified model")
    p.add_argument("--out-dir", default=".")
    timing_opts(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify one tensor file")
    p.add_argument("manifest")
    p.add_argument("tensor")
    p.add_argument("--export-mask", help="write the AoI as a PGM image")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("convert", help="write an fCNN manifest for a given k and tau")
    p.add_argument("manifest")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("-o", "--output", required=True)
    focus_opts(p)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InfeasibleBudget as exc:
        print(f"focal: infeasible: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (FocalError, OSError, ValueError) as exc:
        print(f"focal: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
