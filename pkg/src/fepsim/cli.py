"""Command-line harness: single runs, node-count sweeps, paired
baseline-vs-fep comparisons and an SL-REQ pipeline debugger.

Every invocation is reproducible: rerunning with identical inputs overwrites
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import metrics as metrics_mod
from .config import ConfigError, ScenarioConfig, load_config
from .sim import run_scenario
from .slreq import (
    FormulaVariant,
    FuzzyGrade,
    HopSessionView,
    PhRecord,
    evaluate_trace,
)


def _parse_seeds(raw: str) -> list[int]:
    """Seed lists: comma separated values and/or inclusive a:b ranges."""
    seeds: list[int] = []
    for piece in raw.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if ":" in piece:
            lo, hi = piece.split(":", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(piece))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fepsim",
        description="MANET simulator with the FEP sleep overlay",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="scenario file (defaults used if omitted)")
        p.add_argument("--nodes", type=int, help="override node count")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel runs (independent processes)")
        p.add_argument("--log", action="store_true",
                       help="write the event log for every run")
        p.add_argument("--variant-ph", choices=("semantic", "literal"))
        p.add_argument("--variant-ccs", choices=("semantic", "literal"))
        p.add_argument("--table3-orientation",
                       choices=("temp-dominant", "cl-dominant"),
                       help="orientation of the third rule table (SLPR)")

    p_run = sub.add_parser("run", help="execute one scenario")
    common(p_run)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--protocol", choices=("baseline", "fep"))

    p_sweep = sub.add_parser("sweep", help="iterate node counts")
    common(p_sweep)
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--protocol", choices=("baseline", "fep", "both"),
                         default="both")
    p_sweep.add_argument("--node-counts", default="30,60,120",
                         help="comma-separated node counts")

    p_cmp = sub.add_parser("compare",
                           help="paired baseline vs fep runs over seeds")
    common(p_cmp)
    p_cmp.add_argument("--seeds", default="0:9",
                       help="seed list, e.g. 0:9 or 1,2,5")

    p_eval = sub.add_parser("slreq-eval",
                            help="print the fuzzy pipeline trace for a JSON input")
    p_eval.add_argument("--input", required=True,
                        help="JSON file describing the controller inputs")
    return parser


def _apply_overrides(cfg: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    if getattr(args, "nodes", None) is not None:
        cfg = cfg.with_overrides(node_count=args.nodes)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    protocol = getattr(args, "protocol", None)
    if protocol not in (None, "both"):
        cfg = cfg.with_overrides(protocol=protocol)
    if args.log:
        cfg = cfg.with_overrides(collect_log=True)
    variant = cfg.variant
    if args.variant_ph or args.variant_ccs or args.table3_orientation:
        variant = FormulaVariant(
            ph=args.variant_ph or variant.ph,
            ccs=args.variant_ccs or variant.ccs,
            slpr_orientation=(args.table3_orientation or
                              variant.slpr_orientation).replace("-", "_"),
        )
        cfg = cfg.with_overrides(variant=variant)
    return cfg


def _load_base_config(args: argparse.Namespace) -> ScenarioConfig:
    if args.config:
        return load_config(args.config)
    return ScenarioConfig()


def _run_job(cfg: ScenarioConfig, log_path: str | None):
    result = run_scenario(cfg)
    if log_path is not None:
        result.log.write(log_path)
    return result.report


def _run_all(configs: list[ScenarioConfig], out_dir: str, jobs: int,
             want_log: bool) -> list[metrics_mod.MetricsReport]:
    paths = [
        os.path.join(out_dir,
                     f"events_{c.protocol}_n{c.node_count}_s{c.seed}.jsonl")
        if want_log else None
        for c in configs
    ]
    if jobs <= 1 or len(configs) == 1:
        return [_run_job(c, p) for c, p in zip(configs, paths)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_job, configs, paths))


def _write_report(report: metrics_mod.MetricsReport, out_dir: str, fmt: str) -> str:
    stem = f"report_{report.protocol}_n{report.node_count}_s{report.seed}"
    path = os.path.join(out_dir, f"{stem}.{fmt}")
    if fmt == "csv":
        metrics_mod.write_csv([report], path)
    else:
        metrics_mod.write_json(metrics_mod.report_to_dict(report), path)
    return path


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_base_config(args), args)
    os.makedirs(args.out, exist_ok=True)
    reports = _run_all([cfg], args.out, 1, cfg.collect_log)
    path = _write_report(reports[0], args.out, args.format)
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    base = _apply_overrides(_load_base_config(args), args)
    counts = [int(x) for x in args.node_counts.split(",") if x.strip()]
    if not counts:
        print("error: empty node-count list", file=sys.stderr)
        return 2
    protocols = ("baseline", "fep") if args.protocol == "both" else (args.protocol,)
    configs = []
    for protocol in protocols:
        for count in counts:
            configs.append(base.with_overrides(protocol=protocol,
                                               node_count=count,
                                               positions=None))
    os.makedirs(args.out, exist_ok=True)
    reports = _run_all(configs, args.out, args.jobs, base.collect_log)
    for report in reports:
        print(f"wrote {_write_report(report, args.out, args.format)}")
    combined = os.path.join(args.out, f"sweep.{args.format}")
    if args.format == "csv":
        metrics_mod.write_csv(reports, combined)
    else:
        metrics_mod.write_json([metrics_mod.report_to_dict(r) for r in reports],
                               combined)
    print(f"wrote {combined}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    base = _apply_overrides(_load_base_config(args), args)
    try:
        seeds = _parse_seeds(args.seeds)
    except ValueError as exc:
        print(f"error: bad --seeds: {exc}", file=sys.stderr)
        return 2
    configs = []
    for seed in seeds:
        for protocol in ("baseline", "fep"):
            configs.append(base.with_overrides(seed=seed, protocol=protocol))
    os.makedirs(args.out, exist_ok=True)
    reports = _run_all(configs, args.out, args.jobs, base.collect_log)
    for report in reports:
        print(f"wrote {_write_report(report, args.out, args.format)}")
    baseline = [r for r in reports if r.protocol == "baseline"]
    fep = [r for r in reports if r.protocol == "fep"]
    summary = metrics_mod.paired_summary(baseline, fep)
    combined = os.path.join(args.out, f"runs.{args.format}")
    if args.format == "csv":
        metrics_mod.write_csv(reports, combined)
    else:
        metrics_mod.write_json([metrics_mod.report_to_dict(r) for r in reports],
                               combined)
    print(f"wrote {combined}")
    summary_path = os.path.join(args.out, "compare_summary.json")
    metrics_mod.write_json(summary, summary_path)
    print(f"wrote {summary_path}")
    if args.format == "csv":
        table_path = os.path.join(args.out, "compare_summary.csv")
        _write_compare_csv(summary, table_path)
        print(f"wrote {table_path}")
    return 0


def _write_compare_csv(summary: dict, path: str) -> None:
    import csv as _csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["metric", "median_baseline", "median_fep",
                         "median_delta", "median_improvement_pct"])
        for name, data in summary["metrics"].items():
            if data is None:
                writer.writerow([name, "", "", "", ""])
                continue
            writer.writerow([name, data["median_baseline"],
                             data["median_variant"], data["median_delta"],
                             data["median_improvement_pct"]])


def _cmd_slreq_eval(args: argparse.Namespace) -> int:
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return 2
    try:
        rec = PhRecord(int(spec["sent"]), int(spec["forwarded"]),
                       int(spec["sleep_requests"]))
        views = tuple(
            HopSessionView(int(v["forwarded"]), int(v["remaining"]),
                           tuple(FuzzyGrade[g] for g in v.get("alt_grades", [])))
            for v in spec.get("views", [])
        )
        tau = float(spec["tau"])
        uplink_taus = [float(t) for t in spec["uplink_taus"]]
        nap_limit = float(spec.get("nap_limit_ms", 50.0))
        vspec = spec.get("variant", {})
        variant = FormulaVariant(
            ph=vspec.get("ph", "semantic"),
            ccs=vspec.get("ccs", "semantic"),
            slpr_orientation=vspec.get("slpr_orientation", "temp_dominant"),
        )
        trace = evaluate_trace(rec, views, tau, uplink_taus, nap_limit, variant)
    except (KeyError, ValueError) as exc:
        print(f"error: bad input: {exc}", file=sys.stderr)
        return 2
    print(f"inputs: sent={rec.sent} forwarded={rec.forwarded} "
          f"sleep_requests={rec.sleep_requests} tau={tau} "
          f"uplink_taus={uplink_taus} views={len(views)}")
    print(f"variant: ph={variant.ph} ccs={variant.ccs} "
          f"slpr_orientation={variant.slpr_orientation}")
    print(f"cl   = {trace.cl:.6f} in [{trace.cl_bounds.low:.6f}, "
          f"{trace.cl_bounds.high:.6f}] -> {trace.cl_grade.name}")
    print(f"ph   = {trace.ph:.6f} -> {trace.ph_grade.name}")
    print(f"ccs  = {trace.ccs:.6f} -> {trace.ccs_grade.name}")
    print(f"temp = {trace.temp.name}")
    print(f"SLPR = {trace.slpr.name}")
    if trace.decision.granted:
        print(f"decision: grant {trace.decision.duration_ms:.3f} ms")
    else:
        print("decision: deny")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_slreq_eval(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
