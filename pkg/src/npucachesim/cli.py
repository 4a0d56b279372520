"""Command-line front end.

Subcommands: map (write a model mapping file), run (one scenario),
sweep (axis product of scenarios), stats (reuse histograms), compare
(speedup/reduction table of two metrics files).  Exit codes: 0 success,
1 invariant abort during simulation, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import mapper, simcore, workload
from .cachemem import HardwareConfig
from .errors import ConfigError, InvariantViolation, SimError
from .scheduler import MODE_FULL, MODES

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2

DECISION_HEADER = ["cycle", "task", "layer", "chosen_kind", "P_need",
                   "P_ahead", "downgrades"]


def _load_hw(path: str | None) -> HardwareConfig:
    if path is None:
        return HardwareConfig()
    return HardwareConfig.from_json(path)


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _parse_limits(text: str | None):
    if not text:
        return None
    try:
        return tuple(sorted(int(v) for v in text.split(",")))
    except ValueError:
        raise ConfigError(f"bad --limits value {text!r}; expected e.g. 0,48,384")


def cmd_map(args) -> int:
    hw = _load_hw(args.hw)
    model = workload.load_model(args.model, hw=hw)
    limits = _parse_limits(args.limits)
    mcts = mapper.generate_model_mcts(model, hw, limits)
    out_dir = _out_dir(args.out)
    path = os.path.join(out_dir, f"{model.name}.mct.json")
    mapper.save_mcts(path, model.name, mcts)
    print(f"wrote {path} ({len(mcts)} layer tables)")
    return EXIT_OK


def _scenario_from_args(args) -> simcore.Scenario:
    with open(args.config) as fh:
        data = json.load(fh)
    scenario = simcore.scenario_from_dict(
        data, base_dir=os.path.dirname(os.path.abspath(args.config)))
    if args.mode:
        scenario.mode = args.mode
        if scenario.mode not in MODES:
            raise ConfigError(f"unknown mode {scenario.mode!r}")
    if args.seed is not None:
        scenario.seed = args.seed
    return scenario


def _write_metrics(out_dir: str, reports, trace_rows=None,
                   decision_rows=None) -> None:
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        if len(reports) == 1:
            fh.write(reports[0].to_json())
        else:
            fh.write(json.dumps([r.to_dict() for r in reports],
                                sort_keys=True, indent=1) + "\n")
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write(simcore.reports_to_csv(reports))
    if trace_rows is not None:
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cycle", "npu", "kind", "address", "bytes"])
            writer.writerows(trace_rows)
    if decision_rows is not None:
        with open(os.path.join(out_dir, "decisions.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(DECISION_HEADER)
            writer.writerows(decision_rows)


def cmd_run(args) -> int:
    scenario = _scenario_from_args(args)
    trace_rows = None
    decision_rows = None
    if args.trace:
        trace_rows = []
        decision_rows = []
        scenario.trace = lambda *row: trace_rows.append(list(row))
        scenario.decision_log = decision_rows
    report = simcore.run(scenario)
    out_dir = _out_dir(args.out)
    _write_metrics(out_dir, [report], trace_rows, decision_rows)
    print(f"{scenario.mode}: {report.inferences} inferences in "
          f"{report.cycles} cycles, dram {report.dram_total_bytes} bytes")
    print(f"wrote {out_dir}/metrics.json and metrics.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _scenario_from_args(args)
    if not scenario.sweep:
        raise ConfigError("scenario has no 'sweep' axes")
    reports, errors = simcore.sweep(scenario)
    out_dir = _out_dir(args.out)
    _write_metrics(out_dir, reports)
    for line in errors:
        print(f"cell failed: {line}", file=sys.stderr)
    print(f"swept {len(reports)} cells -> {out_dir}/metrics.csv")
    return EXIT_OK if not errors else EXIT_INVARIANT


def cmd_stats(args) -> int:
    hw = _load_hw(args.hw)
    model = workload.load_model(args.model, hw=hw)
    stats = workload.reuse_stats(model, window=args.window, hw=hw)
    rows = [["histogram", "bucket", "pct"]]
    print(f"model {model.name}: reuse histograms (byte-weighted %)")
    for label, hist in (("reuse_count", stats.pct_by_reuse_count),
                        ("reuse_distance",
                         stats.pct_intermediate_by_reuse_distance)):
        for bucket, pct in hist.items():
            print(f"  {label:14s} {bucket:10s} {pct:6.2f}")
            rows.append([label, bucket, f"{pct:.4f}"])
    out_dir = _out_dir(args.out)
    path = os.path.join(out_dir, f"{model.name}.reuse.csv")
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    print(f"wrote {path}")
    return EXIT_OK


def _report_from_json(path: str) -> simcore.MetricsReport:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"metrics file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"metrics file {path} is not valid JSON: {exc}")
    try:
        return simcore.MetricsReport(
            label=data["label"], mode=data["mode"], seed=data["seed"],
            cycles=data["cycles"], inferences=data["inferences"],
            events=data["events"], per_model=data["per_model"],
            dram_read_bytes=data["dram_read_bytes"],
            dram_write_bytes=data["dram_write_bytes"],
            dram_bytes_by_category=data["dram_bytes_by_category"],
            cache_hits=data["cache_hits"], cache_misses=data["cache_misses"],
            hit_rate=data["hit_rate"])
    except KeyError as exc:
        raise ConfigError(f"metrics file {path} is missing field {exc}")


def cmd_compare(args) -> int:
    report = _report_from_json(args.report)
    reference = _report_from_json(args.reference)
    result = simcore.compare(report, reference)
    out_dir = _out_dir(args.out)
    with open(os.path.join(out_dir, "compare.json"), "w") as fh:
        fh.write(json.dumps(result, sort_keys=True, indent=1) + "\n")
    rows = [["model", "speedup", "dram_reduction_pct"]]
    print(f"vs reference {result['reference']}:")
    for name, entry in sorted(result["models"].items()):
        print(f"  {name:12s} speedup {entry['speedup']:.3f}  "
              f"dram -{entry['dram_reduction_pct']:.1f}%")
        rows.append([name, f"{entry['speedup']:.6g}",
                     f"{entry['dram_reduction_pct']:.4f}"])
    print(f"geomean speedup {result['geomean_speedup']:.3f}, "
          f"total dram reduction {result['dram_reduction_pct']:.1f}%")
    with open(os.path.join(out_dir, "compare.csv"), "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npucachesim",
        description="Multi-tenant NPU shared-cache simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_map = sub.add_parser("map", help="generate a model mapping file")
    p_map.add_argument("--model", required=True, help="model JSON file")
    p_map.add_argument("--hw", help="hardware config JSON file")
    p_map.add_argument("--limits", help="usage limits in pages, e.g. 0,48,384")
    p_map.add_argument("--out", default=".", help="output directory")
    p_map.set_defaults(fn=cmd_map)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--mode", help="override scheduler mode")
    p_run.add_argument("--seed", type=int, help="override scenario seed")
    p_run.add_argument("--trace", action="store_true",
                       help="write trace.csv and decisions.csv")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario sweep")
    p_sweep.add_argument("--config", required=True, help="scenario JSON file")
    p_sweep.add_argument("--mode", help="override base mode")
    p_sweep.add_argument("--seed", type=int, help="override base seed")
    p_sweep.add_argument("--out", default=".", help="output directory")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_stats = sub.add_parser("stats", help="print reuse statistics")
    p_stats.add_argument("--model", required=True, help="model JSON file")
    p_stats.add_argument("--hw", help="hardware config JSON file")
    p_stats.add_argument("--window", type=int, default=0,
                         help="analysis window in streamed bytes")
    p_stats.add_argument("--out", default=".", help="output directory")
    p_stats.set_defaults(fn=cmd_stats)

    p_cmp = sub.add_parser("compare", help="compare two metrics files")
    p_cmp.add_argument("report", help="metrics.json of the measured run")
    p_cmp.add_argument("reference", help="metrics.json of the reference run")
    p_cmp.add_argument("--out", default=".", help="output directory")
    p_cmp.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, SimError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
