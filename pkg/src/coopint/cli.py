"""Command-line interface: batch runs, scenario enumeration, metric reports
and charts."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .batch import (BatchConfig, prepare, read_manifest, result_from_artifacts,
                    run_batch, summary_rows, write_logs, write_manifest,
                    write_summary)
from .geometry import build_lehr_junction, load_map
from .metrics import MetricsReport, compute_metrics
from .scenarios import enumerate_scenarios, sample_random_scenarios
from .sim import PLANNERS

#: Thresholds enforced by `run --check`.
CHECK_MIN_DEVIATING_CAV = 0.6
CHECK_MIN_DEVIATING_MIXED = 0.1
CHECK_MAX_TIMEOUT_SHARE = 0.03

RANDOM_SCENARIO_COUNT = 200
RANDOM_SCENARIO_SEED = 42


def _lane_map(args):
    if getattr(args, "map", None):
        return load_map(Path(args.map).read_text())
    return build_lehr_junction()


def _scenario_set(args, lane_map):
    if args.manifest:
        return read_manifest(Path(args.manifest))
    scens = enumerate_scenarios(lane_map)
    scens += sample_random_scenarios(args.n_random, args.scenario_seed, lane_map)
    if args.limit is not None:
        scens = scens[:args.limit]
    return scens


def _run_dir(out: Path, planner: str, traffic: str) -> Path:
    return out / "runs" / planner / traffic


def cmd_run(args) -> int:
    lane_map = _lane_map(args)
    scens = _scenario_set(args, lane_map)
    out = Path(args.out)
    cfg = BatchConfig(planner=args.planner, traffic=args.traffic,
                      seed=args.seed, rejection_prob=args.rejection_prob,
                      max_sim_time=args.max_sim_time)
    progress = None
    if not args.quiet:
        def progress(k, n, sid):
            print(f"\r[{args.planner}/{args.traffic}] {k}/{n} {sid}   ",
                  end="", file=sys.stderr, flush=True)
    results = run_batch(scens, cfg, lane_map, progress)
    if not args.quiet:
        print(file=sys.stderr)

    if args.planner == "nc":
        baselines = results
    else:
        base_cfg = BatchConfig(planner="nc", traffic=args.traffic, seed=args.seed,
                               max_sim_time=args.max_sim_time)
        baselines = run_batch(scens, base_cfg, lane_map)

    run_dir = _run_dir(out, args.planner, args.traffic)
    write_logs(results, run_dir)
    write_summary(summary_rows(results, baselines, lane_map),
                  run_dir / "summary.csv")
    write_manifest(prepare(scens, cfg), out / "manifest.txt")
    report = compute_metrics(results, baselines, lane_map)
    _print_report(report, args.traffic)

    if args.check:
        failures = _check_thresholds(report, args.planner, args.traffic)
        for f in failures:
            print(f"CHECK FAILED: {f}", file=sys.stderr)
        return 1 if failures else 0
    return 0


def _print_report(report: MetricsReport, traffic: str) -> None:
    print(f"planner={report.planner} traffic={traffic} "
          f"scenarios={report.n_scenarios}")
    print(f"deviating_share={report.deviating_share:.3f} "
          f"collisions={report.collisions} timeouts={report.timeouts} "
          f"excluded_runs={report.excluded_runs}")
    for road in ("major", "minor"):
        print(f"{road}: median_relative_duration_s="
              f"{report.median_relative_duration(road):.2f} "
              f"stopped_share={report.stopped_share.get(road, float('nan')):.3f} "
              f"baseline_stopped_share="
              f"{report.baseline_stopped_share.get(road, float('nan')):.3f}")


def _check_thresholds(report: MetricsReport, planner: str,
                      traffic: str) -> list[str]:
    failures = []
    if report.collisions:
        failures.append(f"{report.collisions} collision runs (expected 0)")
    if report.n_scenarios and (report.timeouts / report.n_scenarios
                               > CHECK_MAX_TIMEOUT_SHARE):
        failures.append(f"timeout share {report.timeouts}/{report.n_scenarios} "
                        f"exceeds {CHECK_MAX_TIMEOUT_SHARE:.0%}")
    if planner in ("opt", "rollout"):
        floor = (CHECK_MIN_DEVIATING_CAV if traffic == "cav"
                 else CHECK_MIN_DEVIATING_MIXED)
        if report.deviating_share < floor:
            failures.append(f"deviating share {report.deviating_share:.3f} "
                            f"below {floor}")
    return failures


def cmd_enumerate(args) -> int:
    lane_map = _lane_map(args)
    scens = enumerate_scenarios(lane_map)
    scens += sample_random_scenarios(args.n_random, args.scenario_seed, lane_map)
    out = Path(args.out)
    write_manifest(scens, out / "manifest.txt")
    print(f"{len(scens)} scenarios "
          f"({sum(s.source == 'enumerated' for s in scens)} enumerated, "
          f"{sum(s.source == 'random' for s in scens)} random) "
          f"-> {out / 'manifest.txt'}")
    return 0


def _load_results(out: Path, planner: str, traffic: str, scens, lane_map):
    run_dir = _run_dir(out, planner, traffic)
    summary = run_dir / "summary.csv"
    if not summary.exists():
        raise FileNotFoundError(f"no summary at {summary}; run "
                                f"`run --planner {planner} --traffic {traffic}` first")
    outcomes = {}
    with summary.open() as f:
        for row in csv.DictReader(f):
            outcomes[row["scenario_id"]] = row["outcome"]
    results = []
    for s in scens:
        log = run_dir / f"{s.id}.log"
        results.append(result_from_artifacts(
            s, planner, 0, log.read_text(), outcomes[s.id], lane_map))
    return results


def cmd_report(args) -> int:
    lane_map = _lane_map(args)
    out = Path(args.out)
    scens = read_manifest(out / "manifest.txt")
    results = _load_results(out, args.planner, args.traffic, scens, lane_map)
    baselines = _load_results(out, "nc", args.traffic, scens, lane_map)
    report = compute_metrics(results, baselines, lane_map)
    _print_report(report, args.traffic)
    report_dir = out / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{args.planner}_{args.traffic}"
    with (report_dir / f"{stem}_metrics.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("metric", "value"))
        w.writerow(("deviating_share", f"{report.deviating_share:.6f}"))
        w.writerow(("collisions", report.collisions))
        w.writerow(("timeouts", report.timeouts))
        w.writerow(("excluded_runs", report.excluded_runs))
        for road in ("major", "minor"):
            w.writerow((f"median_relative_duration_{road}_s",
                        f"{report.median_relative_duration(road):.6f}"))
            w.writerow((f"stopped_share_{road}",
                        f"{report.stopped_share.get(road, float('nan')):.6f}"))
            w.writerow((f"baseline_stopped_share_{road}",
                        f"{report.baseline_stopped_share.get(road, float('nan')):.6f}"))
    with (report_dir / f"{stem}_relative_durations.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("road_type", "relative_duration_s"))
        for road in ("major", "minor"):
            for d in report.relative_duration[road]:
                w.writerow((road, f"{d:.6f}"))
    with (report_dir / f"{stem}_avg_speeds.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("avg_speed_mps",))
        for v in report.avg_speed:
            w.writerow((f"{v:.6f}",))
    print(f"reports -> {report_dir}/{stem}_*.csv")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    report_dir = out / "reports"
    stem = f"{args.planner}_{args.traffic}"
    durations = {"major": [], "minor": []}
    with (report_dir / f"{stem}_relative_durations.csv").open() as f:
        for row in csv.DictReader(f):
            durations[row["road_type"]].append(float(row["relative_duration_s"]))
    speeds = []
    with (report_dir / f"{stem}_avg_speeds.csv").open() as f:
        speeds = [float(row["avg_speed_mps"]) for row in csv.DictReader(f)]
    metrics = {}
    with (report_dir / f"{stem}_metrics.csv").open() as f:
        for row in csv.DictReader(f):
            metrics[row["metric"]] = float(row["value"])

    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for road, color in (("major", "tab:blue"), ("minor", "tab:orange")):
        if durations[road]:
            axes[0].hist(durations[road], bins=30, alpha=0.6, label=road,
                         color=color)
    axes[0].axvline(0.0, color="k", lw=0.8)
    axes[0].set_xlabel("relative duration vs. baseline (s)")
    axes[0].set_ylabel("vehicles")
    if any(durations.values()):
        axes[0].legend()
    labels, shares = [], []
    for road in ("major", "minor"):
        labels += [f"{road}\n{args.planner}", f"{road}\nnc"]
        shares += [metrics.get(f"stopped_share_{road}", float("nan")),
                   metrics.get(f"baseline_stopped_share_{road}", float("nan"))]
    axes[1].bar(labels, shares, color=["tab:green", "tab:gray"] * 2)
    axes[1].set_ylabel("stopped share")
    if speeds:
        axes[2].hist(speeds, bins=30, color="tab:purple")
    axes[2].set_xlabel("average speed (m/s)")
    axes[2].set_ylabel("vehicles")
    fig.suptitle(f"{args.planner} / {args.traffic} — deviating share "
                 f"{metrics.get('deviating_share', float('nan')):.2f}")
    fig.tight_layout()
    target = report_dir / f"{stem}_charts.png"
    fig.savefig(target, dpi=130)
    print(f"chart -> {target}")
    return 0


def _add_common(p, with_planner=True):
    p.add_argument("--out", default="results", help="results directory")
    p.add_argument("--map", default=None, help="map document (default: built-in junction)")
    if with_planner:
        p.add_argument("--planner", choices=PLANNERS, required=True)
        p.add_argument("--traffic", choices=("cav", "mixed"), default="cav")


def _add_scenario_source(p):
    p.add_argument("--manifest", default=None,
                   help="run scenarios from an existing manifest file")
    p.add_argument("--n-random", type=int, default=RANDOM_SCENARIO_COUNT)
    p.add_argument("--scenario-seed", type=int, default=RANDOM_SCENARIO_SEED)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopint",
        description="Cooperative intersection planning: batch simulation, "
                    "scenario enumeration, metric reports and charts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario batch and write logs + summary")
    _add_common(p)
    _add_scenario_source(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rejection-prob", type=float, default=0.0)
    p.add_argument("--max-sim-time", type=float, default=120.0)
    p.add_argument("--limit", type=int, default=None,
                   help="only run the first N scenarios")
    p.add_argument("--check", action="store_true",
                   help="exit nonzero when acceptance thresholds regress")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("enumerate", help="write the scenario manifest")
    _add_common(p, with_planner=False)
    _add_scenario_source(p)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("report", help="aggregate metrics from stored logs")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="render charts from report tables")
    _add_common(p)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
