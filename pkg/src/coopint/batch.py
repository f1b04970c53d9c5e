"""Batch orchestration: run scenario sets through a planner configuration,
write per-run trajectory logs and the summary table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .geometry import LaneMap
from .metrics import clip_result, is_deviating, road_type
from .prediction import CompiledScene
from .scenarios import Scenario, ScenarioVehicle, assign_mixed
from .sim import ScenarioResult, SimConfig, Simulation, run_scenario

TRAFFIC_MODES = ("cav", "mixed")


@dataclass(frozen=True)
class BatchConfig:
    planner: str = "nc"
    traffic: str = "cav"
    seed: int = 0
    rejection_prob: float = 0.0
    max_sim_time: float = 120.0

    def __post_init__(self):
        if self.traffic not in TRAFFIC_MODES:
            raise ValueError(f"unknown traffic mode {self.traffic!r}")

    def sim_config(self) -> SimConfig:
        return SimConfig(planner=self.planner, seed=self.seed,
                         rejection_prob=self.rejection_prob,
                         max_sim_time=self.max_sim_time)


def prepare(scenarios: list[Scenario], cfg: BatchConfig) -> list[Scenario]:
    if cfg.traffic == "mixed":
        return [assign_mixed(s, 0.5, cfg.seed) for s in scenarios]
    return scenarios


def run_batch(scenarios: list[Scenario], cfg: BatchConfig, lane_map: LaneMap,
              progress=None) -> list[ScenarioResult]:
    prepared = prepare(scenarios, cfg)
    sim_cfg = cfg.sim_config()
    results = []
    for k, s in enumerate(prepared):
        results.append(run_scenario(s, sim_cfg, lane_map))
        if progress is not None:
            progress(k + 1, len(prepared), s.id)
    return results


# -- artifacts -------------------------------------------------------------


def format_log(result: ScenarioResult) -> str:
    """Delimiter-separated trajectory log, one row per vehicle per step."""
    buf = io.StringIO()
    buf.write("t,vehicle_id,is_cav,lane,s,x,y,v,a\n")
    flags = {sv.vehicle_id: sv.is_cav and result.planner != "hdv"
             for sv in result.scenario.vehicles}
    rows = []
    for vid in sorted(result.trajectories):
        for t, lane, s, x, y, v, a in result.trajectories[vid]:
            rows.append((t, vid, lane, s, x, y, v, a))
    rows.sort(key=lambda r: (r[0], r[1]))
    for t, vid, lane, s, x, y, v, a in rows:
        buf.write(f"{t:.2f},{vid},{int(flags[vid])},{lane},"
                  f"{s:.6f},{x:.6f},{y:.6f},{v:.6f},{a:.6f}\n")
    return buf.getvalue()


def write_logs(results: list[ScenarioResult], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        (out_dir / f"{r.scenario.id}.log").write_text(format_log(r))


def summary_rows(results: list[ScenarioResult], baselines: list[ScenarioResult],
                 lane_map: LaneMap) -> list[dict]:
    by_id = {b.scenario.id: b for b in baselines}
    rows = []
    for r in sorted(results, key=lambda x: x.scenario.id):
        deviating = is_deviating(r, by_id[r.scenario.id])
        clipped = clip_result(r, lane_map)
        for sv in r.scenario.vehicles:
            c = clipped[sv.vehicle_id]
            rows.append({
                "scenario_id": r.scenario.id,
                "vehicle_id": sv.vehicle_id,
                "arm": sv.arm,
                "road_type": road_type(sv.arm),
                "is_cav": int(sv.is_cav and r.planner != "hdv"),
                "duration_s": f"{c.duration:.6f}" if c else "",
                "stopped": int(c.stopped) if c else "",
                "avg_speed_mps": f"{c.avg_speed:.6f}" if c else "",
                "deviating": int(deviating),
                "outcome": r.outcome,
            })
    return rows


SUMMARY_COLUMNS = ("scenario_id", "vehicle_id", "arm", "road_type", "is_cav",
                   "duration_s", "stopped", "avg_speed_mps", "deviating",
                   "outcome")


def write_summary(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def write_manifest(scenarios: list[Scenario], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in scenarios:
        spec = ";".join(f"{v.arm}:{v.slot}:{v.target}:{int(v.is_cav)}"
                        for v in s.vehicles)
        lines.append(f"{s.id},{s.source},{len(s.vehicles)},{spec}")
    path.write_text("\n".join(lines) + "\n")


def compile_truth_scene(scenario: Scenario, planner: str,
                        lane_map: LaneMap) -> CompiledScene:
    return Simulation(scenario, SimConfig(planner=planner), lane_map)._truth


def read_manifest(path: Path) -> list[Scenario]:
    scenarios = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        sid, source, _count, spec = line.split(",", 3)
        vehicles = []
        for entry in spec.split(";"):
            arm, slot, target, cav = entry.split(":")
            vehicles.append(ScenarioVehicle(f"{arm}{slot}", arm, int(slot),
                                            target, is_cav=bool(int(cav))))
        scenarios.append(Scenario(sid, tuple(vehicles), source))
    return scenarios


def parse_log(text: str) -> dict[str, list[tuple]]:
    """Inverse of format_log: trajectory rows keyed by vehicle id."""
    out: dict[str, list[tuple]] = {}
    lines = text.splitlines()
    for line in lines[1:]:
        t, vid, _cav, lane, s, x, y, v, a = line.split(",")
        out.setdefault(vid, []).append(
            (float(t), lane, float(s), float(x), float(y), float(v), float(a)))
    return out


def result_from_artifacts(scenario: Scenario, planner: str, seed: int,
                          log_text: str, outcome: str,
                          lane_map: LaneMap) -> ScenarioResult:
    """Reconstruct a result from a stored trajectory log, recomputing the
    per-zone crossing order from the recorded positions."""
    trajectories = parse_log(log_text)
    for sv in scenario.vehicles:
        trajectories.setdefault(sv.vehicle_id, [])
    scene = compile_truth_scene(scenario, planner, lane_map)
    ids = scene.ids
    entries: dict[tuple[str, str], list[tuple[float, str]]] = {}
    for o in range(len(scene.occ_veh)):
        vid = ids[int(scene.occ_veh[o])]
        entry_s = float(scene.occ_entry[o])
        for t, _lane, s, *_rest in trajectories[vid]:
            if s >= entry_s:
                key = scene.zone_keys[int(scene.occ_zone[o])]
                entries.setdefault(key, []).append((t, vid))
                break
    order = {k: [vid for _, vid in sorted(v)] for k, v in sorted(entries.items())}
    duration = max((rows[-1][0] for rows in trajectories.values() if rows),
                   default=0.0)
    return ScenarioResult(scenario=scenario, planner=planner, seed=seed,
                          outcome=outcome, trajectories=trajectories,
                          crossing_order=order, maneuvers_issued=0,
                          planner_cycles=0, aborts=0, entry_violations=[],
                          duration=duration)
