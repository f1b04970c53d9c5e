"""Trajectory clipping, crossing-order comparison, aggregate metrics and the
weighted reward score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env_model import VEHICLE_LENGTH
from .geometry import LaneMap
from .prediction import SAME_LANE_MIN_GAP, CompiledScene
from .sim import EVAL_END_PAST_EXIT, EVAL_START_BEFORE_ENTRY, ScenarioResult, Simulation, SimConfig

#: A vehicle counts as stopped when its speed falls below this inside the
#: evaluation segment.
V_STOP = 0.1

#: Reward component thresholds.
IDLE_SPEED = 0.3
IDLE_RANGE = 30.0
RELUCTANCE_SPEED = 2.0
RELUCTANCE_LEAD_RANGE = 30.0
PROXIMITY_GAP = SAME_LANE_MIN_GAP

MINOR_ARMS = ("west",)


def road_type(arm: str) -> str:
    return "minor" if arm in MINOR_ARMS else "major"


@dataclass(frozen=True)
class RewardWeights:
    velocity: float = 0.06
    idle: float = 0.02
    reluctance: float = 0.02
    proximity: float = 0.2
    collision: float = 1.0

    def __post_init__(self):
        if any(w < 0 for w in (self.velocity, self.idle, self.reluctance,
                               self.proximity, self.collision)):
            raise ValueError("reward weights must be nonnegative")


@dataclass(frozen=True)
class ClippedTrajectory:
    vehicle_id: str
    t_start: float
    t_end: float
    avg_speed: float       # segment length / duration
    min_speed: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def stopped(self) -> bool:
        return self.min_speed < V_STOP


def clip_to_segment(rows: list[tuple], start_s: float, end_s: float,
                    vehicle_id: str = "") -> ClippedTrajectory | None:
    """Restrict a recorded trajectory to the evaluation segment between the
    60 m entry marker and the 15 m exit marker (time-interpolated endpoints).
    Vehicles spawned inside the segment start at their first sample; a
    trajectory that never reaches the end marker is excluded (None)."""
    if not rows:
        return None
    t = np.array([r[0] for r in rows])
    s = np.array([r[2] for r in rows])
    v = np.array([r[5] for r in rows])
    if s[-1] < end_s - 1e-9:
        return None
    t_start = _marker_time(t, s, start_s)
    if t_start is None:
        t_start = float(t[0])
        seg_start = float(s[0])
    else:
        seg_start = start_s
    t_end = _marker_time(t, s, end_s)
    mask = (t >= t_start - 1e-9) & (t <= t_end + 1e-9)
    min_speed = float(v[mask].min()) if mask.any() else float(v.min())
    duration = t_end - t_start
    avg = (end_s - seg_start) / duration if duration > 0 else 0.0
    return ClippedTrajectory(vehicle_id, float(t_start), float(t_end),
                             float(avg), min_speed)


def _marker_time(t: np.ndarray, s: np.ndarray, marker: float) -> float | None:
    mask = s >= marker - 1e-9
    if not mask.any():
        return None
    k = int(mask.argmax())
    if k == 0:
        return None if s[0] > marker + 1e-9 else float(t[0])
    if s[k] > s[k - 1]:
        frac = (marker - s[k - 1]) / (s[k] - s[k - 1])
        return float(t[k - 1] + frac * (t[k] - t[k - 1]))
    return float(t[k])


def clip_result(result: ScenarioResult, lane_map: LaneMap) -> dict[str, ClippedTrajectory | None]:
    """Clipped segment per vehicle of one run; None marks an excluded run."""
    out = {}
    for sv in result.scenario.vehicles:
        geom = lane_map.geometry(lane_map.route(sv.arm, sv.target))
        start_s = geom.stopline_s - EVAL_START_BEFORE_ENTRY
        end_s = min(geom.junction_exit_s + EVAL_END_PAST_EXIT, geom.length)
        out[sv.vehicle_id] = clip_to_segment(
            result.trajectories[sv.vehicle_id], start_s, end_s, sv.vehicle_id)
    return out


def is_deviating(result: ScenarioResult, baseline: ScenarioResult) -> bool:
    """True when the vehicle crossing order differs from the baseline order
    in any conflict zone."""
    keys = set(result.crossing_order) | set(baseline.crossing_order)
    return any(result.crossing_order.get(k, []) != baseline.crossing_order.get(k, [])
               for k in keys)


@dataclass
class MetricsReport:
    planner: str
    n_scenarios: int = 0
    deviating_share: float = 0.0
    relative_duration: dict[str, list[float]] = field(default_factory=lambda: {"major": [], "minor": []})
    stopped_share: dict[str, float] = field(default_factory=dict)
    baseline_stopped_share: dict[str, float] = field(default_factory=dict)
    avg_speed: list[float] = field(default_factory=list)
    excluded_runs: int = 0
    collisions: int = 0
    timeouts: int = 0

    def median_relative_duration(self, road: str) -> float:
        vals = self.relative_duration.get(road, [])
        return float(np.median(vals)) if vals else math.nan


def compute_metrics(results: list[ScenarioResult], baselines: list[ScenarioResult],
                    lane_map: LaneMap) -> MetricsReport:
    """Aggregate comparison against the non-cooperative baseline.

    The deviating share covers all runs; duration/stop/speed statistics
    cover only scenarios with a deviating crossing order, as pairs matched by
    scenario id and vehicle id."""
    by_id = {b.scenario.id: b for b in baselines}
    if set(r.scenario.id for r in results) != set(by_id):
        raise ValueError("scenario ids differ between configurations")
    report = MetricsReport(planner=results[0].planner if results else "?")
    report.n_scenarios = len(results)
    deviating_ids = set()
    for r in results:
        if r.outcome == "Collision":
            report.collisions += 1
        if r.outcome == "Timeout":
            report.timeouts += 1
        if is_deviating(r, by_id[r.scenario.id]):
            deviating_ids.add(r.scenario.id)
    report.deviating_share = (len(deviating_ids) / len(results)) if results else 0.0

    stopped: dict[str, list[bool]] = {"major": [], "minor": []}
    base_stopped: dict[str, list[bool]] = {"major": [], "minor": []}
    for r in sorted(results, key=lambda x: x.scenario.id):
        if r.scenario.id not in deviating_ids:
            continue
        b = by_id[r.scenario.id]
        clipped = clip_result(r, lane_map)
        clipped_b = clip_result(b, lane_map)
        for sv in r.scenario.vehicles:
            road = road_type(sv.arm)
            c, cb = clipped[sv.vehicle_id], clipped_b[sv.vehicle_id]
            if c is None or cb is None:
                report.excluded_runs += 1
                continue
            report.relative_duration[road].append(c.duration - cb.duration)
            stopped[road].append(c.stopped)
            base_stopped[road].append(cb.stopped)
            report.avg_speed.append(c.avg_speed)
    for road in ("major", "minor"):
        report.stopped_share[road] = (float(np.mean(stopped[road]))
                                      if stopped[road] else math.nan)
        report.baseline_stopped_share[road] = (float(np.mean(base_stopped[road]))
                                               if base_stopped[road] else math.nan)
    return report


# -- reward score ----------------------------------------------------------


def reward_score(result: ScenarioResult, lane_map: LaneMap,
                 weights: RewardWeights = RewardWeights(),
                 step: float = 0.2) -> tuple[np.ndarray, float]:
    """Weighted per-policy-step reward over a recorded run and its cumulative
    sum. Components: mean clipped relative speed (positive), near-stopped
    vehicles near the junction, slow lead-free CAVs, dangerously close pairs,
    and a terminal collision penalty."""
    scene = _truth_scene(result, lane_map)
    ids = scene.ids
    series = {vid: result.trajectories[vid] for vid in ids}
    t_end = max((rows[-1][0] for rows in series.values() if rows), default=0.0)
    n_steps = int(math.floor(t_end / step + 1e-9))
    rewards = np.zeros(n_steps)
    cav = {vid: scene.is_cav[ids.index(vid)] for vid in ids}
    for k in range(n_steps):
        t = (k + 1) * step
        pos, spd, active = {}, {}, []
        for vid, rows in series.items():
            row = _sample(rows, t)
            if row is None:
                continue
            active.append(vid)
            pos[vid] = row[2]
            spd[vid] = row[5]
        if not active:
            continue
        r_vel = float(np.mean([
            min(spd[vid] / scene.geoms[ids.index(vid)].speed_limit_at(
                min(pos[vid], scene.geoms[ids.index(vid)].length)), 1.0)
            for vid in active]))
        r_idle = 0.0
        r_rel = 0.0
        for vid in active:
            n = ids.index(vid)
            d_stop = scene.stopline[n] - pos[vid]
            if spd[vid] < IDLE_SPEED and 0.0 < d_stop <= IDLE_RANGE:
                r_idle -= 1.0
            if cav[vid] and spd[vid] < RELUCTANCE_SPEED:
                if not _has_lead(scene, ids, pos, vid, RELUCTANCE_LEAD_RANGE):
                    r_rel -= 1.0
        r_prox = -float(_close_pairs(scene, ids, pos, active))
        rewards[k] = (weights.velocity * r_vel + weights.idle * r_idle
                      + weights.reluctance * r_rel + weights.proximity * r_prox)
    if result.outcome == "Collision" and n_steps:
        rewards[-1] -= weights.collision
    return rewards, float(rewards.sum())


def _truth_scene(result: ScenarioResult, lane_map: LaneMap) -> CompiledScene:
    cfg = SimConfig(planner=result.planner, seed=result.seed)
    return Simulation(result.scenario, cfg, lane_map)._truth


def _sample(rows: list[tuple], t: float):
    if not rows or rows[0][0] > t + 1e-9:
        return None
    k = min(int(round((t - rows[0][0]) / (rows[1][0] - rows[0][0]))) if len(rows) > 1 else 0,
            len(rows) - 1)
    return rows[k]


def _has_lead(scene: CompiledScene, ids, pos, vid, within: float) -> bool:
    n = ids.index(vid)
    for l in range(len(scene.lead_f)):
        if int(scene.lead_f[l]) != n:
            continue
        other = ids[int(scene.lead_l[l])]
        if other not in pos:
            continue
        sl = pos[other]
        if not (scene.lead_lo[l] - 1e-9 <= sl <= scene.lead_hi[l] + 1e-9):
            continue
        g = sl + scene.lead_off[l] - pos[vid] - VEHICLE_LENGTH
        if 0 < g <= within:
            return True
    return False


def _close_pairs(scene: CompiledScene, ids, pos, active) -> int:
    count = 0
    for l in range(len(scene.lead_f)):
        f, ld = ids[int(scene.lead_f[l])], ids[int(scene.lead_l[l])]
        if f not in pos or ld not in pos:
            continue
        sl = pos[ld]
        if not (scene.lead_lo[l] - 1e-9 <= sl <= scene.lead_hi[l] + 1e-9):
            continue
        g = sl + scene.lead_off[l] - pos[f] - VEHICLE_LENGTH
        if -VEHICLE_LENGTH < g < PROXIMITY_GAP:
            count += 1
    for r in range(len(scene.rec_i)):
        i, j = ids[int(scene.rec_i[r])], ids[int(scene.rec_j[r])]
        if i not in pos or j not in pos:
            continue
        if (scene.rec_entry_i[r] <= pos[i] < scene.rec_exit_i[r]
                and scene.rec_entry_j[r] <= pos[j] < scene.rec_exit_j[r]):
            count += 1
    return count
