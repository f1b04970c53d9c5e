"""Optimization-based cooperative planner: cyclic priority-assignment search
over predicted scenarios and conversion of the winning assignment set into
waypoint maneuvers."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .driver import ANALYTIC, DriverModel
from .env_model import EnvironmentModel, match_vehicle
from .geometry import LaneMap
from .prediction import (BatchPrediction, CompiledScene, DEFAULT_CONFIG,
                         PredictionConfig, PredictionTrace)
from .priorities import EMPTY_PRIORITIES, PriorityAssignmentSet

#: Safety margin between the prioritized vehicle's predicted zone-leave time
#: and the yielding vehicle's earliest admitted entry.
ENTRY_MARGIN = 0.5

#: Hard budget of candidate assignment sets (= predictions) per cycle.
CANDIDATE_LIMIT = 100

#: Multi-pair extensions are only generated below this number of open pairs.
MULTI_EXTENSION_MAX_PAIRS = 15


@dataclass(frozen=True)
class ManeuverWaypoint:
    x: float
    y: float
    t_min: float            # absolute time (s)
    t_max: float
    pred: str | None = None  # vehicle that must have passed before crossing
    succ: str | None = None  # vehicle admitted after we pass
    route_s: float = 0.0     # waypoint arc position on the vehicle's route

    def __post_init__(self):
        if self.t_min > self.t_max:
            raise ValueError("waypoint with t_min > t_max")


@dataclass(frozen=True)
class Maneuver:
    vehicle_id: str
    waypoints: tuple[ManeuverWaypoint, ...]
    issued_at: float

    def __post_init__(self):
        s_prev = -np.inf
        t_prev = -np.inf
        for wp in self.waypoints:
            if wp.route_s < s_prev - 1e-9 or wp.t_min < t_prev - 1e-9:
                raise ValueError("waypoints must be route-ordered with "
                                 "non-decreasing times")
            s_prev, t_prev = wp.route_s, wp.t_min


@dataclass(frozen=True)
class PlannerConfig:
    prediction: PredictionConfig = DEFAULT_CONFIG
    model: DriverModel = ANALYTIC
    margin: float = ENTRY_MARGIN
    limit: int = CANDIDATE_LIMIT


@dataclass(frozen=True)
class PlannerState:
    p_current: PriorityAssignmentSet = EMPTY_PRIORITIES
    cycle_index: int = 0
    last_maneuvers: dict[str, Maneuver] = field(default_factory=dict)
    last_efficiency: float = 0.0
    last_prediction_count: int = 0


def enumerate_extensions(p_prev: PriorityAssignmentSet,
                         cav_pairs: list[tuple[str, str]],
                         limit: int = CANDIDATE_LIMIT) -> list[PriorityAssignmentSet]:
    """Candidate assignment sets for one cycle: the empty set, the carried-over
    set, both orientations of every single-pair extension, and (for fewer than
    15 open pairs) multi-pair extensions in breadth-first lexicographic order,
    truncated to the budget and ordered by ascending size."""
    assigned = {frozenset(p) for p in p_prev.assignments}
    open_pairs = sorted(tuple(sorted(p)) for p in cav_pairs
                        if frozenset(p) not in assigned)
    candidates: list[PriorityAssignmentSet] = []
    seen: set[tuple] = set()

    def add(c: PriorityAssignmentSet) -> None:
        key = frozenset(c.assignments)
        if key not in seen:
            seen.add(key)
            candidates.append(c)

    add(EMPTY_PRIORITIES)
    add(p_prev)
    for a, b in open_pairs:
        add(p_prev.extended((a, b)))
        add(p_prev.extended((b, a)))
    n = len(open_pairs)
    if n < MULTI_EXTENSION_MAX_PAIRS:
        for size in range(2, n + 1):
            if len(candidates) >= limit:
                break
            for subset in itertools.combinations(open_pairs, size):
                for orient in itertools.product((0, 1), repeat=size):
                    if len(candidates) >= limit:
                        break
                    ext = tuple(p if o == 0 else (p[1], p[0])
                                for p, o in zip(subset, orient))
                    add(p_prev.extended(*ext))
    candidates.sort(key=lambda c: (len(c), c.sorted_key()))
    return candidates[:limit]


def derive_waypoints(trace: PredictionTrace, priorities: PriorityAssignmentSet,
                     margin: float = ENTRY_MARGIN,
                     issued_at: float = 0.0) -> dict[str, Maneuver]:
    """Waypoint maneuvers from a valid trace: per ordered pair and shared
    zone, the yielder gets an entry waypoint admitted after the prioritized
    vehicle's predicted leave time (plus margin), the prioritized vehicle an
    exit waypoint bounded by that leave time."""
    sc = trace.scene
    horizon_end = issued_at + float(trace.times[-1])
    per_vehicle: dict[str, list[ManeuverWaypoint]] = {}
    for a, b in priorities.assignments:
        ia, ib = sc.ids.index(a), sc.ids.index(b)
        zones = [r for r in range(len(sc.rec_i))
                 if {int(sc.rec_i[r]), int(sc.rec_j[r])} == {ia, ib}]
        if not zones:
            raise ValueError(f"pair ({a}, {b}) shares no conflict zone")
        for r in zones:
            if int(sc.rec_i[r]) == ia:
                exit_a, entry_b = sc.rec_exit_i[r], sc.rec_entry_j[r]
            else:
                exit_a, entry_b = sc.rec_exit_j[r], sc.rec_entry_i[r]
            leave = _first_time(trace, ia, exit_a)
            t_leave = horizon_end if leave is None else issued_at + leave
            pa, _ = sc.geoms[ia].pose_at(exit_a)
            pb, _ = sc.geoms[ib].pose_at(entry_b)
            per_vehicle.setdefault(a, []).append(ManeuverWaypoint(
                x=float(pa[0]), y=float(pa[1]), t_min=issued_at,
                t_max=t_leave, succ=b, route_s=float(exit_a)))
            per_vehicle.setdefault(b, []).append(ManeuverWaypoint(
                x=float(pb[0]), y=float(pb[1]),
                t_min=min(t_leave + margin, horizon_end), t_max=horizon_end,
                pred=a, route_s=float(entry_b)))
    maneuvers = {}
    for vid, wps in per_vehicle.items():
        wps.sort(key=lambda w: w.route_s)
        # Crossing a later waypoint cannot precede crossing an earlier one.
        merged, floor = [], -np.inf
        for wp in wps:
            floor = max(floor, wp.t_min)
            merged.append(replace(wp, t_min=floor, t_max=max(wp.t_max, floor)))
        maneuvers[vid] = Maneuver(vid, tuple(merged), issued_at)
    return maneuvers


def _first_time(trace: PredictionTrace, n: int, s: float) -> float | None:
    mask = trace.pos[:, n] >= s
    if not mask.any():
        return None
    return float(trace.times[int(mask.argmax())])


def plan_cycle(em: EnvironmentModel, state: PlannerState, lane_map: LaneMap,
               cfg: PlannerConfig = PlannerConfig()
               ) -> tuple[PlannerState, dict[str, Maneuver]]:
    """One 5 Hz planning cycle: prune, carry over, consider terminating the
    maneuver, search candidate extensions, select the most efficient valid
    assignment set and derive waypoints."""
    vehicles = tuple(v for v in (match_vehicle(v, lane_map) if v.lane_position is None else v
                                 for v in em.vehicles)
                     if v.lane_position is not None)
    em = EnvironmentModel(vehicles, em.timestamp)
    scene = CompiledScene(em, lane_map)
    pair_keys = {frozenset(p) for p in scene.cav_pairs}
    p_prev = PriorityAssignmentSet(tuple(
        p for p in state.p_current.assignments if frozenset(p) in pair_keys))

    base_sets = [p_prev, EMPTY_PRIORITIES] if len(p_prev) else [p_prev]
    base = BatchPrediction(scene, base_sets, cfg.prediction)
    predictions = len(base_sets)
    if len(p_prev) and base.efficiency[1] > base.efficiency[0] and base.valid(1):
        # Terminating the maneuver predicts better than keeping it (and is
        # predicted safe from the committed state).
        return (PlannerState(EMPTY_PRIORITIES, state.cycle_index + 1, {},
                             float(base.efficiency[1]), predictions), {})

    candidates = enumerate_extensions(p_prev, scene.cav_pairs, cfg.limit)
    # The carried-over set and the empty set were already predicted above;
    # reuse those results so the prediction budget covers all candidates.
    key_prev = frozenset(p_prev.assignments)
    entries: list[tuple[PriorityAssignmentSet, BatchPrediction, int]] = []
    fresh: list[PriorityAssignmentSet] = []
    for c in candidates:
        key = frozenset(c.assignments)
        if key == key_prev:
            entries.append((c, base, 0))
        elif not key:
            entries.append((c, base, 1))
        else:
            fresh.append(c)
    fresh = fresh[:cfg.limit - predictions]
    if fresh:
        batch = BatchPrediction(scene, fresh, cfg.prediction)
        predictions += len(fresh)
        entries.extend((c, batch, k) for k, c in enumerate(fresh))
    best = None
    for c, src, k in sorted(entries, key=lambda e: (len(e[0]), e[0].sorted_key())):
        if not src.valid(k):
            continue
        if best is None or src.efficiency[k] > best[1].efficiency[best[2]] + 1e-9:
            best = (c, src, k)
    if best is None:
        # No candidate predicts a safe completion; keep the committed
        # assignment and its maneuvers rather than abandoning them mid-crossing.
        return (PlannerState(p_prev, state.cycle_index + 1, state.last_maneuvers,
                             float(base.efficiency[0]), predictions),
                state.last_maneuvers)
    p_next, src, k = best
    maneuvers = derive_waypoints(src.trace(k), p_next, cfg.margin,
                                 issued_at=em.timestamp)
    return (PlannerState(p_next, state.cycle_index + 1, maneuvers,
                         float(src.efficiency[k]), predictions),
            maneuvers)


# -- maneuver message serialization ----------------------------------------


def dump_maneuvers(maneuvers: dict[str, Maneuver]) -> str:
    """One record per waypoint, grouped into a JSON document."""
    records = []
    for vid in sorted(maneuvers):
        m = maneuvers[vid]
        for wp in m.waypoints:
            records.append({
                "vehicle_id": vid, "x": wp.x, "y": wp.y,
                "t_min": wp.t_min, "t_max": wp.t_max,
                "pred_id": wp.pred, "succ_id": wp.succ,
                "route_s": wp.route_s, "issued_at": m.issued_at,
            })
    return json.dumps({"waypoints": records}, indent=1)


def load_maneuvers(text: str) -> dict[str, Maneuver]:
    doc = json.loads(text)
    grouped: dict[str, list] = {}
    issued: dict[str, float] = {}
    for rec in doc["waypoints"]:
        vid = rec["vehicle_id"]
        issued[vid] = float(rec["issued_at"])
        grouped.setdefault(vid, []).append(ManeuverWaypoint(
            x=float(rec["x"]), y=float(rec["y"]),
            t_min=float(rec["t_min"]), t_max=float(rec["t_max"]),
            pred=rec.get("pred_id"), succ=rec.get("succ_id"),
            route_s=float(rec.get("route_s", 0.0))))
    return {vid: Maneuver(vid, tuple(sorted(wps, key=lambda w: w.route_s)),
                          issued[vid])
            for vid, wps in grouped.items()}
