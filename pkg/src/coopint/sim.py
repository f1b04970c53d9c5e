"""Closed-loop traffic simulation at a 50 ms base step: simulated HDVs with
occlusion-aware yielding, CAVs executing planner maneuvers (or baseline
right-of-way driving), maneuver accept/reject/abort handling and full
trajectory recording."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import driver, planner_opt, planner_rollout
from .driver import ANALYTIC, DriverModel
from .env_model import (VEHICLE_LENGTH, EnvironmentModel, VehicleState,
                        most_conflicting_route)
from .geometry import LaneMap, Route, RouteGeometry
from .planner_opt import Maneuver, PlannerConfig, PlannerState
from .planner_rollout import RolloutConfig, heuristic_policy, replanning_schedule
from .prediction import SAME_LANE_MIN_GAP, ZONE_HOLD_MARGIN, CompiledScene
from .priorities import EMPTY_PRIORITIES
from .scenarios import INITIAL_SPEED, Scenario

#: Occlusion model: capped creep speed while the view is obstructed, and the
#: clear-vision distance from the stop line.
V_CREEP = 2.0
D_VIS = 15.0

#: Evaluation segment markers relative to the junction.
EVAL_START_BEFORE_ENTRY = 60.0
EVAL_END_PAST_EXIT = 15.0

PLANNERS = ("opt", "rollout", "nc", "hdv")

#: Sentinel returned by the waypoint controller when no feasible profile exists.
REJECT = "reject"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    planner: str = "nc"
    seed: int = 0
    max_sim_time: float = 120.0
    occlusion: bool = True
    rejection_prob: float = 0.0
    model: DriverModel = ANALYTIC
    opt: PlannerConfig = PlannerConfig()
    rollout: RolloutConfig = RolloutConfig()

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}")
        if self.max_sim_time <= 0:
            raise ValueError("max_sim_time must be positive")


@dataclass
class SimVehicle:
    id: str
    route: Route
    geom: RouteGeometry
    is_cav: bool
    s: float
    v: float
    a: float = 0.0
    departed: bool = False

    @property
    def end_marker(self) -> float:
        return min(self.geom.junction_exit_s + EVAL_END_PAST_EXIT, self.geom.length)


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    planner: str
    seed: int
    outcome: str                                # Completed | Timeout | Collision
    trajectories: dict[str, list[tuple]]        # rows (t, lane, s, x, y, v, a)
    crossing_order: dict[tuple[str, str], list[str]]
    maneuvers_issued: int
    planner_cycles: int
    aborts: int
    entry_violations: list[tuple]               # (t, vehicle_id, route_s, t_min)
    duration: float


# -- per-vehicle behaviors -------------------------------------------------


def _route_must_yield(lane_map: LaneMap, route: Route) -> bool:
    return any(r.lanes != route.lanes and lane_map.conflicting(route, r)
               and not lane_map.has_right_of_way(route, r)
               for r in lane_map.routes)


class Simulation:
    """One deterministic closed-loop run of a scenario."""

    def __init__(self, scenario: Scenario, cfg: SimConfig, lane_map: LaneMap):
        self.scenario = scenario
        self.cfg = cfg
        self.map = lane_map
        self.rng = np.random.default_rng(cfg.seed)
        self.t = 0.0
        self.step_index = 0
        self.vehicles: list[SimVehicle] = []
        for sv in scenario.vehicles:
            route = lane_map.route(sv.arm, sv.target)
            geom = lane_map.geometry(route)
            is_cav = sv.is_cav and cfg.planner != "hdv"
            self.vehicles.append(SimVehicle(
                sv.vehicle_id, route, geom, is_cav,
                s=geom.stopline_s - sv.spawn_distance, v=INITIAL_SPEED))
        self.vehicles.sort(key=lambda v: v.id)
        self._truth = self._build_truth_scene()
        self._must_yield = {v.id: _route_must_yield(lane_map, v.route)
                            for v in self.vehicles}
        self.maneuvers: dict[str, Maneuver] = {}
        self.opt_state = PlannerState()
        self.last_plan = -math.inf
        self.replan_event = True
        self.assumed_routes: dict[str, Route] = {v.id: v.route for v in self.vehicles}
        self.trajectories: dict[str, list[tuple]] = {v.id: [] for v in self.vehicles}
        self.zone_entries: dict[tuple[str, str], list[tuple[float, str]]] = {}
        self._entered: set[tuple[str, int]] = set()
        self.collision = False
        self.maneuvers_issued = 0
        self.planner_cycles = 0
        self.aborts = 0
        self.entry_violations: list[tuple] = []
        self._zone_cache: dict[tuple, list] = {}

    # -- environment views --

    def _build_truth_scene(self) -> CompiledScene:
        states = []
        for v in self.vehicles:
            p, h = v.geom.pose_at(v.s)
            lane, lane_s = v.geom.lane_at(v.s)
            states.append(VehicleState(v.id, float(p[0]), float(p[1]), h, v.v,
                                       route=v.route, controllable=v.is_cav,
                                       lane_position=(lane.id, lane_s)))
        return CompiledScene(EnvironmentModel(tuple(states), 0.0), self.map)

    def _planner_em(self) -> EnvironmentModel:
        states = []
        for v in self.vehicles:
            if v.departed:
                continue
            p, h = v.geom.pose_at(v.s)
            lane, lane_s = v.geom.lane_at(v.s)
            states.append(VehicleState(
                v.id, float(p[0]), float(p[1]), h, v.v,
                route=v.route if v.is_cav else None,
                controllable=v.is_cav, lane_position=(lane.id, lane_s),
                accel=v.a))
        return EnvironmentModel(tuple(states), self.t)

    def _refresh_assumed_routes(self, em: EnvironmentModel) -> None:
        declared = [s.route for s in em.vehicles if s.route is not None]
        for s in em.vehicles:
            if s.route is not None:
                self.assumed_routes[s.id] = s.route
            else:
                self.assumed_routes[s.id] = most_conflicting_route(s, declared, self.map)

    # -- maneuver handling --

    def _abort_all(self) -> None:
        if self.maneuvers:
            self.aborts += 1
        self.maneuvers = {}
        self.opt_state = PlannerState()
        self.replan_event = True

    def _run_planner(self) -> None:
        cadence = max(int(round(0.2 / self.cfg.dt)), 1)
        if self.cfg.planner == "opt":
            if self.step_index % cadence:
                return
            em = self._planner_em()
            self._refresh_assumed_routes(em)
            self.opt_state, maneuvers = planner_opt.plan_cycle(
                em, self.opt_state, self.map, self.cfg.opt)
            self.planner_cycles += 1
            self._install(maneuvers)
        elif self.cfg.planner == "rollout":
            if self.step_index % cadence:
                return
            em = self._planner_em()
            self._refresh_assumed_routes(em)
            if replanning_schedule(self.t, self.last_plan, self.replan_event):
                result = planner_rollout.rollout_plan(
                    em, heuristic_policy, self.map, self.cfg.rollout,
                    issued_at=self.t)
                self.planner_cycles += 1
                self.last_plan = self.t
                self.replan_event = False
                self._install(result.maneuvers)
        else:
            if self.step_index % cadence == 0:
                self._refresh_assumed_routes(self._planner_em())

    def _install(self, maneuvers: dict[str, Maneuver]) -> None:
        if not maneuvers:
            self.maneuvers = {}
            return
        if self.cfg.rejection_prob > 0.0:
            for _ in maneuvers:
                if self.rng.random() < self.cfg.rejection_prob:
                    self._abort_all()
                    return
        self.maneuvers = dict(maneuvers)
        self.maneuvers_issued += len(maneuvers)

    # -- per-step accelerations --

    def _shared_zones(self, route_a: Route, route_b: Route) -> list:
        key = (route_a.key, route_b.key)
        if key not in self._zone_cache:
            self._zone_cache[key] = driver.shared_zone_bounds(
                self.map.geometry(route_a), self.map.geometry(route_b))
        return self._zone_cache[key]

    def _gap_delta(self, v: SimVehicle) -> tuple[int, float]:
        """Right-of-way/gap cascade of one vehicle against every other active
        vehicle under the assumed routes (no priority assignments)."""
        delta, target = 1, math.inf
        for o in self.vehicles:
            if o.id == v.id or o.departed:
                continue
            route_o = self.assumed_routes[o.id]
            if route_o.lanes == v.route.lanes:
                continue
            zones = self._shared_zones(v.route, route_o)
            if not zones:
                continue
            has_row = self.map.has_right_of_way(v.route, route_o)
            geom_o = self.map.geometry(route_o)
            lane_o, lane_s_o = o.geom.lane_at(o.s)
            if lane_o.id not in geom_o.lane_ids:
                continue  # assumed route no longer matches the actual lane
            s_o = geom_o.position_of(lane_o.id, lane_s_o)
            for entry_m, exit_m, entry_o, exit_o in zones:
                if v.s >= entry_m or s_o >= exit_o:
                    continue
                if s_o >= entry_o:
                    # zone occupied: never enter, regardless of priority
                    delta = 0
                    target = min(target, entry_m)
                elif not has_row and not driver.analytic_gap_accept(
                        v.s, v.v, s_o, o.v, [(entry_m, exit_m, entry_o, exit_o)]):
                    delta = 0
                    target = min(target, entry_m)
        return delta, target

    def _lead(self, v: SimVehicle) -> tuple[float, float] | None:
        sc = self._truth
        n = sc.ids.index(v.id)
        best = None
        for l in range(len(sc.lead_f)):
            if int(sc.lead_f[l]) != n:
                continue
            other = self.vehicles[int(sc.lead_l[l])]
            if other.departed and other.s >= other.geom.length - 1e-6:
                pass  # still physically present at the route end
            sl = other.s
            if not (sc.lead_lo[l] - 1e-9 <= sl <= sc.lead_hi[l] + 1e-9):
                continue
            g = sl + sc.lead_off[l] - v.s - VEHICLE_LENGTH
            if g > 0 and (best is None or g < best[0]):
                best = (g, other.v)
        return best

    def _base_accel(self, v: SimVehicle, creep: bool) -> float:
        delta, target = self._gap_delta(v)
        lead = self._lead(v)
        vmax = v.geom.speed_limit_at(min(v.s, v.geom.length))
        stop_gap = None
        if delta == 0:
            if v.s < v.geom.stopline_s - 0.5:
                stop_gap = v.geom.stopline_s - v.s
            else:
                stop_gap = target - ZONE_HOLD_MARGIN - v.s
            if stop_gap <= 0.0:
                return driver.ACCEL_MIN
        a = driver.idm_acceleration(v.v, vmax, lead[0] if lead else None,
                                    lead[1] if lead else vmax, stop_gap)
        if creep:
            d_stop = v.geom.stopline_s - v.s
            if self._must_yield[v.id] and d_stop > D_VIS:
                a = min(a, driver.idm_acceleration(v.v, V_CREEP, None, V_CREEP, None))
        return a

    def _waypoint_accel(self, v: SimVehicle, man: Maneuver):
        lead = self._lead(v)
        vmax = v.geom.speed_limit_at(min(v.s, v.geom.length))
        a = driver.idm_acceleration(v.v, vmax, lead[0] if lead else None,
                                    lead[1] if lead else vmax, None)
        for wp in man.waypoints:
            d = wp.route_s - v.s
            if d <= 1e-6:
                continue  # crossed: waypoint retired
            if self.t > wp.t_max and d > 0.5:
                return REJECT
            tau = wp.t_min - self.t
            if tau > 1e-6:
                if v.v * tau > 2.0 * d:
                    # A constant-acceleration arrival at t_min would pass
                    # through the waypoint early; stop short and wait instead.
                    margin_d = d - 0.5
                    if margin_d <= 1e-6:
                        a = driver.ACCEL_MIN if v.v > 0.0 else min(a, 0.0)
                    else:
                        a_stop = -(v.v * v.v) / (2.0 * margin_d)
                        if a_stop < driver.ACCEL_MIN:
                            return REJECT
                        a = min(a, a_stop)
                else:
                    a_wait = 2.0 * (d - v.v * tau) / (tau * tau)
                    if a_wait < driver.ACCEL_MIN:
                        return REJECT
                    if a_wait < a:
                        a = a_wait
        return max(driver.ACCEL_MIN, min(driver.ACCEL_MAX, a))

    def _governed_by_maneuver(self, v: SimVehicle) -> set:
        """Vehicles whose conflict with ``v`` is ordered by the installed
        maneuvers. The optimizer names the ordered pairs through pred/succ
        waypoint references; the rollout planner schedules every vehicle it
        issued a time window for."""
        governed = set()
        man = self.maneuvers.get(v.id)
        if man is not None:
            for wp in man.waypoints:
                if wp.pred is not None:
                    governed.add(wp.pred)
                if wp.succ is not None:
                    governed.add(wp.succ)
        for oid, om in self.maneuvers.items():
            if oid == v.id:
                continue
            if any(wp.pred == v.id or wp.succ == v.id for wp in om.waypoints):
                governed.add(oid)
            elif self.cfg.planner == "rollout":
                governed.add(oid)
        return governed

    def _hdv_conflict_accel(self, v: SimVehicle) -> float:
        """Safety constraint of a maneuver-following CAV: the right-of-way /
        gap cascade against every conflict the maneuver does not govern, plus
        never entering a zone occupied by any conflicting vehicle."""
        delta, target = 1, math.inf
        governed = self._governed_by_maneuver(v)
        for o in self.vehicles:
            if o.id == v.id:
                continue
            route_o = self.assumed_routes[o.id]
            if route_o.lanes == v.route.lanes:
                continue
            zones = self._shared_zones(v.route, route_o)
            if not zones:
                continue
            has_row = self.map.has_right_of_way(v.route, route_o)
            geom_o = self.map.geometry(route_o)
            lane_o, lane_s_o = o.geom.lane_at(o.s)
            if lane_o.id not in geom_o.lane_ids:
                continue
            s_o = geom_o.position_of(lane_o.id, lane_s_o)
            for z in zones:
                if v.s >= z[0] or s_o >= z[3]:
                    continue
                if s_o >= z[2]:
                    delta = 0
                    target = min(target, z[0])
                elif (o.id not in governed and not has_row
                      and not driver.analytic_gap_accept(v.s, v.v, s_o, o.v, [z])):
                    delta = 0
                    target = min(target, z[0])
        if delta == 1:
            return driver.ACCEL_MAX
        if v.s < v.geom.stopline_s - 0.5:
            stop_gap = v.geom.stopline_s - v.s
        else:
            stop_gap = target - ZONE_HOLD_MARGIN - v.s
        if stop_gap <= 0.0:
            return driver.ACCEL_MIN
        vmax = v.geom.speed_limit_at(min(v.s, v.geom.length))
        return driver.idm_acceleration(v.v, vmax, None, vmax, stop_gap)

    # -- main loop --

    def step(self) -> None:
        self._run_planner()
        accels = {}
        reject = False
        for v in self.vehicles:
            if v.departed:
                # past the evaluation end marker: drive on freely to clear the road
                lead = self._lead(v)
                vmax = v.geom.speed_limit_at(min(v.s, v.geom.length))
                accels[v.id] = driver.idm_acceleration(
                    v.v, vmax, lead[0] if lead else None,
                    lead[1] if lead else vmax, None)
                continue
            if not v.is_cav:
                accels[v.id] = self._base_accel(v, creep=self.cfg.occlusion)
            elif self.cfg.planner in ("opt", "rollout") and v.id in self.maneuvers:
                a = self._waypoint_accel(v, self.maneuvers[v.id])
                if a == REJECT:
                    reject = True
                    accels[v.id] = self._base_accel(v, creep=False)
                else:
                    accels[v.id] = min(a, self._hdv_conflict_accel(v))
            else:
                accels[v.id] = self._base_accel(v, creep=False)
        if reject:
            self._abort_all()
        for v in self.vehicles:
            was_departed = v.departed
            prev_s = v.s
            v.a = accels[v.id]
            v.v = max(v.v + v.a * self.cfg.dt, 0.0)
            v.s = min(v.s + v.v * self.cfg.dt, v.geom.length)
            if v.s >= v.geom.length - 1e-9:
                v.v = 0.0
            if was_departed:
                continue
            self._check_entry_waypoints(v, prev_s)
            lane, _ = v.geom.lane_at(v.s)
            p, _h = v.geom.pose_at(v.s)
            self.trajectories[v.id].append(
                (round(self.t + self.cfg.dt, 6), lane.id, v.s,
                 float(p[0]), float(p[1]), v.v, v.a))
            if v.s >= v.end_marker:
                v.departed = True
        self.t = round(self.t + self.cfg.dt, 6)
        self.step_index += 1
        self._record_zone_entries()
        self._check_collisions()

    def _check_entry_waypoints(self, v: SimVehicle, prev_s: float) -> None:
        man = self.maneuvers.get(v.id)
        if man is None:
            return
        for wp in man.waypoints:
            if wp.pred is not None and prev_s < wp.route_s <= v.s:
                t_cross = self.t + self.cfg.dt
                if t_cross < wp.t_min - 1e-6:
                    self.entry_violations.append((t_cross, v.id, wp.route_s, wp.t_min))

    def _record_zone_entries(self) -> None:
        sc = self._truth
        for o in range(len(sc.occ_veh)):
            n = int(sc.occ_veh[o])
            v = self.vehicles[n]
            if (v.id, o) in self._entered or v.s < sc.occ_entry[o]:
                continue
            self._entered.add((v.id, o))
            key = sc.zone_keys[int(sc.occ_zone[o])]
            self.zone_entries.setdefault(key, []).append((self.t, v.id))

    def _check_collisions(self) -> None:
        sc = self._truth
        pos = np.array([v.s for v in self.vehicles]) if self.vehicles else np.zeros(0)
        for r in range(len(sc.rec_i)):
            i, j = int(sc.rec_i[r]), int(sc.rec_j[r])
            if (sc.rec_entry_i[r] <= pos[i] < sc.rec_exit_i[r]
                    and sc.rec_entry_j[r] <= pos[j] < sc.rec_exit_j[r]):
                self.collision = True
        for l in range(len(sc.lead_f)):
            f, ld = int(sc.lead_f[l]), int(sc.lead_l[l])
            sl = pos[ld]
            if not (sc.lead_lo[l] - 1e-9 <= sl <= sc.lead_hi[l] + 1e-9):
                continue
            g = sl + sc.lead_off[l] - pos[f] - VEHICLE_LENGTH
            if -VEHICLE_LENGTH < g < SAME_LANE_MIN_GAP:
                self.collision = True

    def run(self) -> ScenarioResult:
        outcome = "Completed"
        while True:
            if all(v.departed for v in self.vehicles):
                break
            if self.collision:
                outcome = "Collision"
                break
            if self.t >= self.cfg.max_sim_time - 1e-9:
                outcome = "Timeout"
                break
            self.step()
            if self.collision:
                outcome = "Collision"
                break
        order = {k: [vid for _, vid in sorted(v)]
                 for k, v in sorted(self.zone_entries.items())}
        return ScenarioResult(
            scenario=self.scenario, planner=self.cfg.planner, seed=self.cfg.seed,
            outcome=outcome, trajectories=self.trajectories,
            crossing_order=order, maneuvers_issued=self.maneuvers_issued,
            planner_cycles=self.planner_cycles, aborts=self.aborts,
            entry_violations=self.entry_violations, duration=self.t)


def run_scenario(scenario: Scenario, cfg: SimConfig, lane_map: LaneMap) -> ScenarioResult:
    """Deterministic closed-loop run: identical (scenario, cfg) inputs yield
    identical results."""
    return Simulation(scenario, cfg, lane_map).run()
