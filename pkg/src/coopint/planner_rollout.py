"""Rollout-based cooperative planner: graph scene representation, a pluggable
joint policy rolled forward in an internal simulator, and waypoint extraction
at the conflict-area entry and exit. Replans on a 2 s period."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import driver
from .driver import GAP_T_MARGIN, GAP_V_MIN
from .env_model import VEHICLE_LENGTH, EnvironmentModel
from .geometry import LaneMap
from .planner_opt import Maneuver, ManeuverWaypoint
from .prediction import ZONE_HOLD_MARGIN, CompiledScene
from .priorities import PriorityAssignmentSet

#: Half-width of the admitted crossing window around recorded times.
WAYPOINT_TOLERANCE = 0.5

#: Replanning period (s).
REPLAN_PERIOD = 2.0


@dataclass(frozen=True)
class SceneVertex:
    vehicle_id: str
    lane_id: str
    lane_position: float     # longitudinal position on the current lane (m)
    speed: float
    accel: float
    is_cav: bool


@dataclass(frozen=True)
class SceneEdge:
    source: str
    target: str
    kind: str                # "crossing" | "same_lane"
    distance: float          # Euclidean vehicle distance (m)
    bearing: float           # bearing of target in the source vehicle frame
    priority: bool           # source holds map right of way over target

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("self-edges are not allowed")
        if self.kind not in ("crossing", "same_lane"):
            raise ValueError(f"unknown edge kind {self.kind!r}")


@dataclass(frozen=True)
class SceneGraph:
    vertices: tuple[SceneVertex, ...]
    edges: tuple[SceneEdge, ...]
    globals: tuple = ()
    scene: CompiledScene | None = None   # context for analytic policies
    positions: np.ndarray | None = None  # route arc positions, scene order
    speeds: np.ndarray | None = None

    def dump(self) -> dict:
        """Plain vertex/edge feature lists for inspection."""
        return {
            "vertices": [{"id": v.vehicle_id, "lane": v.lane_id,
                          "s": v.lane_position, "v": v.speed,
                          "a": v.accel, "is_cav": v.is_cav}
                         for v in self.vertices],
            "edges": [{"source": e.source, "target": e.target, "kind": e.kind,
                       "distance": e.distance, "bearing": e.bearing,
                       "priority": e.priority} for e in self.edges],
            "globals": list(self.globals),
        }


@dataclass(frozen=True)
class JointAction:
    accelerations: dict[str, float]

    def __post_init__(self):
        for vid, a in self.accelerations.items():
            if not driver.ACCEL_MIN - 1e-9 <= a <= driver.ACCEL_MAX + 1e-9:
                raise ValueError(f"action for {vid} outside clamp: {a}")


@dataclass(frozen=True)
class RolloutConfig:
    dt: float = 0.1
    policy_period: float = 0.2           # 5 Hz observation/action cadence
    sim_horizon: float = 40.0            # simulated-time bound
    timeout: float = 2.0                 # wall-clock bound (s)
    tolerance: float = WAYPOINT_TOLERANCE


@dataclass(frozen=True)
class RolloutResult:
    maneuvers: dict[str, Maneuver]
    timed_out: bool
    times: np.ndarray
    pos: np.ndarray          # (T, N) route arc positions, scene order
    vel: np.ndarray
    ids: tuple[str, ...]


# -- scene graph -----------------------------------------------------------


def _graph_from_state(scene: CompiledScene, pos: np.ndarray, vel: np.ndarray,
                      acc: np.ndarray) -> SceneGraph:
    n = scene.n_vehicles
    xy = np.empty((n, 2))
    heading = np.empty(n)
    vertices = []
    for i in range(n):
        geom = scene.geoms[i]
        lane, lane_s = geom.lane_at(pos[i])
        p, h = geom.pose_at(pos[i])
        xy[i] = p
        heading[i] = h
        vertices.append(SceneVertex(scene.ids[i], lane.id, float(lane_s),
                                    float(vel[i]), float(acc[i]),
                                    scene.is_cav[i]))

    def features(a: int, b: int) -> tuple[float, float]:
        d = xy[b] - xy[a]
        dist = float(math.hypot(d[0], d[1]))
        bearing = float((math.atan2(d[1], d[0]) - heading[a] + math.pi)
                        % (2 * math.pi) - math.pi)
        return dist, bearing

    edges = []
    crossing_pairs = set()
    for r in range(len(scene.rec_i)):
        i, j = int(scene.rec_i[r]), int(scene.rec_j[r])
        if pos[i] < scene.rec_exit_i[r] and pos[j] < scene.rec_exit_j[r]:
            crossing_pairs.add((i, j))
    for i, j in sorted(crossing_pairs):
        row = scene.lane_map.has_right_of_way(scene.routes[scene.ids[i]],
                                              scene.routes[scene.ids[j]])
        d, b = features(i, j)
        edges.append(SceneEdge(scene.ids[i], scene.ids[j], "crossing", d, b, row))
        d, b = features(j, i)
        edges.append(SceneEdge(scene.ids[j], scene.ids[i], "crossing", d, b, not row))
    for l in range(len(scene.lead_f)):
        f, ld = int(scene.lead_f[l]), int(scene.lead_l[l])
        sl = pos[ld]
        if not (scene.lead_lo[l] - 1e-9 <= sl <= scene.lead_hi[l] + 1e-9):
            continue
        if sl + scene.lead_off[l] <= pos[f]:
            continue
        lane_f, _ = scene.geoms[f].lane_at(pos[f])
        lane_l, _ = scene.geoms[ld].lane_at(sl)
        if lane_f.id != lane_l.id:
            continue
        d, b = features(ld, f)
        edges.append(SceneEdge(scene.ids[ld], scene.ids[f], "same_lane", d, b, True))
    return SceneGraph(tuple(vertices), tuple(edges), (), scene, pos.copy(), vel.copy())


def build_scene_graph(em: EnvironmentModel, lane_map: LaneMap) -> SceneGraph:
    """Graph observation of the environment: one vertex per vehicle, crossing
    edges for conflicts that cannot be ruled out under worst-case routes,
    same-lane edges from leader to follower."""
    scene = CompiledScene(em, lane_map)
    acc = np.array([v.accel for v in scene.vehicles])
    return _graph_from_state(scene, scene.pos0, scene.vel0, acc)


# -- policies --------------------------------------------------------------


def fcfs_priorities(scene: CompiledScene, pos: np.ndarray,
                    vel: np.ndarray) -> PriorityAssignmentSet:
    """First-come-first-served ordering of the conflicting CAV pairs: the
    vehicle with the earlier predicted arrival at the shared zone goes first."""
    assignments = []
    for a, b in scene.cav_pairs:
        ia, ib = scene.ids.index(a), scene.ids.index(b)
        t_a = t_b = math.inf
        settled = False
        for r in range(len(scene.rec_i)):
            if {int(scene.rec_i[r]), int(scene.rec_j[r])} != {ia, ib}:
                continue
            if int(scene.rec_i[r]) == ia:
                e_a, x_a = scene.rec_entry_i[r], scene.rec_exit_i[r]
                e_b, x_b = scene.rec_entry_j[r], scene.rec_exit_j[r]
            else:
                e_a, x_a = scene.rec_entry_j[r], scene.rec_exit_j[r]
                e_b, x_b = scene.rec_entry_i[r], scene.rec_exit_i[r]
            if pos[ia] >= x_a or pos[ib] >= x_b:
                settled = True   # one of them already cleared this zone
                continue
            t_a = min(t_a, (e_a - pos[ia]) / max(vel[ia], GAP_V_MIN))
            t_b = min(t_b, (e_b - pos[ib]) / max(vel[ib], GAP_V_MIN))
        if math.isinf(t_a) and math.isinf(t_b):
            if settled:
                continue
            continue
        if t_a < t_b or (t_a == t_b and a < b):
            assignments.append((a, b))
        else:
            assignments.append((b, a))
    return PriorityAssignmentSet(tuple(assignments))


def heuristic_policy(graph: SceneGraph) -> JointAction:
    """Default joint policy: per CAV the analytic driver model, with CAV-CAV
    priorities granted first-come-first-served by predicted zone arrival; HDV
    right of way is always respected."""
    scene = graph.scene
    if scene is None:
        raise ValueError("heuristic_policy needs a graph with scene context")
    pos, vel = graph.positions, graph.speeds
    priorities = fcfs_priorities(scene, pos, vel)
    actions = {}
    for n in range(scene.n_vehicles):
        if not scene.is_cav[n]:
            continue
        actions[scene.ids[n]] = _analytic_step(scene, pos, vel, n, priorities)
    return JointAction(actions)


def _deltas(scene: CompiledScene, pos: np.ndarray, vel: np.ndarray,
            priorities: PriorityAssignmentSet) -> tuple[np.ndarray, np.ndarray]:
    """Gap decisions and yield targets for all vehicles; CAV-CAV pairs follow
    the assigned priorities, everything else the right-of-way/gap cascade."""
    n = scene.n_vehicles
    delta = np.ones(n, dtype=np.int8)
    target = np.full(n, np.inf)
    for r in range(len(scene.rec_i)):
        i, j = int(scene.rec_i[r]), int(scene.rec_j[r])
        for me, other, entry_m, exit_m, entry_o, exit_o, row_me in (
                (i, j, scene.rec_entry_i[r], scene.rec_exit_i[r],
                 scene.rec_entry_j[r], scene.rec_exit_j[r], scene.rec_row[r] == 1),
                (j, i, scene.rec_entry_j[r], scene.rec_exit_j[r],
                 scene.rec_entry_i[r], scene.rec_exit_i[r], scene.rec_row[r] == 0)):
            if not (pos[me] < entry_m and pos[other] < exit_o):
                continue
            pair = (scene.ids[me], scene.ids[other])
            if pos[other] >= entry_o:
                d = 0  # zone occupied: never enter, regardless of priority
            elif pair in priorities:
                d = 1
            elif (pair[1], pair[0]) in priorities:
                d = 0
            elif row_me:
                d = 1
            else:
                d = 1 if driver.analytic_gap_accept(
                    pos[me], vel[me], pos[other], vel[other],
                    [(entry_m, exit_m, entry_o, exit_o)]) else 0
            if d == 0:
                delta[me] = 0
                target[me] = min(target[me], entry_m)
    return delta, target


def _analytic_step(scene: CompiledScene, pos: np.ndarray, vel: np.ndarray,
                   n: int, priorities: PriorityAssignmentSet) -> float:
    delta, target = _deltas(scene, pos, vel, priorities)
    return _accel_from(scene, pos, vel, n, int(delta[n]), float(target[n]))


def _accel_from(scene: CompiledScene, pos, vel, n, delta, yield_target) -> float:
    geom = scene.geoms[n]
    p, v = float(pos[n]), float(vel[n])
    vmax = geom.speed_limit_at(min(p, geom.length))
    lead = None
    for l in range(len(scene.lead_f)):
        if int(scene.lead_f[l]) != n:
            continue
        sl = pos[int(scene.lead_l[l])]
        if not (scene.lead_lo[l] - 1e-9 <= sl <= scene.lead_hi[l] + 1e-9):
            continue
        g = sl + scene.lead_off[l] - p - VEHICLE_LENGTH
        if g > 0 and (lead is None or g < lead[0]):
            lead = (g, float(vel[int(scene.lead_l[l])]))
    stop_gap = None
    if delta == 0:
        if p < scene.stopline[n] - 0.5:
            stop_gap = scene.stopline[n] - p
        else:
            stop_gap = yield_target - ZONE_HOLD_MARGIN - p
        if stop_gap <= 0.0:
            return driver.ACCEL_MIN
    return driver.idm_acceleration(v, vmax, lead[0] if lead else None,
                                   lead[1] if lead else vmax, stop_gap)


# -- rollout ---------------------------------------------------------------


def rollout_plan(em: EnvironmentModel, policy, lane_map: LaneMap,
                 cfg: RolloutConfig = RolloutConfig(),
                 issued_at: float | None = None) -> RolloutResult:
    """Seed an internal simulator from the environment snapshot, roll the
    policy forward at 5 Hz until every vehicle has cleared the conflict area
    (or timeout), and extract entry/exit waypoints from the recorded
    trajectories."""
    scene = CompiledScene(em, lane_map)
    if issued_at is None:
        issued_at = em.timestamp
    n = scene.n_vehicles
    pos = scene.pos0.copy()
    vel = scene.vel0.copy()
    acc = np.zeros(n)
    hist_t, hist_p, hist_v = [0.0], [pos.copy()], [vel.copy()]
    steps_per_action = max(int(round(cfg.policy_period / cfg.dt)), 1)
    max_steps = int(round(cfg.sim_horizon / cfg.dt))
    deadline = time.monotonic() + cfg.timeout
    timed_out = False
    actions: dict[str, float] = {}
    exit_s = np.array([g.junction_exit_s for g in scene.geoms])

    for step in range(max_steps):
        if n and np.all(pos >= exit_s):
            break
        if time.monotonic() > deadline:
            timed_out = True
            break
        if step % steps_per_action == 0:
            graph = _graph_from_state(scene, pos, vel, acc)
            actions = policy(graph).accelerations
        delta, target = _deltas(scene, pos, vel, fcfs_priorities(scene, pos, vel))
        new_acc = np.empty(n)
        for i in range(n):
            vid = scene.ids[i]
            if scene.is_cav[i] and vid in actions:
                new_acc[i] = actions[vid]
            else:
                new_acc[i] = _accel_from(scene, pos, vel, i,
                                         int(delta[i]), float(target[i]))
        acc = np.clip(new_acc, driver.ACCEL_MIN, driver.ACCEL_MAX)
        vel = np.maximum(vel + acc * cfg.dt, 0.0)
        pos = pos + vel * cfg.dt
        over = pos >= scene.route_len
        pos[over] = scene.route_len[over]
        vel[over] = 0.0
        hist_t.append((step + 1) * cfg.dt)
        hist_p.append(pos.copy())
        hist_v.append(vel.copy())
    else:
        if n and not np.all(pos >= exit_s):
            timed_out = True

    times = np.array(hist_t)
    traj = np.array(hist_p)
    vels = np.array(hist_v)
    maneuvers = {}
    for i in range(n):
        if not scene.is_cav[i]:
            continue
        t_entry = _cross_time(times, traj[:, i], scene.stopline[i])
        t_exit = _cross_time(times, traj[:, i], exit_s[i])
        if t_entry is None or t_exit is None:
            continue  # did not clear the area within the rollout
        geom = scene.geoms[i]
        p_in, _ = geom.pose_at(scene.stopline[i])
        p_out, _ = geom.pose_at(exit_s[i])
        tol = cfg.tolerance
        wps = (
            ManeuverWaypoint(float(p_in[0]), float(p_in[1]),
                             issued_at + max(t_entry - tol, 0.0),
                             issued_at + t_entry + tol,
                             route_s=float(scene.stopline[i])),
            ManeuverWaypoint(float(p_out[0]), float(p_out[1]),
                             issued_at + max(t_exit - tol, 0.0),
                             issued_at + t_exit + tol,
                             route_s=float(exit_s[i])),
        )
        maneuvers[scene.ids[i]] = Maneuver(scene.ids[i], wps, issued_at)
    return RolloutResult(maneuvers, timed_out, times, traj, vels, scene.ids)


def _cross_time(times: np.ndarray, pos: np.ndarray, s: float) -> float | None:
    mask = pos >= s - 1e-9
    if not mask.any():
        return None
    k = int(mask.argmax())
    if k == 0:
        return float(times[0])
    # linear interpolation inside the step for a tighter window
    p0, p1 = pos[k - 1], pos[k]
    if p1 > p0:
        frac = (s - p0) / (p1 - p0)
        return float(times[k - 1] + frac * (times[k] - times[k - 1]))
    return float(times[k])


def replanning_schedule(now: float, last_plan: float, event: bool = False) -> bool:
    """Replan when the 2 s period elapsed or a maneuver-invalidating event
    (rejection, new vehicle) occurred."""
    return event or (now - last_plan) >= REPLAN_PERIOD - 1e-9
