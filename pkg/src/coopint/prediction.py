"""Joint forward rollout of all vehicles over the prediction horizon,
validity checking and the efficiency metric.

The hot path (one scenario prediction per candidate priority set, up to 100
per planning cycle) runs through a compiled kernel over flat arrays; a plain
Python reference loop backs the MLP driver models and serves as an oracle
for the kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import driver
from .driver import ANALYTIC, DriverModel, GAP_T_MARGIN, GAP_V_MIN
from .env_model import (VEHICLE_LENGTH, EnvironmentModel, VehicleState,
                        most_conflicting_route, route_position, worst_case_routes)
from .geometry import LaneMap, Route, RouteGeometry
from .priorities import EMPTY_PRIORITIES, PriorityAssignmentSet

try:
    from numba import njit as _njit

    def _jit(f):
        return _njit(cache=True, fastmath=False)(f)
except ImportError:  # pragma: no cover - numba is a hard dependency
    def _jit(f):
        return f

#: Same-lane collision threshold (net bumper gap).
SAME_LANE_MIN_GAP = 1.0

#: Distance short of a denied conflict zone at which a committed vehicle
#: (already past the stop line) is held.
ZONE_HOLD_MARGIN = 1.0

_MAX_ROUTE_LANES = 4


@dataclass(frozen=True)
class PredictionConfig:
    horizon: float = 15.0
    dt: float = 0.1
    t_start: float = 0.0
    t_end: float = 15.0

    def __post_init__(self):
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("dt must divide the horizon")
        if not self.t_start < self.t_end:
            raise ValueError("t_start must precede t_end")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


DEFAULT_CONFIG = PredictionConfig()


@dataclass(frozen=True)
class ZoneOccupancy:
    zone_index: int          # index into CompiledScene.zone_keys
    entry_s: float
    exit_s: float
    t_enter: float | None
    t_leave: float | None


@dataclass
class PredictionTrace:
    ids: tuple[str, ...]
    is_cav: tuple[bool, ...]
    times: np.ndarray          # (T+1,)
    pos: np.ndarray            # (T+1, N) route arc positions
    vel: np.ndarray            # (T+1, N)
    delta: np.ndarray          # (T, N) gap decisions
    routes: dict[str, Route]
    occupancy: dict[str, tuple[ZoneOccupancy, ...]]
    zone_keys: tuple[tuple[str, str], ...]
    collision: bool
    order_violation: bool
    scene: "CompiledScene"

    def index(self, vehicle_id: str) -> int:
        return self.ids.index(vehicle_id)

    def dump_rows(self):
        """Debug dump: one row per vehicle per step (t, id, lane, s, v, delta)."""
        for t in range(len(self.times) - 1):
            for n, vid in enumerate(self.ids):
                geom = self.scene.geoms[n]
                lane, _ = geom.lane_at(self.pos[t, n])
                yield (float(self.times[t]), vid, lane.id, float(self.pos[t, n]),
                       float(self.vel[t, n]), int(self.delta[t, n]))


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    reasons: tuple[str, ...]


class CompiledScene:
    """Flat-array view of an environment snapshot with resolved routes,
    pairwise conflict records and lead-vehicle (shared lane) records."""

    def __init__(self, em: EnvironmentModel, lane_map: LaneMap):
        self.em = em
        self.lane_map = lane_map
        vehicles = sorted(em.vehicles, key=lambda v: v.id)
        self.ids = tuple(v.id for v in vehicles)
        self.vehicles = tuple(vehicles)
        self.is_cav = tuple(v.controllable for v in vehicles)
        n = len(vehicles)

        declared = [v.route for v in vehicles if v.route is not None]
        hdv_candidates = [r for v in vehicles if v.route is None
                          for r in worst_case_routes(v, lane_map)]
        self.routes: dict[str, Route] = {}
        for v in vehicles:
            if v.route is not None:
                self.routes[v.id] = v.route
            else:
                others = [r for r in declared + hdv_candidates]
                self.routes[v.id] = most_conflicting_route(v, others, lane_map)

        self.geoms: list[RouteGeometry] = [lane_map.geometry(self.routes[v.id])
                                           for v in vehicles]
        self.pos0 = np.array([route_position(v, g) for v, g in zip(vehicles, self.geoms)])
        self.vel0 = np.array([v.speed for v in vehicles])
        self.route_len = np.array([g.length for g in self.geoms])
        self.stopline = np.array([g.stopline_s for g in self.geoms])

        k = _MAX_ROUTE_LANES
        self.seg_start = np.zeros((n, k))
        self.seg_vmax = np.full((n, k), 1.0)
        self.nseg = np.zeros(n, dtype=np.int64)
        for i, g in enumerate(self.geoms):
            m = len(g.lane_ids)
            assert m <= k
            self.nseg[i] = m
            for j in range(m):
                self.seg_start[i, j] = g.lane_offsets[j]
                self.seg_vmax[i, j] = g.speed_limit_at(g.lane_offsets[j] + 1e-6)
            for j in range(m, k):
                self.seg_start[i, j] = g.length + 1.0
                self.seg_vmax[i, j] = self.seg_vmax[i, m - 1]

        # zone occupancy records per vehicle (all zones on its route)
        occ_veh, occ_zone, occ_entry, occ_exit = [], [], [], []
        zone_index = {}
        self.zone_keys: list[tuple[str, str]] = []
        for i, g in enumerate(self.geoms):
            for rz in g.zones:
                key = tuple(sorted((rz.zone.lane_a, rz.zone.lane_b)))
                if key not in zone_index:
                    zone_index[key] = len(self.zone_keys)
                    self.zone_keys.append(key)
                occ_veh.append(i)
                occ_zone.append(zone_index[key])
                occ_entry.append(rz.entry_s)
                occ_exit.append(rz.exit_s)
        self.occ_veh = np.array(occ_veh, dtype=np.int64).reshape(-1)
        self.occ_zone = np.array(occ_zone, dtype=np.int64).reshape(-1)
        self.occ_entry = np.array(occ_entry, dtype=float).reshape(-1)
        self.occ_exit = np.array(occ_exit, dtype=float).reshape(-1)

        # conflict records: one per (pair, shared zone)
        self.cav_pairs: list[tuple[str, str]] = []
        pair_index: dict[tuple[str, str], int] = {}
        ri, rj = [], []
        r_entry_i, r_exit_i, r_entry_j, r_exit_j = [], [], [], []
        r_row, r_pair = [], []
        for i in range(n):
            for j in range(i + 1, n):
                a, b = self.routes[self.ids[i]], self.routes[self.ids[j]]
                if a.lanes == b.lanes:
                    continue
                zones = driver.shared_zone_bounds(self.geoms[i], self.geoms[j])
                if not zones:
                    continue
                i_priority = lane_map.has_right_of_way(a, b)
                pid = -1
                if self.is_cav[i] and self.is_cav[j]:
                    key = (self.ids[i], self.ids[j])
                    pid = pair_index.setdefault(key, len(self.cav_pairs))
                    if pid == len(self.cav_pairs):
                        self.cav_pairs.append(key)
                for entry_i, exit_i, entry_j, exit_j in zones:
                    ri.append(i)
                    rj.append(j)
                    r_entry_i.append(entry_i)
                    r_exit_i.append(exit_i)
                    r_entry_j.append(entry_j)
                    r_exit_j.append(exit_j)
                    r_row.append(1 if i_priority else 0)
                    r_pair.append(pid)
        self.rec_i = np.array(ri, dtype=np.int64).reshape(-1)
        self.rec_j = np.array(rj, dtype=np.int64).reshape(-1)
        self.rec_entry_i = np.array(r_entry_i, dtype=float).reshape(-1)
        self.rec_exit_i = np.array(r_exit_i, dtype=float).reshape(-1)
        self.rec_entry_j = np.array(r_entry_j, dtype=float).reshape(-1)
        self.rec_exit_j = np.array(r_exit_j, dtype=float).reshape(-1)
        self.rec_row = np.array(r_row, dtype=np.int8).reshape(-1)
        self.rec_pair = np.array(r_pair, dtype=np.int64).reshape(-1)

        # lead records: ordered (follower, leader) per shared lane
        lf, ll, loff, llo, lhi = [], [], [], [], []
        for i in range(n):
            gi = self.geoms[i]
            for j in range(n):
                if i == j:
                    continue
                gj = self.geoms[j]
                for lane_id, off_i, off_j in gi.shared_segments(gj):
                    lane = lane_map.lanes[lane_id]
                    lf.append(i)
                    ll.append(j)
                    loff.append(off_i - off_j)
                    llo.append(off_j)
                    lhi.append(off_j + lane.length)
        self.lead_f = np.array(lf, dtype=np.int64).reshape(-1)
        self.lead_l = np.array(ll, dtype=np.int64).reshape(-1)
        self.lead_off = np.array(loff, dtype=float).reshape(-1)
        self.lead_lo = np.array(llo, dtype=float).reshape(-1)
        self.lead_hi = np.array(lhi, dtype=float).reshape(-1)

    @property
    def n_vehicles(self) -> int:
        return len(self.ids)

    def priority_matrix(self, priority_sets: list[PriorityAssignmentSet]) -> np.ndarray:
        """(S, n_cav_pairs) matrix: +1 first-over-second, -1 reversed, 0 none."""
        mat = np.zeros((len(priority_sets), max(len(self.cav_pairs), 1)), dtype=np.int8)
        for s, pset in enumerate(priority_sets):
            for a, b in pset.assignments:
                for p, (x, y) in enumerate(self.cav_pairs):
                    if (a, b) == (x, y):
                        mat[s, p] = 1
                    elif (a, b) == (y, x):
                        mat[s, p] = -1
        return mat

    def speed_ratio(self, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
        """v / v_max at the occupied lane, clipped to 1; departed vehicles
        count with ratio 1."""
        ratio = np.empty_like(vel)
        for n in range(self.n_vehicles):
            k = self.nseg[n]
            idx = np.searchsorted(self.seg_start[n, :k], pos[..., n], side="right") - 1
            vmax = self.seg_vmax[n, np.clip(idx, 0, k - 1)]
            ratio[..., n] = np.minimum(vel[..., n] / vmax, 1.0)
            ratio[..., n] = np.where(pos[..., n] >= self.route_len[n] - 1e-6,
                                     1.0, ratio[..., n])
        return ratio


# -- kernel ----------------------------------------------------------------


@_jit
def _simulate(pos0, vel0, steps, dt,
              seg_start, seg_vmax, nseg, route_len, stopline,
              rec_i, rec_j, rec_entry_i, rec_exit_i, rec_entry_j, rec_exit_j,
              rec_row, rec_pair, pmat,
              lead_f, lead_l, lead_off, lead_lo, lead_hi,
              idm_a, idm_b, idm_t, idm_s0, idm_exp,
              a_min, a_max, gap_v_min, gap_t_margin, veh_len,
              lead_sentinel, hold_margin):
    S = pmat.shape[0]
    N = pos0.shape[0]
    R = rec_i.shape[0]
    L = lead_f.shape[0]
    pos = np.empty((S, steps + 1, N))
    vel = np.empty((S, steps + 1, N))
    dlt = np.empty((S, steps, N), dtype=np.int8)
    ab_sqrt = 2.0 * math.sqrt(idm_a * idm_b)
    for s in range(S):
        for n in range(N):
            pos[s, 0, n] = pos0[n]
            vel[s, 0, n] = vel0[n]
        for t in range(steps):
            # gap decisions
            for n in range(N):
                dlt[s, t, n] = 1
            yield_target = np.full(N, 1.0e18)
            for r in range(R):
                i = rec_i[r]
                j = rec_j[r]
                si = pos[s, t, i]
                sj = pos[s, t, j]
                vi = vel[s, t, i]
                vj = vel[s, t, j]
                pid = rec_pair[r]
                pstate = pmat[s, pid] if pid >= 0 else np.int8(0)
                # i's decision towards j
                if si < rec_entry_i[r] and sj < rec_exit_j[r]:
                    if sj >= rec_entry_j[r]:
                        dij = 0  # zone occupied: never enter, regardless of priority
                    elif pstate == 1:
                        dij = 1
                    elif pstate == -1:
                        dij = 0
                    elif rec_row[r] == 1:
                        dij = 1
                    else:
                        t_clear = (rec_exit_i[r] - si) / max(vi, gap_v_min)
                        t_reach = (rec_entry_j[r] - sj) / max(vj, gap_v_min)
                        dij = 1 if t_reach > t_clear + gap_t_margin else 0
                    if dij == 0:
                        dlt[s, t, i] = 0
                        if rec_entry_i[r] < yield_target[i]:
                            yield_target[i] = rec_entry_i[r]
                # j's decision towards i
                if sj < rec_entry_j[r] and si < rec_exit_i[r]:
                    if si >= rec_entry_i[r]:
                        dji = 0
                    elif pstate == -1:
                        dji = 1
                    elif pstate == 1:
                        dji = 0
                    elif rec_row[r] == 0:
                        dji = 1
                    else:
                        t_clear = (rec_exit_j[r] - sj) / max(vj, gap_v_min)
                        t_reach = (rec_entry_i[r] - si) / max(vi, gap_v_min)
                        dji = 1 if t_reach > t_clear + gap_t_margin else 0
                    if dji == 0:
                        dlt[s, t, j] = 0
                        if rec_entry_j[r] < yield_target[j]:
                            yield_target[j] = rec_entry_j[r]
            # lead gaps
            lead_gap = np.full(N, 1.0e18)
            lead_dv = np.zeros(N)
            for l in range(L):
                f = lead_f[l]
                ld = lead_l[l]
                sl = pos[s, t, ld]
                if sl < lead_lo[l] - 1e-9 or sl > lead_hi[l] + 1e-9:
                    continue
                g = sl + lead_off[l] - pos[s, t, f] - veh_len
                if g > 0.0 and g < lead_gap[f]:
                    lead_gap[f] = g
                    lead_dv[f] = vel[s, t, f] - vel[s, t, ld]
            # accelerations + integration
            for n in range(N):
                v = vel[s, t, n]
                p = pos[s, t, n]
                k = nseg[n]
                idx = k - 1
                while idx > 0 and p < seg_start[n, idx]:
                    idx -= 1
                vmax = seg_vmax[n, idx]
                ratio = (v / vmax) ** idm_exp
                a = idm_a * (1.0 - ratio)
                if lead_gap[n] <= lead_sentinel:
                    g = lead_gap[n]
                    if g < 0.1:
                        a = a_min
                    else:
                        hw = v * idm_t + v * lead_dv[n] / ab_sqrt
                        s_star = idm_s0 + (hw if hw > 0.0 else 0.0)
                        ai = idm_a * (1.0 - ratio - (s_star / g) ** 2)
                        if ai < a:
                            a = ai
                if dlt[s, t, n] == 0:
                    if p < stopline[n] - 0.5:
                        stop_gap = stopline[n] - p
                    else:
                        stop_gap = yield_target[n] - hold_margin - p
                    if stop_gap <= 0.0:
                        a = a_min
                    elif stop_gap < 0.1:
                        a = a_min
                    else:
                        hw = v * idm_t + v * v / ab_sqrt
                        s_star = idm_s0 + (hw if hw > 0.0 else 0.0)
                        ai = idm_a * (1.0 - ratio - (s_star / stop_gap) ** 2)
                        if ai < a:
                            a = ai
                if a < a_min:
                    a = a_min
                elif a > a_max:
                    a = a_max
                v2 = v + a * dt
                if v2 < 0.0:
                    v2 = 0.0
                p2 = p + v2 * dt
                if p2 >= route_len[n]:
                    p2 = route_len[n]
                    v2 = 0.0
                pos[s, t + 1, n] = p2
                vel[s, t + 1, n] = v2
    return pos, vel, dlt


def _run_kernel(scene: CompiledScene, pmat: np.ndarray, cfg: PredictionConfig):
    return _simulate(
        scene.pos0, scene.vel0, cfg.steps, cfg.dt,
        scene.seg_start, scene.seg_vmax, scene.nseg, scene.route_len, scene.stopline,
        scene.rec_i, scene.rec_j, scene.rec_entry_i, scene.rec_exit_i,
        scene.rec_entry_j, scene.rec_exit_j, scene.rec_row, scene.rec_pair, pmat,
        scene.lead_f, scene.lead_l, scene.lead_off, scene.lead_lo, scene.lead_hi,
        driver.IDM_A_MAX, driver.IDM_B_COMF, driver.IDM_TIME_HEADWAY,
        driver.IDM_MIN_GAP, float(driver.IDM_EXPONENT),
        driver.ACCEL_MIN, driver.ACCEL_MAX, GAP_V_MIN, GAP_T_MARGIN,
        VEHICLE_LENGTH, 100.0, ZONE_HOLD_MARGIN)


# -- batch wrapper ---------------------------------------------------------


class BatchPrediction:
    """Predictions for one scene under many candidate priority sets."""

    def __init__(self, scene: CompiledScene, priority_sets: list[PriorityAssignmentSet],
                 cfg: PredictionConfig = DEFAULT_CONFIG):
        for p in priority_sets:
            _check_priorities(scene, p)
        self.scene = scene
        self.priority_sets = list(priority_sets)
        self.cfg = cfg
        pmat = scene.priority_matrix(priority_sets)
        self.pos, self.vel, self.delta = _run_kernel(scene, pmat, cfg)
        self._analyze()

    def _analyze(self):
        sc = self.scene
        S = len(self.priority_sets)
        steps = self.cfg.steps
        times = np.arange(steps + 1) * self.cfg.dt
        # occupancy times per (scenario, occupancy record)
        n_occ = len(sc.occ_veh)
        self.t_enter = np.full((S, n_occ), np.inf)
        self.t_leave = np.full((S, n_occ), np.inf)
        for o in range(n_occ):
            p = self.pos[:, :, sc.occ_veh[o]]
            m_in = p >= sc.occ_entry[o]
            m_out = p >= sc.occ_exit[o]
            any_in = m_in.any(axis=1)
            any_out = m_out.any(axis=1)
            self.t_enter[any_in, o] = times[m_in.argmax(axis=1)[any_in]]
            self.t_leave[any_out, o] = times[m_out.argmax(axis=1)[any_out]]
        # zone co-occupancy collisions
        self.collision = np.zeros(S, dtype=bool)
        for r in range(len(sc.rec_i)):
            pi = self.pos[:, :, sc.rec_i[r]]
            pj = self.pos[:, :, sc.rec_j[r]]
            both = ((pi >= sc.rec_entry_i[r]) & (pi < sc.rec_exit_i[r])
                    & (pj >= sc.rec_entry_j[r]) & (pj < sc.rec_exit_j[r]))
            self.collision |= both.any(axis=1)
        # same-lane spacing violations
        for l in range(len(sc.lead_f)):
            sl = self.pos[:, :, sc.lead_l[l]]
            valid = (sl >= sc.lead_lo[l] - 1e-9) & (sl <= sc.lead_hi[l] + 1e-9)
            g = sl + sc.lead_off[l] - self.pos[:, :, sc.lead_f[l]] - VEHICLE_LENGTH
            self.collision |= (valid & (g > -VEHICLE_LENGTH) & (g < SAME_LANE_MIN_GAP)).any(axis=1)
        # crossing-order violations for assigned priorities
        self.order_violation = np.zeros(S, dtype=bool)
        occ_lookup = {}
        for o in range(n_occ):
            occ_lookup[(int(sc.occ_veh[o]), int(sc.occ_zone[o]))] = o
        for s, pset in enumerate(self.priority_sets):
            for a, b in pset.assignments:
                ia, ib = sc.ids.index(a), sc.ids.index(b)
                for r in range(len(sc.rec_i)):
                    if {int(sc.rec_i[r]), int(sc.rec_j[r])} != {ia, ib}:
                        continue
                    zkey = tuple(sorted(_zone_key_of_record(sc, r)))
                    z = sc.zone_keys.index(zkey)
                    o_a = occ_lookup[(ia, z)]
                    o_b = occ_lookup[(ib, z)]
                    if self.t_enter[s, o_b] < self.t_leave[s, o_a] - 1e-9:
                        self.order_violation[s] = True
        # efficiency
        ratio = self.scene.speed_ratio(self.pos[:, :-1, :], self.vel[:, :-1, :])
        lo = int(round(self.cfg.t_start / self.cfg.dt))
        hi = int(round(self.cfg.t_end / self.cfg.dt))
        travel = ratio[:, lo:hi, :].sum(axis=(1, 2)) * self.cfg.dt
        penalty = np.array([float(len(p)) for p in self.priority_sets])
        self.efficiency = travel - penalty

    def valid(self, k: int) -> bool:
        return not (self.collision[k] or self.order_violation[k])

    def trace(self, k: int) -> PredictionTrace:
        return _build_trace(self.scene, self.cfg, self.pos[k], self.vel[k],
                            self.delta[k], self.t_enter[k], self.t_leave[k],
                            bool(self.collision[k]), bool(self.order_violation[k]))


def _zone_key_of_record(sc: CompiledScene, r: int) -> tuple[str, str]:
    gi = sc.geoms[sc.rec_i[r]]
    for rz in gi.zones:
        if abs(rz.entry_s - sc.rec_entry_i[r]) < 1e-9 and abs(rz.exit_s - sc.rec_exit_i[r]) < 1e-9:
            return (rz.zone.lane_a, rz.zone.lane_b)
    raise KeyError(r)


def _build_trace(scene, cfg, pos, vel, delta, t_enter, t_leave,
                 collision, order_violation) -> PredictionTrace:
    occupancy: dict[str, tuple[ZoneOccupancy, ...]] = {}
    for n, vid in enumerate(scene.ids):
        entries = []
        for o in range(len(scene.occ_veh)):
            if scene.occ_veh[o] != n:
                continue
            entries.append(ZoneOccupancy(
                zone_index=int(scene.occ_zone[o]),
                entry_s=float(scene.occ_entry[o]),
                exit_s=float(scene.occ_exit[o]),
                t_enter=None if not np.isfinite(t_enter[o]) else float(t_enter[o]),
                t_leave=None if not np.isfinite(t_leave[o]) else float(t_leave[o]),
            ))
        occupancy[vid] = tuple(sorted(entries, key=lambda z: z.entry_s))
    return PredictionTrace(
        ids=scene.ids,
        is_cav=scene.is_cav,
        times=np.arange(cfg.steps + 1) * cfg.dt,
        pos=pos, vel=vel, delta=delta,
        routes=dict(scene.routes),
        occupancy=occupancy,
        zone_keys=tuple(scene.zone_keys),
        collision=collision,
        order_violation=order_violation,
        scene=scene,
    )


def _check_priorities(scene: CompiledScene, p: PriorityAssignmentSet):
    known = set(scene.ids)
    pairs = set(scene.cav_pairs) | {(b, a) for a, b in scene.cav_pairs}
    for a, b in p.assignments:
        if a not in known or b not in known:
            raise ValueError(f"priority assignment references unknown vehicle ({a}, {b})")
        if (a, b) not in pairs:
            raise ValueError(f"({a}, {b}) is not a conflicting CAV pair")


# -- public operations -----------------------------------------------------


def predict(em: EnvironmentModel, priorities: PriorityAssignmentSet = EMPTY_PRIORITIES,
            cfg: PredictionConfig = DEFAULT_CONFIG, lane_map: LaneMap | None = None,
            model: DriverModel = ANALYTIC, scene: CompiledScene | None = None) -> PredictionTrace:
    """Synchronous joint rollout of all vehicles under one priority set."""
    if scene is None:
        if lane_map is None:
            raise ValueError("predict needs a lane_map or a compiled scene")
        scene = CompiledScene(em, lane_map)
    if model.acc is not None or model.gap is not None:
        return _predict_reference(scene, priorities, cfg, model)
    return BatchPrediction(scene, [priorities], cfg).trace(0)


def validate(trace: PredictionTrace, priorities: PriorityAssignmentSet) -> ValidationResult:
    reasons = []
    if trace.collision:
        reasons.append("collision")
    if trace.order_violation:
        reasons.append("order_violation")
    return ValidationResult(not reasons, tuple(reasons))


def efficiency(trace: PredictionTrace, priorities: PriorityAssignmentSet,
               cfg: PredictionConfig = DEFAULT_CONFIG,
               lane_map: LaneMap | None = None) -> float:
    """Relative velocity integrated over [t_start, t_end] (left-Riemann)
    minus one second per priority assignment."""
    ratio = trace.scene.speed_ratio(trace.pos[:-1], trace.vel[:-1])
    lo = int(round(cfg.t_start / cfg.dt))
    hi = int(round(cfg.t_end / cfg.dt))
    return float(ratio[lo:hi].sum() * cfg.dt - len(priorities))


def crossing_order(trace: PredictionTrace) -> dict[tuple[str, str], list[str]]:
    """Vehicles ordered by zone entry time, per conflict zone; vehicles that
    never enter are omitted."""
    order: dict[tuple[str, str], list[tuple[float, str]]] = {}
    for vid, occs in trace.occupancy.items():
        for occ in occs:
            if occ.t_enter is None:
                continue
            order.setdefault(trace.zone_keys[occ.zone_index], []).append((occ.t_enter, vid))
    return {k: [vid for _, vid in sorted(v)] for k, v in order.items()}


# -- reference implementation (also backs MLP driver models) ---------------


def _predict_reference(scene: CompiledScene, priorities: PriorityAssignmentSet,
                       cfg: PredictionConfig, model: DriverModel) -> PredictionTrace:
    """Step-by-step Python loop with the same semantics as the kernel, built
    on the driver-model functions. Used as kernel oracle and for MLP models."""
    from .env_model import EnvObservation

    _check_priorities(scene, priorities)
    sc = scene
    n = sc.n_vehicles
    steps = cfg.steps
    pos = np.empty((steps + 1, n))
    vel = np.empty((steps + 1, n))
    dlt = np.empty((steps, n), dtype=np.int8)
    pos[0] = sc.pos0
    vel[0] = sc.vel0
    pstates = {}
    for p, (a, b) in enumerate(sc.cav_pairs):
        if (a, b) in priorities:
            pstates[p] = 1
        elif (b, a) in priorities:
            pstates[p] = -1
        else:
            pstates[p] = 0

    for t in range(steps):
        delta = np.ones(n, dtype=np.int8)
        yield_target = np.full(n, np.inf)
        for r in range(len(sc.rec_i)):
            i, j = int(sc.rec_i[r]), int(sc.rec_j[r])
            pid = int(sc.rec_pair[r])
            pstate = pstates.get(pid, 0) if pid >= 0 else 0
            for (me, other, entry_m, exit_m, entry_o, exit_o, p_me, row_me) in (
                    (i, j, sc.rec_entry_i[r], sc.rec_exit_i[r],
                     sc.rec_entry_j[r], sc.rec_exit_j[r], pstate, sc.rec_row[r] == 1),
                    (j, i, sc.rec_entry_j[r], sc.rec_exit_j[r],
                     sc.rec_entry_i[r], sc.rec_exit_i[r], -pstate, sc.rec_row[r] == 0)):
                if not (pos[t, me] < entry_m and pos[t, other] < exit_o):
                    continue
                if pos[t, other] >= entry_o:
                    d = 0  # zone occupied: never enter, regardless of priority
                elif p_me == 1:
                    d = 1
                elif p_me == -1:
                    d = 0
                elif row_me:
                    d = 1
                elif model.gap is not None:
                    gm = sc.geoms[me]
                    go = sc.geoms[other]
                    obs = np.array([
                        max((gm.stopline_s - pos[t, me])
                            - vel[t, me] ** 2 / 6.0, 0.0),
                        vel[t, me],
                        go.stopline_s - pos[t, other],
                        vel[t, other]])
                    d = 1 if float(driver.mlp_forward(model.gap, obs)[0]) > 0 else 0
                else:
                    d = 1 if driver.analytic_gap_accept(
                        pos[t, me], vel[t, me], pos[t, other], vel[t, other],
                        [(entry_m, exit_m, entry_o, exit_o)]) else 0
                if d == 0:
                    delta[me] = 0
                    yield_target[me] = min(yield_target[me], entry_m)
        for m in range(n):
            v, p = vel[t, m], pos[t, m]
            geom = sc.geoms[m]
            vmax = geom.speed_limit_at(min(p, geom.length))
            lead = None
            for l in range(len(sc.lead_f)):
                if sc.lead_f[l] != m:
                    continue
                sl = pos[t, sc.lead_l[l]]
                if sl < sc.lead_lo[l] - 1e-9 or sl > sc.lead_hi[l] + 1e-9:
                    continue
                g = sl + sc.lead_off[l] - p - VEHICLE_LENGTH
                if g > 0 and (lead is None or g < lead[0]):
                    lead = (g, vel[t, sc.lead_l[l]])
            if delta[m] == 0:
                if p < sc.stopline[m] - 0.5:
                    d_stop = sc.stopline[m] - p
                else:
                    d_stop = yield_target[m] - ZONE_HOLD_MARGIN - p
            else:
                d_stop = sc.stopline[m] - p  # informative only when delta = 1
            if model.acc is not None:
                from .env_model import _relative_headings
                obs = EnvObservation(
                    d_stop=sc.stopline[m] - p, v=v, v_max=vmax,
                    delta_psi=_relative_headings(geom, p),
                    d_lead=lead[0] if lead else 100.0,
                    v_lead=lead[1] if lead else vmax)
                a = driver.acceleration(obs, int(delta[m]), model)
            else:
                stop_gap = d_stop if delta[m] == 0 else None
                if stop_gap is not None and stop_gap <= 0.0:
                    a = driver.ACCEL_MIN
                else:
                    a = driver.idm_acceleration(
                        v, vmax, lead[0] if lead else None,
                        lead[1] if lead else vmax, stop_gap)
            v2 = max(v + a * cfg.dt, 0.0)
            p2 = p + v2 * cfg.dt
            if p2 >= geom.length:
                p2, v2 = geom.length, 0.0
            pos[t + 1, m] = p2
            vel[t + 1, m] = v2
            dlt[t, m] = delta[m]

    # reuse the batch analysis machinery for flags and occupancy times
    fake = BatchPrediction.__new__(BatchPrediction)
    fake.scene = sc
    fake.priority_sets = [priorities]
    fake.cfg = cfg
    fake.pos = pos[None, :, :]
    fake.vel = vel[None, :, :]
    fake.delta = dlt[None, :, :]
    fake._analyze()
    return fake.trace(0)
