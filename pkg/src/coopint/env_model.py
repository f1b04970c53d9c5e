"""Vehicle/environment data model, lane matching, worst-case routes for HDVs,
and the observation extraction consumed by the driver model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import LaneMap, Route, RouteGeometry

#: Longitudinal footprint used for lead gaps and same-lane collision checks.
VEHICLE_LENGTH = 5.0

#: Lateral lane-matching tolerance (half lane width plus positioning noise).
MATCH_LATERAL_TOL = 2.0

#: Maximum angle between vehicle heading and lane heading for a match.
MATCH_MAX_ANGLE = math.radians(30.0)

#: No-lead sentinel distance; beyond this a lead vehicle is ignored.
LEAD_SENTINEL = 100.0

#: Comfortable deceleration defining the point of guaranteed arrival.
B_COMF = 3.0

#: Signed route offsets (m) at which relative lane headings are sampled.
HEADING_OFFSETS = (-10.0, -3.0, 3.0, 10.0, 30.0, 100.0)

#: Road-following continuation per source arm, used to break ties when an
#: HDV's route must be guessed (the main road bends north--east).
THROUGH_TARGET = {"north": "east", "east": "north", "west": "east"}


class ObservationError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleState:
    id: str
    x: float
    y: float
    heading: float
    speed: float
    route: Route | None = None
    controllable: bool = False
    lane_position: tuple[str, float] | None = None
    accel: float = 0.0

    def __post_init__(self):
        if self.speed < 0.0:
            raise ValueError(f"vehicle {self.id}: speed must be >= 0")
        if self.controllable and self.route is None:
            raise ValueError(f"vehicle {self.id}: controllable vehicles must declare a route")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class EnvironmentModel:
    vehicles: tuple[VehicleState, ...]
    timestamp: float = 0.0

    def __post_init__(self):
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")

    def get(self, vehicle_id: str) -> VehicleState:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        raise KeyError(vehicle_id)


@dataclass(frozen=True)
class EnvObservation:
    d_stop: float
    v: float
    v_max: float
    delta_psi: tuple[float, float, float, float, float, float]
    d_lead: float
    v_lead: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.d_stop, self.v, self.v_max, *self.delta_psi,
                         self.d_lead, self.v_lead])


@dataclass(frozen=True)
class GapObservation:
    d_pga: float
    v_i: float
    d_stop_j: float
    v_j: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.d_pga, self.v_i, self.d_stop_j, self.v_j])


# -- lane matching ---------------------------------------------------------


def match_lanes(pose, lane_map: LaneMap) -> list[tuple[str, float, float]]:
    """Lanes within lateral tolerance whose heading deviates <= 30 deg.

    ``pose`` is (x, y, heading). Returns (lane id, arc length, angular error)
    sorted by lateral distance.
    """
    x, y, heading = pose
    out = []
    for lid in sorted(lane_map.lanes):
        lane = lane_map.lanes[lid]
        s, lateral = lane.project((x, y))
        if lateral > MATCH_LATERAL_TOL:
            continue
        ang = abs((lane.heading_at(s) - heading + math.pi) % (2 * math.pi) - math.pi)
        if ang > MATCH_MAX_ANGLE + 1e-12:
            continue
        out.append((lid, s, ang, lateral))
    out.sort(key=lambda t: (t[3], t[0]))
    return [(lid, s, ang) for lid, s, ang, _ in out]


def match_vehicle(vehicle: VehicleState, lane_map: LaneMap) -> VehicleState:
    """Attach the best lane match (route-consistent for CAVs)."""
    matches = match_lanes((vehicle.x, vehicle.y, vehicle.heading), lane_map)
    if vehicle.route is not None:
        matches = [m for m in matches if m[0] in vehicle.route.lanes] or matches
    if not matches:
        return replace(vehicle, lane_position=None)
    lid, s, _ = matches[0]
    return replace(vehicle, lane_position=(lid, s))


def worst_case_routes(vehicle: VehicleState, lane_map: LaneMap) -> tuple[Route, ...]:
    """CAV: its declared route. HDV: all routes consistent with any matched lane."""
    if vehicle.route is not None:
        return (vehicle.route,)
    if vehicle.lane_position is not None:
        matched = {vehicle.lane_position[0]}
    else:
        matches = match_lanes((vehicle.x, vehicle.y, vehicle.heading), lane_map)
        if not matches:
            raise ObservationError(f"vehicle {vehicle.id} matches no lane")
        matched = {m[0] for m in matches}
    routes = [r for r in lane_map.routes if matched & set(r.lanes)]
    if not routes:
        raise ObservationError(f"vehicle {vehicle.id}: matched lanes on no route")
    return tuple(sorted(routes, key=lambda r: r.key))


def most_conflicting_route(vehicle: VehicleState, others: list[Route],
                           lane_map: LaneMap) -> Route:
    """Worst-case route that intersects the most other routes; ties prefer
    following the road, then lexicographic order."""
    candidates = worst_case_routes(vehicle, lane_map)
    if len(candidates) == 1:
        return candidates[0]

    def score(r: Route):
        n = sum(1 for o in others if o.lanes != r.lanes and lane_map.conflicting(r, o))
        through = 1 if THROUGH_TARGET.get(r.source_arm) == r.target_arm else 0
        return (-n, -through, r.key)

    return min(candidates, key=score)


def route_position(vehicle: VehicleState, geom: RouteGeometry) -> float:
    """Route arc-length of a matched vehicle; its lane must be on the route."""
    if vehicle.lane_position is None:
        raise ObservationError(f"vehicle {vehicle.id} is unmatched")
    lane_id, s = vehicle.lane_position
    return geom.position_of(lane_id, s)


# -- observations ----------------------------------------------------------


def _relative_headings(geom: RouteGeometry, s: float) -> tuple[float, ...]:
    h0 = geom.heading_at(min(max(s, 0.0), geom.length))
    out = []
    for off in HEADING_OFFSETS:
        h = geom.heading_at(min(max(s + off, 0.0), geom.length))
        out.append((h - h0 + math.pi) % (2 * math.pi) - math.pi)
    return tuple(out)


def find_lead(vehicle: VehicleState, em: EnvironmentModel, geom: RouteGeometry,
              lane_map: LaneMap) -> tuple[float, float] | None:
    """Nearest vehicle ahead on the route's lane sequence: (net gap, speed)."""
    s0 = route_position(vehicle, geom)
    best = None
    for other in em.vehicles:
        if other.id == vehicle.id or other.lane_position is None:
            continue
        lane_id, ls = other.lane_position
        if lane_id not in geom.lane_ids:
            continue
        gap = geom.position_of(lane_id, ls) - s0 - VEHICLE_LENGTH
        if gap <= 0:
            continue
        if best is None or gap < best[0]:
            best = (gap, other.speed)
    if best is None or best[0] > LEAD_SENTINEL:
        return None
    return best


def observe_env(vehicle: VehicleState, em: EnvironmentModel, lane_map: LaneMap,
                route: Route | None = None) -> EnvObservation:
    """Environment observation of one vehicle (deterministic and total for
    matched vehicles). ``route`` overrides the declared route (worst-case
    choice for HDVs)."""
    route = route or vehicle.route
    if route is None:
        route = most_conflicting_route(
            vehicle, [v.route for v in em.vehicles if v.route is not None], lane_map)
    geom = lane_map.geometry(route)
    s = route_position(vehicle, geom)
    lane, _ = geom.lane_at(s)
    lead = find_lead(vehicle, em, geom, lane_map)
    if lead is None:
        d_lead, v_lead = LEAD_SENTINEL, lane.speed_limit
    else:
        d_lead, v_lead = lead
    return EnvObservation(
        d_stop=geom.stopline_s - s,
        v=vehicle.speed,
        v_max=lane.speed_limit,
        delta_psi=_relative_headings(geom, s),
        d_lead=d_lead,
        v_lead=v_lead,
    )


def point_of_guaranteed_arrival(d_stop: float, speed: float) -> float:
    """Distance to the point from which the vehicle can no longer stop before
    the stop line at comfortable deceleration; floored at 0 once past it."""
    return max(d_stop - speed * speed / (2.0 * B_COMF), 0.0)


def observe_gap(vi: VehicleState, vj: VehicleState, lane_map: LaneMap,
                route_i: Route | None = None, route_j: Route | None = None) -> GapObservation:
    """Gap observation of vi towards a conflicting vehicle vj."""
    route_i = route_i or vi.route
    route_j = route_j or vj.route
    if route_i is None or route_j is None:
        raise ObservationError("routes must be known or resolved before observing gaps")
    if not lane_map.conflicting(route_i, route_j):
        raise ObservationError(f"{vi.id} and {vj.id} share no conflict zone")
    gi = lane_map.geometry(route_i)
    gj = lane_map.geometry(route_j)
    d_stop_i = gi.stopline_s - route_position(vi, gi)
    d_stop_j = gj.stopline_s - route_position(vj, gj)
    return GapObservation(
        d_pga=point_of_guaranteed_arrival(d_stop_i, vi.speed),
        v_i=vi.speed,
        d_stop_j=d_stop_j,
        v_j=vj.speed,
    )
