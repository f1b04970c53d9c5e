"""Lane-level map model: lanes, routes, conflict zones, and the built-in T-junction.

All positions are meters on a local 2D ground plane, speeds in m/s.
Conflict zones are recomputed geometrically from the centerlines whenever a
map is constructed; they are never trusted from a file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import yaml
from shapely.geometry import LineString, Point

ARMS = ("north", "east", "west")
MAJOR_ARMS = frozenset({"north", "east"})

#: Half-width of the swept corridor used for conflict-zone extraction
#: (3 m passenger-car sweep).
CORRIDOR_HALF_WIDTH = 1.5

#: Overlap regions smaller than this are treated as numerical slivers.
_MIN_ZONE_AREA = 0.05


class MapError(ValueError):
    """Raised for malformed map documents or degenerate geometry."""


class DanglingReference(MapError):
    """A successor id points to a lane that does not exist."""


@dataclass(eq=False)
class Lane:
    id: str
    arm: str
    speed_limit: float
    centerline: np.ndarray  # (M, 2)
    successors: tuple[str, ...] = ()
    priority_rank: int = 0

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        if self.centerline.ndim != 2 or self.centerline.shape[0] < 2 or self.centerline.shape[1] != 2:
            raise MapError(f"lane {self.id}: centerline needs >= 2 2D points")
        seg = np.diff(self.centerline, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seglen <= 0.0):
            raise MapError(f"lane {self.id}: consecutive centerline points must be distinct")
        if self.speed_limit <= 0.0:
            raise MapError(f"lane {self.id}: speed_limit must be positive")
        if self.arm not in ARMS:
            raise MapError(f"lane {self.id}: unknown arm {self.arm!r}")
        self._cumdist = np.concatenate([[0.0], np.cumsum(seglen)])
        self._headings = np.arctan2(seg[:, 1], seg[:, 0])

    @property
    def length(self) -> float:
        return float(self._cumdist[-1])

    def pose_at(self, s: float) -> tuple[np.ndarray, float]:
        """Linear interpolation along the polyline; heading is the segment direction."""
        if s < -1e-9 or s > self.length + 1e-9:
            raise ValueError(f"arc length {s} outside [0, {self.length}] on lane {self.id}")
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cumdist, s, side="right") - 1)
        i = min(i, len(self._headings) - 1)
        ds = s - self._cumdist[i]
        p0 = self.centerline[i]
        h = self._headings[i]
        return p0 + ds * np.array([math.cos(h), math.sin(h)]), float(h)

    def heading_at(self, s: float) -> float:
        return self.pose_at(s)[1]

    def project(self, point) -> tuple[float, float]:
        """Nearest arc-length position and lateral distance for a 2D point."""
        p = np.asarray(point, dtype=float)
        a = self.centerline[:-1]
        b = self.centerline[1:]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.hypot(*(p - proj).T)
        i = int(np.argmin(d))
        s = self._cumdist[i] + t[i] * math.sqrt(denom[i])
        return float(s), float(d[i])

    @cached_property
    def shape(self) -> LineString:
        return LineString(self.centerline)


@dataclass(frozen=True)
class Route:
    lanes: tuple[str, ...]
    source_arm: str
    target_arm: str

    def __post_init__(self):
        if self.source_arm == self.target_arm:
            raise MapError("route source and target arm must differ")

    @property
    def key(self) -> tuple[str, str]:
        return (self.source_arm, self.target_arm)


@dataclass(frozen=True)
class ConflictZone:
    lane_a: str
    lane_b: str
    entry_a: float
    exit_a: float
    entry_b: float
    exit_b: float
    kind: str  # "crossing" | "merging"

    def __post_init__(self):
        if not (self.entry_a < self.exit_a and self.entry_b < self.exit_b):
            raise MapError("conflict zone entry must precede exit on both lanes")

    def swapped(self) -> "ConflictZone":
        return ConflictZone(self.lane_b, self.lane_a, self.entry_b, self.exit_b,
                            self.entry_a, self.exit_a, self.kind)

    def bounds_for(self, lane_id: str) -> tuple[float, float]:
        if lane_id == self.lane_a:
            return (self.entry_a, self.exit_a)
        if lane_id == self.lane_b:
            return (self.entry_b, self.exit_b)
        raise KeyError(lane_id)

    def other_lane(self, lane_id: str) -> str:
        if lane_id == self.lane_a:
            return self.lane_b
        if lane_id == self.lane_b:
            return self.lane_a
        raise KeyError(lane_id)


@dataclass(frozen=True)
class RouteZone:
    """A conflict zone located on a route, in route arc-length coordinates."""
    zone: ConflictZone
    lane: str            # the route's own lane the zone lies on
    other_lane: str
    entry_s: float
    exit_s: float


class RouteGeometry:
    """Arc-length geometry of a route: concatenated centerline, speed limits,
    stop line and conflict zones in route coordinates."""

    def __init__(self, lane_map: "LaneMap", route: Route):
        self.route = route
        self.lane_ids = route.lanes
        lanes = [lane_map.lanes[lid] for lid in route.lanes]
        offs = [0.0]
        for ln in lanes[:-1]:
            offs.append(offs[-1] + ln.length)
        self.lane_offsets = tuple(offs)
        self.length = offs[-1] + lanes[-1].length
        # Stop line: junction-entry boundary = end of the approach lane.
        self.stopline_s = offs[1] if len(lanes) > 1 else self.length
        # Junction exit = start of the last lane (exit lane) of the route.
        self.junction_exit_s = offs[-1] if len(lanes) > 1 else self.length
        self._lanes = lanes
        self._map = lane_map
        self.zones: tuple[RouteZone, ...] = tuple(
            RouteZone(z, lid, z.other_lane(lid),
                      off + z.bounds_for(lid)[0], off + z.bounds_for(lid)[1])
            for lid, off in zip(route.lanes, offs)
            for z in lane_map.zones_of_lane(lid)
        )

    def lane_at(self, s: float) -> tuple[Lane, float]:
        """Lane occupied at route position s and local arc length on it."""
        s = min(max(s, 0.0), self.length)
        i = len(self.lane_offsets) - 1
        while i > 0 and s < self.lane_offsets[i]:
            i -= 1
        ln = self._lanes[i]
        return ln, min(s - self.lane_offsets[i], ln.length)

    def speed_limit_at(self, s: float) -> float:
        return self.lane_at(s)[0].speed_limit

    def pose_at(self, s: float) -> tuple[np.ndarray, float]:
        ln, ls = self.lane_at(s)
        return ln.pose_at(ls)

    def heading_at(self, s: float) -> float:
        return self.pose_at(s)[1]

    def position_of(self, lane_id: str, lane_s: float) -> float:
        """Route arc-length of a (lane, local s) location; lane must be on the route."""
        i = self.lane_ids.index(lane_id)
        return self.lane_offsets[i] + lane_s

    def shared_segments(self, other: "RouteGeometry") -> list[tuple[str, float, float]]:
        """Lanes shared with another route: (lane id, offset on self, offset on other)."""
        out = []
        for lid, off in zip(self.lane_ids, self.lane_offsets):
            if lid in other.lane_ids:
                out.append((lid, off, other.lane_offsets[other.lane_ids.index(lid)]))
        return out


def _turn_sign(geom: RouteGeometry) -> float:
    """Sign of the overall turn: >0 left, <0 right, ~0 straight."""
    h0 = geom.heading_at(0.0)
    h1 = geom.heading_at(geom.length)
    d = (h1 - h0 + math.pi) % (2 * math.pi) - math.pi
    if abs(d) < 0.1:
        return 0.0
    return math.copysign(1.0, d)


class LaneMap:
    """Immutable after construction; safe for shared concurrent reads."""

    def __init__(self, lanes: list[Lane], meta: dict | None = None):
        self.lanes: dict[str, Lane] = {}
        for ln in lanes:
            if ln.id in self.lanes:
                raise MapError(f"duplicate lane id {ln.id}")
            self.lanes[ln.id] = ln
        for ln in lanes:
            for succ in ln.successors:
                if succ not in self.lanes:
                    raise DanglingReference(f"lane {ln.id}: successor {succ!r} does not exist")
        self.meta = dict(meta or {})
        self.zones: tuple[ConflictZone, ...] = tuple(extract_conflict_zones(self))
        self._zones_by_lane: dict[str, list[ConflictZone]] = {lid: [] for lid in self.lanes}
        for z in self.zones:
            self._zones_by_lane[z.lane_a].append(z)
            self._zones_by_lane[z.lane_b].append(z.swapped())
        self.routes: tuple[Route, ...] = tuple(self._derive_routes())
        self._geom_cache: dict[tuple[str, ...], RouteGeometry] = {}

    # -- structure ---------------------------------------------------------

    def _derive_routes(self) -> list[Route]:
        has_pred = {s for ln in self.lanes.values() for s in ln.successors}
        entries = sorted(lid for lid in self.lanes if lid not in has_pred)
        routes = []

        def walk(path):
            last = self.lanes[path[-1]]
            if not last.successors:
                src = self.lanes[path[0]].arm
                dst = last.arm
                if src != dst:
                    routes.append(Route(tuple(path), src, dst))
                return
            for s in sorted(last.successors):
                walk(path + [s])

        for e in entries:
            walk([e])
        return sorted(routes, key=lambda r: r.lanes)

    def route(self, source_arm: str, target_arm: str) -> Route:
        for r in self.routes:
            if r.key == (source_arm, target_arm):
                return r
        raise KeyError((source_arm, target_arm))

    def geometry(self, route: Route) -> RouteGeometry:
        g = self._geom_cache.get(route.lanes)
        if g is None:
            g = self._geom_cache[route.lanes] = RouteGeometry(self, route)
        return g

    def zones_of_lane(self, lane_id: str) -> list[ConflictZone]:
        """Zones touching a lane, oriented so lane_a == lane_id."""
        return self._zones_by_lane[lane_id]

    # -- conflicts and priority -------------------------------------------

    def route_conflicts(self, a: Route, b: Route) -> list[ConflictZone]:
        """Zones on lane pairs occurring on both routes, ordered along route a."""
        if a.lanes == b.lanes:
            return []
        ga = self.geometry(a)
        lanes_b = set(b.lanes)
        hits = [rz for rz in ga.zones if rz.other_lane in lanes_b]
        hits.sort(key=lambda rz: rz.entry_s)
        return [rz.zone for rz in hits]

    def conflicting(self, a: Route, b: Route) -> bool:
        return bool(self.route_conflicts(a, b))

    def has_right_of_way(self, a: Route, b: Route) -> bool:
        """True iff route a has (static) right of way over route b.

        Major road (north--east) over minor (west); staying on the major road
        beats leaving it; a right turn beats a path crossing the oncoming lane.
        Antisymmetric for any pair of distinct routes.
        """
        if a.key == b.key:
            raise ValueError("right of way is undefined for identical routes")
        a_major = a.source_arm in MAJOR_ARMS
        b_major = b.source_arm in MAJOR_ARMS
        if a_major != b_major:
            return a_major
        a_stays = a_major and a.target_arm in MAJOR_ARMS
        b_stays = b_major and b.target_arm in MAJOR_ARMS
        if a_stays != b_stays:
            return a_stays
        ta = _turn_sign(self.geometry(a))
        tb = _turn_sign(self.geometry(b))
        if (ta < 0) != (tb < 0):
            return ta < 0  # right turn beats crossing the oncoming lane
        return a.key < b.key  # deterministic tiebreak for non-conflicting pairs


# -- conflict-zone extraction ---------------------------------------------


def _excluded_pair(a: Lane, b: Lane) -> bool:
    if a.id == b.id:
        return True
    if b.id in a.successors or a.id in b.successors:
        return True
    return False


def extract_conflict_zones(lane_map_or_lanes) -> list[ConflictZone]:
    """One zone per connected overlap region of the inflated sweep corridors
    of every non-successor lane pair. Leader/follower overlap (direct
    successors or lanes forking from a common predecessor) is a lane-following
    relation, not a zone.
    """
    if isinstance(lane_map_or_lanes, LaneMap):
        lanes = list(lane_map_or_lanes.lanes.values())
    else:
        lanes = list(lane_map_or_lanes)
    by_id = {ln.id: ln for ln in lanes}
    siblings: set[frozenset] = set()
    for ln in lanes:
        for s1 in ln.successors:
            for s2 in ln.successors:
                if s1 != s2:
                    siblings.add(frozenset((s1, s2)))
    corridors = {ln.id: ln.shape.buffer(CORRIDOR_HALF_WIDTH, cap_style="flat") for ln in lanes}
    zones: list[ConflictZone] = []
    ids = sorted(by_id)
    for i, ia in enumerate(ids):
        for ib in ids[i + 1:]:
            a, b = by_id[ia], by_id[ib]
            if _excluded_pair(a, b) or frozenset((ia, ib)) in siblings:
                continue
            inter = corridors[ia].intersection(corridors[ib])
            if inter.is_empty:
                continue
            parts = list(getattr(inter, "geoms", [inter]))
            kind = "merging" if set(a.successors) & set(b.successors) else "crossing"
            for part in parts:
                if part.area < _MIN_ZONE_AREA:
                    continue
                ea, xa = _projected_extent(a, part)
                eb, xb = _projected_extent(b, part)
                if xa - ea < 1e-6 or xb - eb < 1e-6:
                    continue
                zones.append(ConflictZone(ia, ib, ea, xa, eb, xb, kind))
    return zones


def _projected_extent(lane: Lane, polygon) -> tuple[float, float]:
    line = lane.shape
    clipped = line.intersection(polygon)
    svals: list[float] = []
    if not clipped.is_empty:
        for g in getattr(clipped, "geoms", [clipped]):
            for c in g.coords:
                svals.append(line.project(Point(c)))
    for c in polygon.exterior.coords:
        p = Point(c)
        if line.distance(p) <= CORRIDOR_HALF_WIDTH + 1e-6:
            svals.append(line.project(p))
    lo = max(0.0, min(svals))
    hi = min(lane.length, max(svals))
    return lo, hi


# -- built-in junction -----------------------------------------------------

_ARM_LENGTH = 120.0
_JUNCTION_RADIUS = 12.0
_LANE_OFFSET = 1.75
_V_MAIN = 11.11
_V_NORTH = 8.33


def _arc(center, radius, a0, a1, step=2.0):
    """Polyline along a circular arc; angles in degrees, signed sweep."""
    n = max(8, int(abs(a1 - a0) * math.pi / 180.0 * radius / step) + 1)
    ang = np.radians(np.linspace(a0, a1, n + 1))
    cx, cy = center
    return np.column_stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)])


def build_lehr_junction() -> LaneMap:
    """T-junction with a bending main road (north--east) and a minor road
    from the west. 11.11 m/s on the east/west legs, 8.33 m/s on the north leg.
    """
    d = _JUNCTION_RADIUS
    o = _LANE_OFFSET
    L = _ARM_LENGTH
    r_out = d + o   # outer (wide) turn arcs
    r_in = d - o    # inner (tight) turn arcs

    lanes = [
        Lane("west_in", "west", _V_MAIN, [[-d - L, -o], [-d, -o]],
             successors=("w_e", "w_n"), priority_rank=1),
        Lane("west_out", "west", _V_MAIN, [[-d, o], [-d - L, o]], priority_rank=1),
        Lane("east_in", "east", _V_MAIN, [[d + L, o], [d, o]],
             successors=("e_n", "e_w"), priority_rank=0),
        Lane("east_out", "east", _V_MAIN, [[d, -o], [d + L, -o]], priority_rank=0),
        Lane("north_in", "north", _V_NORTH, [[-o, d + L], [-o, d]],
             successors=("n_e", "n_w"), priority_rank=0),
        Lane("north_out", "north", _V_NORTH, [[o, d], [o, d + L]], priority_rank=0),
        # connectors (arcs are concentric per arm pair, so opposing turns
        # between the same arms never overlap)
        Lane("w_n", "west", min(_V_MAIN, _V_NORTH), _arc((-d, d), r_out, -90.0, 0.0),
             successors=("north_out",), priority_rank=1),
        Lane("w_e", "west", _V_MAIN, [[-d, -o], [d, -o]],
             successors=("east_out",), priority_rank=1),
        Lane("e_n", "east", min(_V_MAIN, _V_NORTH), _arc((d, d), r_in, -90.0, -180.0),
             successors=("north_out",), priority_rank=0),
        Lane("e_w", "east", _V_MAIN, [[d, o], [-d, o]],
             successors=("west_out",), priority_rank=0),
        Lane("n_e", "north", min(_V_MAIN, _V_NORTH), _arc((d, d), r_out, 180.0, 270.0),
             successors=("east_out",), priority_rank=0),
        Lane("n_w", "north", min(_V_MAIN, _V_NORTH), _arc((-d, d), r_in, 0.0, -90.0),
             successors=("west_out",), priority_rank=0),
    ]
    return LaneMap(lanes, meta={"name": "lehr_t_junction"})


# -- map document I/O ------------------------------------------------------


def dump_map(lane_map: LaneMap) -> str:
    doc = {
        "meta": lane_map.meta,
        "lanes": [
            {
                "id": ln.id,
                "arm": ln.arm,
                "speed_limit_mps": round(float(ln.speed_limit), 6),
                "priority_rank": ln.priority_rank,
                "successors": list(ln.successors),
                "centerline": [[round(float(x), 6), round(float(y), 6)] for x, y in ln.centerline],
            }
            for ln in sorted(lane_map.lanes.values(), key=lambda l: l.id)
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_map(map_document: str) -> LaneMap:
    """Parse and validate a map document; conflict zones are recomputed."""
    try:
        doc = yaml.safe_load(map_document)
    except yaml.YAMLError as exc:
        raise MapError(f"unparseable map document: {exc}") from exc
    if not isinstance(doc, dict) or "lanes" not in doc:
        raise MapError("map document must be a mapping with a 'lanes' key")
    lanes = []
    for entry in doc["lanes"]:
        missing = {"id", "arm", "speed_limit_mps", "centerline"} - set(entry)
        if missing:
            raise MapError(f"lane entry missing keys: {sorted(missing)}")
        lanes.append(Lane(
            id=str(entry["id"]),
            arm=str(entry["arm"]),
            speed_limit=float(entry["speed_limit_mps"]),
            centerline=np.asarray(entry["centerline"], dtype=float),
            successors=tuple(entry.get("successors", ())),
            priority_rank=int(entry.get("priority_rank", 0)),
        ))
    return LaneMap(lanes, meta=doc.get("meta"))


def default_map_document() -> str:
    """The built-in junction serialized as a map document."""
    return dump_map(build_lehr_junction())
