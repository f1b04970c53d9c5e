"""Scenario generation: exhaustive enumeration of small initial
configurations, seeded random sampling, and mixed-traffic assignment."""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .geometry import LaneMap

#: Spawn distances before the stop line: first slot 15 m, then 25 m spacing.
SLOT_BASE = 15.0
SLOT_SPACING = 25.0

#: Per-arm spawn offset added to every slot distance. Approaches are
#: staggered so conflicting vehicles do not reach the junction at exactly the
#: same instant (simultaneous arrivals are a degenerate, measure-zero
#: configuration on a real road, and they make the two crossing orders of a
#: conflict pair cost-symmetric, which starves the cooperative planners of
#: anything to optimize). The minor road arrives first, the main-road
#: through direction last.
ARM_STAGGER = {"west": 0.0, "east": 10.0, "north": 20.0}

#: Initial speed of every spawned vehicle.
INITIAL_SPEED = 8.0

ARMS = ("east", "north", "west")

MAX_PER_ARM_ENUM = 2
MAX_PER_ARM_RANDOM = 4
MAX_TOTAL_RANDOM = 8


@dataclass(frozen=True)
class ScenarioVehicle:
    vehicle_id: str
    arm: str                 # spawn arm
    slot: int                # queue index on the arm (0 = closest to the line)
    target: str              # destination arm
    is_cav: bool = True
    distance: float | None = None   # overrides the slot-derived spawn distance

    @property
    def spawn_distance(self) -> float:
        """Distance before the stop line at spawn."""
        if self.distance is not None:
            return self.distance
        return SLOT_BASE + ARM_STAGGER[self.arm] + SLOT_SPACING * self.slot


@dataclass(frozen=True)
class Scenario:
    id: str
    vehicles: tuple[ScenarioVehicle, ...]
    source: str              # "enumerated" | "random"

    def __post_init__(self):
        if self.source not in ("enumerated", "random"):
            raise ValueError(f"unknown scenario source {self.source!r}")
        per_arm: dict[str, int] = {}
        for v in self.vehicles:
            per_arm[v.arm] = per_arm.get(v.arm, 0) + 1
        limit = MAX_PER_ARM_ENUM if self.source == "enumerated" else MAX_PER_ARM_RANDOM
        if any(c > limit for c in per_arm.values()):
            raise ValueError(f"scenario {self.id}: too many vehicles on one arm")
        if self.source == "random" and len(self.vehicles) > MAX_TOTAL_RANDOM:
            raise ValueError(f"scenario {self.id}: more than {MAX_TOTAL_RANDOM} vehicles")


def _arm_configurations(arm: str, targets: dict[str, tuple[str, ...]]):
    """All per-arm spawn configurations with 0, 1 or 2 vehicles: 7 per arm."""
    opts = targets[arm]
    yield ()
    for t in opts:
        yield (t,)
    for pair in itertools.product(opts, repeat=2):
        yield pair


def _targets(lane_map: LaneMap) -> dict[str, tuple[str, ...]]:
    out: dict[str, list[str]] = {arm: [] for arm in ARMS}
    for r in lane_map.routes:
        out[r.source_arm].append(r.target_arm)
    return {arm: tuple(sorted(t)) for arm, t in out.items()}


def has_conflicting_pair(scenario: Scenario, lane_map: LaneMap) -> bool:
    for a, b in itertools.combinations(scenario.vehicles, 2):
        ra = lane_map.route(a.arm, a.target)
        rb = lane_map.route(b.arm, b.target)
        if ra.lanes != rb.lanes and lane_map.conflicting(ra, rb):
            return True
    return False


def _build(sid: str, per_arm: dict[str, tuple[str, ...]], source: str) -> Scenario:
    vehicles = []
    for arm in ARMS:
        for slot, target in enumerate(per_arm.get(arm, ())):
            vehicles.append(ScenarioVehicle(f"{arm}{slot}", arm, slot, target))
    return Scenario(sid, tuple(vehicles), source)


def enumerate_scenarios(lane_map: LaneMap) -> list[Scenario]:
    """Every combination of 0-2 vehicles per arm with all route choices,
    keeping only configurations with at least one conflicting pair."""
    targets = _targets(lane_map)
    out = []
    combos = itertools.product(*(_arm_configurations(arm, targets) for arm in ARMS))
    for combo in combos:
        per_arm = dict(zip(ARMS, combo))
        candidate = _build("tmp", per_arm, "enumerated")
        if not has_conflicting_pair(candidate, lane_map):
            continue
        out.append(replace(candidate, id=f"enum-{len(out):03d}"))
    return out


def sample_random_scenarios(n: int = 200, seed: int = 0,
                            lane_map: LaneMap | None = None) -> list[Scenario]:
    """Seeded sample of scenarios with up to four vehicles per arm, uniform
    random routes, at most eight vehicles total (at least one)."""
    targets = _targets(lane_map) if lane_map is not None else {
        arm: tuple(a for a in ARMS if a != arm) for arm in ARMS}
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        counts = {arm: int(rng.integers(0, MAX_PER_ARM_RANDOM + 1)) for arm in ARMS}
        total = sum(counts.values())
        if total == 0 or total > MAX_TOTAL_RANDOM:
            continue
        per_arm = {arm: tuple(targets[arm][int(rng.integers(len(targets[arm])))]
                              for _ in range(counts[arm]))
                   for arm in ARMS}
        out.append(_build(f"rand-{len(out):03d}", per_arm, "random"))
    return out


def reference_scenario() -> Scenario:
    """Three-CAV showcase: a left turner off the main road, a right turner
    onto it, and a through vehicle on the main road. Spawns are placed so the
    non-cooperative crossing order puts the through vehicle first."""
    return Scenario("reference", (
        ScenarioVehicle("v1", "east", 0, "west", distance=15.0),
        ScenarioVehicle("v2", "west", 0, "east", distance=15.0),
        ScenarioVehicle("v3", "north", 0, "east", distance=30.0),
    ), "enumerated")


def assign_mixed(scenario: Scenario, ratio: float = 0.5, seed: int = 0) -> Scenario:
    """Seeded split into CAVs and HDVs. For ratio 0.5 exactly floor(N/2) of
    one class and ceil(N/2) of the other; with odd N the majority class is
    chosen randomly."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    n = len(scenario.vehicles)
    rng = np.random.default_rng([seed, zlib.crc32(scenario.id.encode())])
    exact = ratio * n
    n_cav = int(np.floor(exact))
    frac = exact - n_cav
    if frac > 1e-12 and rng.random() < frac:
        n_cav += 1
    cav_idx = set(rng.choice(n, size=n_cav, replace=False).tolist()) if n else set()
    vehicles = tuple(replace(v, is_cav=(k in cav_idx))
                     for k, v in enumerate(scenario.vehicles))
    return replace(scenario, vehicles=vehicles)
