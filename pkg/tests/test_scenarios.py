import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopint.scenarios import (ARMS, ARM_STAGGER, INITIAL_SPEED,
                               MAX_PER_ARM_RANDOM,
                               MAX_TOTAL_RANDOM, SLOT_BASE, SLOT_SPACING,
                               Scenario, ScenarioVehicle, assign_mixed,
                               enumerate_scenarios, has_conflicting_pair,
                               reference_scenario, sample_random_scenarios)


# -- enumeration oracle -----------------------------------------------------


def test_enumeration_count_matches_oracle(lane_map):
    """Independent count: per arm 1 + 2 + 4 = 7 spawn configurations (0, 1 or
    2 vehicles choosing among two targets), 7^3 = 343 raw combinations, minus
    those without any conflicting route pair (checked by brute force over all
    pairs with the map's conflict relation)."""
    scens = enumerate_scenarios(lane_map)

    targets = {arm: tuple(sorted(r.target_arm for r in lane_map.routes
                                 if r.source_arm == arm)) for arm in ARMS}
    assert all(len(t) == 2 for t in targets.values())

    def conflicts(combo):
        vehicles = [(arm, t) for arm, arm_cfg in zip(ARMS, combo)
                    for t in arm_cfg]
        for (a_arm, a_t), (b_arm, b_t) in itertools.combinations(vehicles, 2):
            ra, rb = lane_map.route(a_arm, a_t), lane_map.route(b_arm, b_t)
            if ra.lanes != rb.lanes and lane_map.conflicting(ra, rb):
                return True
        return False

    def arm_cfgs(arm):
        opts = targets[arm]
        yield ()
        for t in opts:
            yield (t,)
        for pair in itertools.product(opts, repeat=2):
            yield pair

    expected = sum(1 for combo in itertools.product(*(arm_cfgs(a) for a in ARMS))
                   if conflicts(combo))
    assert len(scens) == expected == 280


def test_enumeration_unique_and_conflicting(lane_map):
    scens = enumerate_scenarios(lane_map)
    keys = {tuple((v.arm, v.slot, v.target) for v in s.vehicles) for s in scens}
    assert len(keys) == len(scens)
    for s in scens:
        assert s.source == "enumerated"
        assert has_conflicting_pair(s, lane_map)
        per_arm = Counter(v.arm for v in s.vehicles)
        assert all(c <= 2 for c in per_arm.values())


def test_enumeration_ids_stable(lane_map):
    a = enumerate_scenarios(lane_map)
    b = enumerate_scenarios(lane_map)
    assert [s.id for s in a] == [s.id for s in b]
    assert a[0].id == "enum-000"
    assert a == b


# -- spawn protocol ---------------------------------------------------------


def test_spawn_slots_spacing():
    v0 = ScenarioVehicle("a", "west", 0, "east")
    v1 = ScenarioVehicle("b", "west", 1, "east")
    v2 = ScenarioVehicle("c", "west", 2, "east")
    assert v0.spawn_distance == pytest.approx(SLOT_BASE)
    assert v1.spawn_distance == pytest.approx(SLOT_BASE + SLOT_SPACING)
    assert v2.spawn_distance - v1.spawn_distance == pytest.approx(SLOT_SPACING)
    assert INITIAL_SPEED == pytest.approx(8.0)


def test_spawn_arm_stagger():
    # approaches are staggered: minor road first, main through direction last
    by_arm = {arm: ScenarioVehicle("a", arm, 0,
                                   "east" if arm != "east" else "west")
              for arm in ARMS}
    assert by_arm["west"].spawn_distance == pytest.approx(
        SLOT_BASE + ARM_STAGGER["west"])
    assert by_arm["west"].spawn_distance < by_arm["east"].spawn_distance \
        < by_arm["north"].spawn_distance
    for arm in ARMS:
        assert by_arm[arm].spawn_distance == pytest.approx(
            SLOT_BASE + ARM_STAGGER[arm])


def test_spawn_distance_override():
    v = ScenarioVehicle("a", "west", 3, "east", distance=30.0)
    assert v.spawn_distance == pytest.approx(30.0)


def test_scenario_validation():
    three = tuple(ScenarioVehicle(f"v{i}", "west", i, "east") for i in range(3))
    with pytest.raises(ValueError):
        Scenario("x", three, "enumerated")
    Scenario("x", three, "random")  # random allows up to 4 per arm
    with pytest.raises(ValueError):
        Scenario("x", three, "carefully-curated")
    nine = tuple(ScenarioVehicle(f"v{i}", ARMS[i % 3], i // 3, "east"
                                 if ARMS[i % 3] != "east" else "west")
                 for i in range(9))
    with pytest.raises(ValueError):
        Scenario("x", nine, "random")


# -- random sampling --------------------------------------------------------


def test_random_sampling_seeded_deterministic(lane_map):
    a = sample_random_scenarios(50, 42, lane_map)
    b = sample_random_scenarios(50, 42, lane_map)
    assert a == b
    c = sample_random_scenarios(50, 43, lane_map)
    assert a != c


def test_random_sampling_limits(lane_map):
    for s in sample_random_scenarios(200, 42, lane_map):
        assert 1 <= len(s.vehicles) <= MAX_TOTAL_RANDOM
        per_arm = Counter(v.arm for v in s.vehicles)
        assert all(c <= MAX_PER_ARM_RANDOM for c in per_arm.values())
        assert s.source == "random"
        for v in s.vehicles:
            assert lane_map.route(v.arm, v.target)  # route exists


def test_random_sampling_covers_all_routes(lane_map):
    seen = {(v.arm, v.target)
            for s in sample_random_scenarios(200, 42, lane_map)
            for v in s.vehicles}
    assert seen == {r.key for r in lane_map.routes}


# -- reference scenario -----------------------------------------------------


def test_reference_scenario_shape(lane_map):
    ref = reference_scenario()
    byid = {v.vehicle_id: v for v in ref.vehicles}
    assert set(byid) == {"v1", "v2", "v3"}
    assert (byid["v1"].arm, byid["v1"].target) == ("east", "west")
    assert (byid["v2"].arm, byid["v2"].target) == ("west", "east")
    assert (byid["v3"].arm, byid["v3"].target) == ("north", "east")
    assert all(v.is_cav for v in ref.vehicles)
    assert has_conflicting_pair(ref, lane_map)


# -- mixed assignment -------------------------------------------------------


def test_assign_mixed_half_split(lane_map):
    for s in enumerate_scenarios(lane_map)[:40]:
        mixed = assign_mixed(s, 0.5, seed=0)
        n = len(mixed.vehicles)
        n_cav = sum(v.is_cav for v in mixed.vehicles)
        assert n_cav in (n // 2, (n + 1) // 2)
        # everything except the class flag is untouched
        assert [(v.vehicle_id, v.arm, v.slot, v.target) for v in mixed.vehicles] \
            == [(v.vehicle_id, v.arm, v.slot, v.target) for v in s.vehicles]


def test_assign_mixed_deterministic_per_scenario(lane_map):
    s = enumerate_scenarios(lane_map)[17]
    assert assign_mixed(s, 0.5, seed=0) == assign_mixed(s, 0.5, seed=0)
    other = enumerate_scenarios(lane_map)[18]
    # different scenarios draw independently (id-keyed stream)
    flips_a = [v.is_cav for v in assign_mixed(s, 0.5, seed=0).vehicles]
    flips_b = [v.is_cav for v in assign_mixed(other, 0.5, seed=0).vehicles]
    assert flips_a != flips_b or s.vehicles != other.vehicles


def test_assign_mixed_extremes(lane_map):
    s = enumerate_scenarios(lane_map)[100]
    assert all(v.is_cav for v in assign_mixed(s, 1.0).vehicles)
    assert not any(v.is_cav for v in assign_mixed(s, 0.0).vehicles)
    with pytest.raises(ValueError):
        assign_mixed(s, 1.5)


@settings(max_examples=30, deadline=None)
@given(ratio=st.floats(min_value=0.0, max_value=1.0),
       seed=st.integers(min_value=0, max_value=1000))
def test_assign_mixed_expected_count(ratio, seed):
    s = Scenario("x", tuple(
        ScenarioVehicle(f"v{i}", ARMS[i % 3], i // 3,
                        "east" if ARMS[i % 3] != "east" else "west")
        for i in range(6)), "random")
    mixed = assign_mixed(s, ratio, seed)
    n_cav = sum(v.is_cav for v in mixed.vehicles)
    exact = ratio * 6
    assert int(exact) <= n_cav <= int(exact) + 1
