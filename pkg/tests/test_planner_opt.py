import itertools
import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import em_from_scenario, em_of, make_vehicle
from coopint.planner_opt import (CANDIDATE_LIMIT, ENTRY_MARGIN, Maneuver,
                                 ManeuverWaypoint, PlannerConfig, PlannerState,
                                 derive_waypoints, dump_maneuvers,
                                 enumerate_extensions, load_maneuvers,
                                 plan_cycle)
from coopint.prediction import BatchPrediction, CompiledScene, predict
from coopint.priorities import EMPTY_PRIORITIES, PriorityAssignmentSet
from coopint.scenarios import enumerate_scenarios, sample_random_scenarios


# -- candidate enumeration --------------------------------------------------


def test_extensions_include_empty_prev_and_singles():
    pairs = [("a", "b"), ("c", "d")]
    prev = PriorityAssignmentSet((("e", "f"),))
    cands = enumerate_extensions(prev, pairs)
    keys = {frozenset(c.assignments) for c in cands}
    assert frozenset() in keys
    assert frozenset(prev.assignments) in keys
    for a, b in pairs:
        assert frozenset(prev.assignments + ((a, b),)) in keys
        assert frozenset(prev.assignments + ((b, a),)) in keys


def test_extensions_exhaustive_below_limit():
    pairs = [("a", "b"), ("c", "d"), ("e", "f")]
    cands = enumerate_extensions(EMPTY_PRIORITIES, pairs)
    # every pair independently unassigned / one way / other way = 3^3
    assert len(cands) == 27
    sizes = [len(c) for c in cands]
    assert sizes == sorted(sizes)  # ascending by size


def test_extensions_budget_respected():
    pairs = [(f"v{i}", f"w{i}") for i in range(10)]
    cands = enumerate_extensions(EMPTY_PRIORITIES, pairs)
    assert len(cands) <= CANDIDATE_LIMIT
    assert len({frozenset(c.assignments) for c in cands}) == len(cands)


def test_extensions_skip_assigned_pairs():
    prev = PriorityAssignmentSet((("a", "b"),))
    cands = enumerate_extensions(prev, [("a", "b"), ("c", "d")])
    for c in cands:
        # never re-orient an already assigned pair
        assert ("b", "a") not in c.assignments


# -- exhaustive optimizer oracle --------------------------------------------


def _oracle_best(scene, psets, cfg):
    """Reference selection: evaluate every assignment set independently and
    pick the most efficient valid one (ties to fewer assignments, then
    lexicographic order, strict 1e-9 improvements)."""
    best = None
    for p in sorted(psets, key=lambda c: (len(c), c.sorted_key())):
        pred = BatchPrediction(scene, [p], cfg.prediction)
        if not pred.valid(0):
            continue
        e = float(pred.efficiency[0])
        if best is None or e > best[1] + 1e-9:
            best = (p, e)
    return best


def test_planner_matches_exhaustive_search(lane_map):
    """On small instances (<= 3 CAVs) the cyclic search from the empty set is
    an exhaustive search over all orientation assignments and must select the
    same set as independent per-candidate evaluation."""
    scens = [s for s in enumerate_scenarios(lane_map)
             + sample_random_scenarios(120, 9, lane_map)
             if len(s.vehicles) <= 3]
    assert len(scens) >= 50
    cfg = PlannerConfig()
    checked = 0
    for scen in scens:
        if checked >= 50:
            break
        em = em_from_scenario(scen, lane_map)
        scene = CompiledScene(em, lane_map)
        pairs = scene.cav_pairs
        psets = []
        for orient in itertools.product((-1, 0, 1), repeat=len(pairs)):
            ps = tuple((a, b) if o == 1 else (b, a)
                       for (a, b), o in zip(pairs, orient) if o != 0)
            psets.append(PriorityAssignmentSet(ps))
        want = _oracle_best(scene, psets, cfg)
        state, _ = plan_cycle(em, PlannerState(), lane_map, cfg)
        if want is None:
            assert state.p_current == EMPTY_PRIORITIES
        else:
            assert frozenset(state.p_current.assignments) == \
                frozenset(want[0].assignments), scen.id
            assert state.last_efficiency == pytest.approx(want[1], abs=1e-9)
        checked += 1
    assert checked == 50


def test_prediction_budget(lane_map):
    scens = sorted(sample_random_scenarios(40, 21, lane_map),
                   key=lambda s: -len(s.vehicles))
    em = em_from_scenario(scens[0], lane_map)
    state, _ = plan_cycle(em, PlannerState(), lane_map)
    assert state.last_prediction_count <= CANDIDATE_LIMIT


def test_cycle_latency_budget(lane_map):
    scens = sorted(sample_random_scenarios(40, 21, lane_map),
                   key=lambda s: -len(s.vehicles))
    em = em_from_scenario(scens[0], lane_map)
    plan_cycle(em, PlannerState(), lane_map)  # warm up compiled kernel
    best = min(_timed(em, lane_map) for _ in range(3))
    assert best < 0.2, f"planning cycle took {best * 1e3:.0f} ms"


def _timed(em, lane_map):
    t0 = time.perf_counter()
    plan_cycle(em, PlannerState(), lane_map)
    return time.perf_counter() - t0


# -- cycle semantics --------------------------------------------------------


def test_cycle_carries_over_assignments(lane_map):
    minor = make_vehicle(lane_map, "m", "west", "north", 25.0, speed=8.0)
    major = make_vehicle(lane_map, "M", "north", "east", 60.0, speed=8.0)
    em = em_of(minor, major)
    state, maneuvers = plan_cycle(em, PlannerState(), lane_map)
    if len(state.p_current):
        # a second cycle from the same snapshot keeps or extends the set
        state2, _ = plan_cycle(em, state, lane_map)
        assert set(state.p_current.assignments) <= \
            set(state2.p_current.assignments) or state2.p_current == EMPTY_PRIORITIES
    assert state.cycle_index == 1


def test_cycle_prunes_departed_vehicles(lane_map):
    minor = make_vehicle(lane_map, "m", "west", "north", 25.0, speed=8.0)
    major = make_vehicle(lane_map, "M", "north", "east", 60.0, speed=8.0)
    em = em_of(minor)
    stale = PlannerState(p_current=PriorityAssignmentSet((("m", "M"),)))
    state, maneuvers = plan_cycle(em, stale, lane_map)
    for a, b in state.p_current.assignments:
        assert {a, b} <= {"m"}
    assert state.p_current == EMPTY_PRIORITIES


# -- waypoint derivation ----------------------------------------------------


def _two_vehicle_trace(lane_map):
    minor = make_vehicle(lane_map, "m", "west", "north", 25.0, speed=8.0)
    major = make_vehicle(lane_map, "M", "north", "east", 60.0, speed=8.0)
    em = em_of(minor, major)
    pri = PriorityAssignmentSet((("m", "M"),))
    return predict(em, pri, lane_map=lane_map), pri


def test_waypoints_margin_and_pairing(lane_map):
    trace, pri = _two_vehicle_trace(lane_map)
    maneuvers = derive_waypoints(trace, pri)
    assert set(maneuvers) == {"m", "M"}
    exit_wp = maneuvers["m"].waypoints[0]
    entry_wp = maneuvers["M"].waypoints[0]
    assert exit_wp.succ == "M" and exit_wp.pred is None
    assert entry_wp.pred == "m" and entry_wp.succ is None
    # yielding vehicle admitted only margin seconds after the predicted leave
    assert entry_wp.t_min == pytest.approx(exit_wp.t_max + ENTRY_MARGIN)
    # the prioritized vehicle's exit bound equals its predicted leave time
    im = trace.index("m")
    occ = next(o for o in trace.occupancy["m"]
               if abs(o.exit_s - exit_wp.route_s) < 1e-9)
    assert exit_wp.t_max == pytest.approx(occ.t_leave)


def test_waypoints_absolute_times(lane_map):
    trace, pri = _two_vehicle_trace(lane_map)
    at0 = derive_waypoints(trace, pri, issued_at=0.0)
    at9 = derive_waypoints(trace, pri, issued_at=9.0)
    for vid in at0:
        for w0, w9 in zip(at0[vid].waypoints, at9[vid].waypoints):
            assert w9.t_min == pytest.approx(w0.t_min + 9.0)
            assert w9.t_max == pytest.approx(w0.t_max + 9.0)


def test_waypoints_monotone_after_merge(lane_map):
    scens = [s for s in sample_random_scenarios(30, 13, lane_map)
             if len(s.vehicles) >= 4]
    em = em_from_scenario(scens[0], lane_map)
    state, maneuvers = plan_cycle(em, PlannerState(), lane_map)
    for m in maneuvers.values():
        t_prev, s_prev = -np.inf, -np.inf
        for wp in m.waypoints:
            assert wp.t_min >= t_prev - 1e-9
            assert wp.route_s >= s_prev - 1e-9
            assert wp.t_min <= wp.t_max
            t_prev, s_prev = wp.t_min, wp.route_s


def test_waypoint_validation():
    with pytest.raises(ValueError):
        ManeuverWaypoint(0, 0, t_min=2.0, t_max=1.0)
    good = ManeuverWaypoint(0, 0, t_min=1.0, t_max=2.0, route_s=5.0)
    bad_order = ManeuverWaypoint(0, 0, t_min=0.0, t_max=3.0, route_s=1.0)
    with pytest.raises(ValueError):
        Maneuver("v", (good, bad_order), 0.0)


def test_derive_waypoints_unshared_pair_rejected(lane_map):
    trace, _ = _two_vehicle_trace(lane_map)
    with pytest.raises(ValueError):
        derive_waypoints(trace, PriorityAssignmentSet((("M", "m"), ("m", "M"))))


# -- serialization ----------------------------------------------------------


def test_maneuver_roundtrip(lane_map):
    trace, pri = _two_vehicle_trace(lane_map)
    maneuvers = derive_waypoints(trace, pri, issued_at=4.2)
    loaded = load_maneuvers(dump_maneuvers(maneuvers))
    assert loaded == maneuvers


def test_maneuver_json_shape(lane_map):
    trace, pri = _two_vehicle_trace(lane_map)
    doc = json.loads(dump_maneuvers(derive_waypoints(trace, pri)))
    assert set(doc) == {"waypoints"}
    for rec in doc["waypoints"]:
        assert {"vehicle_id", "x", "y", "t_min", "t_max", "pred_id",
                "succ_id", "route_s", "issued_at"} <= set(rec)
