import numpy as np
import pytest

from coopint.driver import ACCEL_MAX, ACCEL_MIN
from coopint.scenarios import (Scenario, ScenarioVehicle, assign_mixed,
                               reference_scenario, sample_random_scenarios)
from coopint.sim import (D_VIS, REJECT, V_CREEP, SimConfig, Simulation,
                         run_scenario)


def _single(arm="west", target="east", distance=60.0, is_cav=True):
    return Scenario("single", (
        ScenarioVehicle("v", arm, 0, target, is_cav=is_cav,
                        distance=distance),), "enumerated")


# -- config -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(planner="magic")
    with pytest.raises(ValueError):
        SimConfig(max_sim_time=0.0)


# -- basic runs -------------------------------------------------------------


@pytest.mark.parametrize("planner", ["nc", "opt", "rollout", "hdv"])
def test_single_vehicle_completes(lane_map, planner):
    res = run_scenario(_single(), SimConfig(planner=planner), lane_map)
    assert res.outcome == "Completed"
    assert res.entry_violations == []
    rows = res.trajectories["v"]
    assert rows
    t = np.array([r[0] for r in rows])
    s = np.array([r[2] for r in rows])
    v = np.array([r[5] for r in rows])
    assert np.allclose(np.diff(t), 0.05, atol=1e-9)
    assert (np.diff(s) >= -1e-12).all()
    assert (v >= 0).all()


def test_reference_scenario_all_planners(lane_map):
    for planner in ("nc", "opt", "rollout"):
        res = run_scenario(reference_scenario(), SimConfig(planner=planner),
                           lane_map)
        assert res.outcome == "Completed", planner
        assert res.entry_violations == []


def test_physics_bounds(lane_map):
    res = run_scenario(reference_scenario(), SimConfig(planner="opt"), lane_map)
    for rows in res.trajectories.values():
        a = np.array([r[6] for r in rows])
        assert (a >= ACCEL_MIN - 1e-9).all()
        assert (a <= ACCEL_MAX + 1e-9).all()


# -- determinism ------------------------------------------------------------


@pytest.mark.parametrize("planner", ["nc", "opt", "rollout"])
def test_run_byte_identical(lane_map, planner):
    scen = sample_random_scenarios(6, 77, lane_map)[5]
    cfg = SimConfig(planner=planner, seed=11, rejection_prob=0.1)
    r1 = run_scenario(scen, cfg, lane_map)
    r2 = run_scenario(scen, cfg, lane_map)
    assert r1 == r2  # dataclass equality covers every recorded field


def test_seed_changes_rejection_stream(lane_map):
    scen = reference_scenario()
    runs = {seed: run_scenario(scen, SimConfig(planner="opt", seed=seed,
                                               rejection_prob=0.5), lane_map)
            for seed in range(4)}
    aborts = {r.aborts for r in runs.values()}
    assert len(aborts) > 1  # different seeds reject different maneuvers


# -- planner integration ----------------------------------------------------


def test_nc_baseline_never_issues_maneuvers(lane_map):
    res = run_scenario(reference_scenario(), SimConfig(planner="nc"), lane_map)
    assert res.maneuvers_issued == 0
    assert res.aborts == 0


def test_coop_planners_issue_maneuvers(lane_map):
    for planner in ("opt", "rollout"):
        res = run_scenario(reference_scenario(), SimConfig(planner=planner),
                           lane_map)
        assert res.maneuvers_issued > 0, planner
        assert res.planner_cycles > 0


def test_opt_planner_cadence(lane_map):
    cfg = SimConfig(planner="opt")
    sim = Simulation(reference_scenario(), cfg, lane_map)
    res = sim.run()
    # one planning cycle per 0.2 s of simulated time (4 base steps)
    expected = res.duration / 0.2
    assert res.planner_cycles == pytest.approx(expected, abs=1.5)


def test_hdv_planner_downgrades_cavs(lane_map):
    sim = Simulation(reference_scenario(), SimConfig(planner="hdv"), lane_map)
    assert not any(v.is_cav for v in sim.vehicles)
    res = sim.run()
    assert res.maneuvers_issued == 0


# -- rejection / abort protocol ---------------------------------------------


def test_rejection_prob_one_aborts_everything(lane_map):
    res = run_scenario(reference_scenario(),
                       SimConfig(planner="opt", rejection_prob=1.0), lane_map)
    # every issued batch is rejected before installation
    assert res.maneuvers_issued == 0
    assert res.outcome == "Completed"
    assert res.entry_violations == []


def test_rejection_prob_partial_aborts(lane_map):
    res = run_scenario(reference_scenario(),
                       SimConfig(planner="opt", seed=2, rejection_prob=0.1),
                       lane_map)
    assert res.outcome == "Completed"
    assert res.aborts >= 1
    assert res.entry_violations == []


# -- occlusion --------------------------------------------------------------


def test_occlusion_creep_caps_approach_speed(lane_map):
    scen = _single("west", "north", distance=60.0, is_cav=False)
    with_occ = run_scenario(scen, SimConfig(planner="nc", occlusion=True),
                            lane_map)
    without = run_scenario(scen, SimConfig(planner="nc", occlusion=False),
                           lane_map)
    geom = lane_map.geometry(lane_map.route("west", "north"))

    def speed_at(res, d_before):
        rows = res.trajectories["v"]
        s_target = geom.stopline_s - d_before
        k = int(np.argmax(np.array([r[2] for r in rows]) >= s_target))
        return rows[k][5]

    # while the view is obstructed (further than D_VIS from the line) the
    # occluded vehicle has braked towards the creep speed
    assert speed_at(with_occ, D_VIS + 1.0) < speed_at(without, D_VIS + 1.0)
    assert speed_at(with_occ, D_VIS + 1.0) <= V_CREEP + 1.5
    # a protected vehicle on the major road never creeps
    major = _single("north", "east", distance=60.0, is_cav=False)
    res = run_scenario(major, SimConfig(planner="nc", occlusion=True), lane_map)
    v = np.array([r[5] for r in res.trajectories["v"]])
    assert v.min() > V_CREEP


# -- crossing order & zone records ------------------------------------------


def test_crossing_order_recorded(lane_map):
    res = run_scenario(reference_scenario(), SimConfig(planner="nc"), lane_map)
    assert res.crossing_order
    for key, order in res.crossing_order.items():
        assert len(order) == len(set(order))
        assert all(isinstance(lane, str) for lane in key)


def test_mixed_scenario_runs(lane_map):
    scen = assign_mixed(sample_random_scenarios(4, 55, lane_map)[3], 0.5, 0)
    assert any(v.is_cav for v in scen.vehicles) \
        or sum(1 for _ in scen.vehicles) == 1
    for planner in ("nc", "opt", "rollout"):
        res = run_scenario(scen, SimConfig(planner=planner), lane_map)
        assert res.outcome in ("Completed", "Timeout")


def test_timeout_outcome(lane_map):
    res = run_scenario(reference_scenario(),
                       SimConfig(planner="nc", max_sim_time=1.0), lane_map)
    assert res.outcome == "Timeout"
    assert res.duration <= 1.0 + 1e-6
