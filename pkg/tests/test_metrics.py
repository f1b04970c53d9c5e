import math

import numpy as np
import pytest

from coopint.metrics import (ClippedTrajectory, RewardWeights, V_STOP,
                             clip_result, clip_to_segment, compute_metrics,
                             is_deviating, reward_score, road_type)
from coopint.scenarios import reference_scenario, sample_random_scenarios
from coopint.sim import SimConfig, run_scenario


def rows_linear(t0, t1, s0, s1, v, dt=0.05):
    """Synthetic constant-speed trajectory rows (t, lane, s, x, y, v, a)."""
    out = []
    t = t0
    while t <= t1 + 1e-9:
        frac = (t - t0) / (t1 - t0) if t1 > t0 else 0.0
        out.append((t, "l", s0 + frac * (s1 - s0), 0.0, 0.0, v, 0.0))
        t += dt
    return out


# -- clipping ---------------------------------------------------------------


def test_clip_constant_speed_duration_oracle():
    # 10 m/s through the [50, 150] segment: enters at t = 5, leaves at t = 15
    rows = rows_linear(0.0, 20.0, 0.0, 200.0, 10.0)
    c = clip_to_segment(rows, 50.0, 150.0, "v")
    assert c is not None
    assert c.t_start == pytest.approx(5.0, abs=1e-6)
    assert c.t_end == pytest.approx(15.0, abs=1e-6)
    assert c.duration == pytest.approx(10.0, abs=1e-6)
    assert c.avg_speed == pytest.approx(10.0, abs=1e-6)
    assert not c.stopped


def test_clip_interpolates_between_samples():
    # coarse sampling: markers fall between samples, interpolation recovers them
    rows = rows_linear(0.0, 20.0, 0.0, 200.0, 10.0, dt=3.0)
    c = clip_to_segment(rows, 55.0, 145.0, "v")
    assert c.t_start == pytest.approx(5.5, abs=1e-6)
    assert c.t_end == pytest.approx(14.5, abs=1e-6)


def test_clip_excludes_unfinished():
    rows = rows_linear(0.0, 5.0, 0.0, 50.0, 10.0)
    assert clip_to_segment(rows, 10.0, 150.0, "v") is None
    assert clip_to_segment([], 10.0, 150.0, "v") is None


def test_clip_spawn_inside_segment():
    # first sample already past the start marker: segment starts there
    rows = rows_linear(2.0, 12.0, 80.0, 180.0, 10.0)
    c = clip_to_segment(rows, 50.0, 150.0, "v")
    assert c.t_start == pytest.approx(2.0)
    assert c.t_end == pytest.approx(9.0, abs=1e-6)
    # average speed uses the actually driven length (150 - 80 over 7 s)
    assert c.avg_speed == pytest.approx(70.0 / 7.0, abs=1e-6)


def test_clip_stop_detected_only_inside_segment():
    slow = [(0.0, "l", 0.0, 0, 0, 0.05, 0.0)] \
        + rows_linear(1.0, 21.0, 0.0, 200.0, 10.0)
    c = clip_to_segment(slow, 50.0, 150.0, "v")
    assert not c.stopped  # the stop happened before the segment
    dip = rows_linear(0.0, 9.0, 0.0, 90.0, 10.0) \
        + [(9.5, "l", 90.5, 0, 0, 0.05, 0.0)] \
        + rows_linear(10.0, 20.0, 91.0, 191.0, 10.0)
    assert clip_to_segment(dip, 50.0, 150.0, "v").stopped


def test_road_type():
    assert road_type("west") == "minor"
    assert road_type("north") == road_type("east") == "major"


# -- deviating / aggregation ------------------------------------------------


def _run_pair(lane_map, planner):
    scen = reference_scenario()
    res = run_scenario(scen, SimConfig(planner=planner), lane_map)
    base = run_scenario(scen, SimConfig(planner="nc"), lane_map)
    return res, base


def test_is_deviating_identity(lane_map):
    res, base = _run_pair(lane_map, "nc")
    assert not is_deviating(res, base)  # same planner, same order
    assert not is_deviating(base, base)


def test_reference_scenario_deviates_under_cooperation(lane_map):
    res, base = _run_pair(lane_map, "opt")
    assert is_deviating(res, base)


def test_compute_metrics_reference(lane_map):
    res, base = _run_pair(lane_map, "opt")
    rep = compute_metrics([res], [base], lane_map)
    assert rep.n_scenarios == 1
    assert rep.deviating_share == 1.0
    assert rep.collisions == 0 and rep.timeouts == 0
    # v2 enters from the minor west arm and gains several seconds; v1 and v3
    # come from the major arms (east/north)
    assert len(rep.relative_duration["minor"]) == 1
    assert rep.relative_duration["minor"][0] < -3.0
    assert len(rep.relative_duration["major"]) == 2
    assert min(rep.relative_duration["major"]) < 0


def test_compute_metrics_id_mismatch(lane_map):
    res, base = _run_pair(lane_map, "nc")
    with pytest.raises(ValueError):
        compute_metrics([res], [], lane_map)


def test_compute_metrics_non_deviating_excluded(lane_map):
    res, base = _run_pair(lane_map, "nc")
    rep = compute_metrics([res], [base], lane_map)
    assert rep.deviating_share == 0.0
    assert rep.relative_duration["major"] == []
    assert math.isnan(rep.median_relative_duration("major"))


# -- reward score -----------------------------------------------------------


def test_reward_weights_validation():
    RewardWeights()
    with pytest.raises(ValueError):
        RewardWeights(velocity=-0.1)


def test_reward_free_flow_positive(lane_map):
    scen = reference_scenario()
    res = run_scenario(scen, SimConfig(planner="opt"), lane_map)
    rewards, total = reward_score(res, lane_map)
    assert len(rewards) > 0
    assert total == pytest.approx(float(rewards.sum()))
    # no collisions: every step reward is bounded by the velocity weight
    assert (rewards <= RewardWeights().velocity + 1e-9).all()


def test_reward_penalizes_stopping(lane_map):
    scen = reference_scenario()
    nc = run_scenario(scen, SimConfig(planner="nc"), lane_map)
    opt = run_scenario(scen, SimConfig(planner="opt"), lane_map)
    _, r_nc = reward_score(nc, lane_map)
    _, r_opt = reward_score(opt, lane_map)
    # cooperation avoids the full stop of the left turner in this scenario
    assert r_opt > r_nc


def test_reward_step_granularity(lane_map):
    scen = reference_scenario()
    res = run_scenario(scen, SimConfig(planner="nc"), lane_map)
    r_02, _ = reward_score(res, lane_map, step=0.2)
    r_04, _ = reward_score(res, lane_map, step=0.4)
    assert len(r_02) == pytest.approx(2 * len(r_04), abs=1)
