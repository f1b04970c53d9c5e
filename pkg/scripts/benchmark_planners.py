#!/usr/bin/env python3
"""Measure prediction throughput and planner cycle latency on an 8-vehicle
scene (budget: 100 predictions within one 200 ms planning cycle)."""

import time

import numpy as np

from coopint.env_model import EnvironmentModel, VehicleState, match_vehicle
from coopint.geometry import build_lehr_junction
from coopint.planner_opt import PlannerState, plan_cycle
from coopint.planner_rollout import heuristic_policy, rollout_plan
from coopint.prediction import BatchPrediction, CompiledScene
from coopint.priorities import EMPTY_PRIORITIES
from coopint.scenarios import sample_random_scenarios


def _em(lane_map, scenario):
    states = []
    for sv in scenario.vehicles:
        route = lane_map.route(sv.arm, sv.target)
        geom = lane_map.geometry(route)
        s = geom.stopline_s - sv.spawn_distance
        p, h = geom.pose_at(s)
        states.append(match_vehicle(
            VehicleState(sv.vehicle_id, float(p[0]), float(p[1]), h, 8.0,
                         route=route, controllable=True), lane_map))
    return EnvironmentModel(tuple(states), 0.0)


def main():
    lane_map = build_lehr_junction()
    scenario = max(sample_random_scenarios(50, 7, lane_map),
                   key=lambda s: len(s.vehicles))
    em = _em(lane_map, scenario)
    scene = CompiledScene(em, lane_map)
    print(f"scene: {len(em.vehicles)} vehicles, "
          f"{len(scene.cav_pairs)} conflicting pairs")

    BatchPrediction(scene, [EMPTY_PRIORITIES])  # warm up the compiled kernel
    t0 = time.perf_counter()
    BatchPrediction(scene, [EMPTY_PRIORITIES] * 100)
    dt = time.perf_counter() - t0
    print(f"100 joint predictions (15 s / 0.1 s): {dt * 1e3:.1f} ms "
          f"({dt * 10:.2f} ms each)")

    state = PlannerState()
    times = []
    for _ in range(10):
        t0 = time.perf_counter()
        state, _m = plan_cycle(em, state, lane_map)
        times.append(time.perf_counter() - t0)
    print(f"plan_cycle: first {times[0] * 1e3:.0f} ms, "
          f"median {np.median(times) * 1e3:.0f} ms, "
          f"predictions/cycle {state.last_prediction_count}")

    t0 = time.perf_counter()
    result = rollout_plan(em, heuristic_policy, lane_map)
    print(f"rollout_plan: {(time.perf_counter() - t0) * 1e3:.0f} ms, "
          f"{len(result.maneuvers)} maneuvers, timed_out={result.timed_out}")


if __name__ == "__main__":
    main()
