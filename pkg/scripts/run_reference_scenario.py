#!/usr/bin/env python3
"""Run the three-CAV showcase scenario under every planner and print the
clipped maneuver durations relative to the non-cooperative baseline."""

import argparse
import time

from coopint.geometry import build_lehr_junction
from coopint.metrics import clip_result, is_deviating
from coopint.scenarios import reference_scenario
from coopint.sim import SimConfig, run_scenario


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    lane_map = build_lehr_junction()
    scenario = reference_scenario()
    results = {}
    for planner in ("nc", "opt", "rollout"):
        t0 = time.perf_counter()
        results[planner] = run_scenario(
            scenario, SimConfig(planner=planner, seed=args.seed), lane_map)
        print(f"{planner}: outcome={results[planner].outcome} "
              f"wall={time.perf_counter() - t0:.1f}s")

    base = clip_result(results["nc"], lane_map)
    for planner in ("opt", "rollout"):
        r = results[planner]
        clipped = clip_result(r, lane_map)
        print(f"\n{planner}: deviating={is_deviating(r, results['nc'])} "
              f"maneuvers_issued={r.maneuvers_issued}")
        for sv in scenario.vehicles:
            c, cb = clipped[sv.vehicle_id], base[sv.vehicle_id]
            rel = c.duration - cb.duration
            print(f"  {sv.vehicle_id} ({sv.arm}->{sv.target}): "
                  f"duration {c.duration:.2f}s (baseline {cb.duration:.2f}s, "
                  f"{rel:+.2f}s)")


if __name__ == "__main__":
    main()
