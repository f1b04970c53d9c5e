import numpy as np
import pytest

from coopint.env_model import EnvironmentModel, VehicleState, match_vehicle
from coopint.geometry import build_lehr_junction


@pytest.fixture(scope="session")
def lane_map():
    return build_lehr_junction()


def make_vehicle(lane_map, vid, source, target, dist_before_stopline,
                 speed=8.0, is_cav=True):
    """Vehicle placed on its route a given distance before the stop line."""
    route = lane_map.route(source, target)
    geom = lane_map.geometry(route)
    s = geom.stopline_s - dist_before_stopline
    p, h = geom.pose_at(s)
    v = VehicleState(vid, float(p[0]), float(p[1]), h, speed,
                     route=route if is_cav else None, controllable=is_cav)
    return match_vehicle(v, lane_map)


def em_of(*vehicles, timestamp=0.0):
    return EnvironmentModel(tuple(vehicles), timestamp)


def em_from_scenario(scenario, lane_map, timestamp=0.0):
    states = []
    for sv in scenario.vehicles:
        states.append(make_vehicle(lane_map, sv.vehicle_id, sv.arm, sv.target,
                                   sv.spawn_distance, is_cav=sv.is_cav))
    return EnvironmentModel(tuple(states), timestamp)
