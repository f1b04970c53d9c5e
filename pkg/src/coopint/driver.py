"""Longitudinal driver behavior: per-step acceleration (small MLP or an
intelligent-driver-model fallback) and the gap-acceptance decision with
priority overrides."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .env_model import (EnvObservation, GapObservation, VehicleState,
                        observe_gap, route_position)
from .geometry import LaneMap, Route
from .priorities import PriorityAssignmentSet

# Acceleration command clamp applied to every model output.
ACCEL_MIN = -6.0
ACCEL_MAX = 3.0

LEAKY_RELU_SLOPE = 0.01

# IDM parameters (standard literature values).
IDM_TIME_HEADWAY = 1.5
IDM_MIN_GAP = 2.0
IDM_A_MAX = 2.5
IDM_B_COMF = 3.0
IDM_EXPONENT = 4

# Analytic gap acceptance: required clearance margin and the floor speed used
# for arrival/clearing time estimates.
GAP_T_MARGIN = 2.0
GAP_V_MIN = 2.0


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class MlpParameters:
    """Dense network: 2 hidden layers of width 16 plus a linear output layer."""
    weights: tuple[np.ndarray, ...]   # each (out, in), row-major
    biases: tuple[np.ndarray, ...]
    activation: str                   # "tanh" | "leaky_relu"

    def __post_init__(self):
        if self.activation not in ("tanh", "leaky_relu"):
            raise WeightFileError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise WeightFileError("weights/biases layer counts differ")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise WeightFileError(f"layer {k}: inconsistent shapes")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise WeightFileError(f"layer {k}: dimension chain broken")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise WeightFileError(f"layer {k}: non-finite values")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]


def mlp_forward(params: MlpParameters, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_dim,):
        raise ValueError(f"expected input of length {params.input_dim}, got {x.shape}")
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = w @ x + b
        if k < n - 1:
            if params.activation == "tanh":
                x = np.tanh(x)
            else:
                x = np.where(x > 0, x, LEAKY_RELU_SLOPE * x)
    return x


def load_mlp_weights(text: str) -> MlpParameters:
    """Parse the JSON weight-file format: activation plus per-layer row-major
    weight matrices and bias vectors. Output units are m/s^2 for the
    acceleration network."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WeightFileError(f"unparseable weight file: {exc}") from exc
    if not isinstance(doc, dict) or "layers" not in doc or "activation" not in doc:
        raise WeightFileError("weight file needs 'activation' and 'layers'")
    weights, biases = [], []
    for k, layer in enumerate(doc["layers"]):
        try:
            weights.append(np.asarray(layer["weights"], dtype=float))
            biases.append(np.asarray(layer["bias"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightFileError(f"layer {k}: {exc}") from exc
    return MlpParameters(tuple(weights), tuple(biases), str(doc["activation"]))


def dump_mlp_weights(params: MlpParameters) -> str:
    return json.dumps({
        "activation": params.activation,
        "input_dim": params.input_dim,
        "output_dim": params.output_dim,
        "layers": [{"weights": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(params.weights, params.biases)],
    }, indent=1)


@dataclass(frozen=True)
class DriverModel:
    """Acceleration / gap-acceptance model pair; ``None`` selects the
    analytic fallback for that component."""
    acc: MlpParameters | None = None
    gap: MlpParameters | None = None


ANALYTIC = DriverModel()


# -- acceleration ----------------------------------------------------------


def idm_acceleration(v: float, v_max: float, lead_gap: float | None,
                     lead_speed: float, stop_gap: float | None) -> float:
    """IDM car-following toward the nearer of lead vehicle and stop target.
    ``lead_gap`` is a net (bumper) gap; ``stop_gap`` a distance to a point
    the vehicle must stop at (None = unconstrained)."""
    a = IDM_A_MAX * (1.0 - (v / v_max) ** IDM_EXPONENT)
    if lead_gap is not None:
        a = min(a, _idm_interaction(v, v_max, lead_gap, v - lead_speed))
    if stop_gap is not None:
        a = min(a, _idm_interaction(v, v_max, stop_gap, v))
    return max(ACCEL_MIN, min(ACCEL_MAX, a))


def _idm_interaction(v, v_max, gap, dv) -> float:
    if gap < 0.1:
        return ACCEL_MIN
    s_star = IDM_MIN_GAP + max(0.0, v * IDM_TIME_HEADWAY
                               + v * dv / (2.0 * math.sqrt(IDM_A_MAX * IDM_B_COMF)))
    return IDM_A_MAX * (1.0 - (v / v_max) ** IDM_EXPONENT - (s_star / gap) ** 2)


def acceleration(obs: EnvObservation, delta: int, model: DriverModel = ANALYTIC) -> float:
    """Acceleration command in m/s^2, clamped to [-6, +3].

    MLP: forward pass on the 12-vector [env features, delta]. Analytic: IDM
    toward the lead constraint; the stop-line constraint applies only while
    the gap decision is to yield (delta = 0)."""
    if model.acc is not None:
        x = np.concatenate([obs.as_vector(), [float(delta)]])
        out = float(mlp_forward(model.acc, x)[0])
        return max(ACCEL_MIN, min(ACCEL_MAX, out))
    lead_gap = None if obs.d_lead >= 100.0 else obs.d_lead
    stop_gap = None
    if delta == 0 and obs.d_stop > 0.0:
        stop_gap = obs.d_stop
    elif delta == 0:
        return ACCEL_MIN  # yielded but already at/past the line: hard stop
    return idm_acceleration(obs.v, obs.v_max, lead_gap, obs.v_lead, stop_gap)


# -- gap acceptance --------------------------------------------------------


@dataclass(frozen=True)
class GapDecision:
    pairwise: tuple[tuple[str, int], ...]   # (other vehicle id, delta_ij)
    delta: int                              # min over pairwise values and 1

    def against(self, other_id: str) -> int:
        for vid, d in self.pairwise:
            if vid == other_id:
                return d
        raise KeyError(other_id)


def analytic_gap_accept(s_i: float, v_i: float, s_j: float, v_j: float,
                        zones_ij: list[tuple[float, float, float, float]]) -> bool:
    """Accept iff, for every still-contested zone, the other vehicle reaches
    the zone entry later than we clear its exit plus a safety margin.

    ``zones_ij`` rows are (entry_i, exit_i, entry_j, exit_j) in the two
    vehicles' route coordinates.
    """
    for entry_i, exit_i, entry_j, exit_j in zones_ij:
        if s_i >= entry_i or s_j >= exit_j:
            continue  # we are committed or the other vehicle has cleared
        t_clear = (exit_i - s_i) / max(v_i, GAP_V_MIN)
        t_reach = (entry_j - s_j) / max(v_j, GAP_V_MIN)
        if t_reach <= t_clear + GAP_T_MARGIN:
            return False
    return True


def pair_gap_delta(vi: VehicleState, vj: VehicleState, route_i: Route, route_j: Route,
                   priorities: PriorityAssignmentSet, lane_map: LaneMap,
                   model: DriverModel = ANALYTIC) -> int:
    """delta_ij by the case cascade: assigned priority, assigned yield,
    static right of way, model acceptance, else 0."""
    if (vi.id, vj.id) in priorities:
        return 1
    if (vj.id, vi.id) in priorities:
        return 0
    if lane_map.has_right_of_way(route_i, route_j):
        return 1
    if model.gap is not None:
        obs = observe_gap(vi, vj, lane_map, route_i, route_j)
        return 1 if float(mlp_forward(model.gap, obs.as_vector())[0]) > 0.0 else 0
    gi, gj = lane_map.geometry(route_i), lane_map.geometry(route_j)
    zones = shared_zone_bounds(gi, gj)
    if not zones:
        return 1
    s_i = route_position(vi, gi)
    s_j = route_position(vj, gj)
    return 1 if analytic_gap_accept(s_i, vi.speed, s_j, vj.speed, zones) else 0


def shared_zone_bounds(gi, gj) -> list[tuple[float, float, float, float]]:
    """Conflict zones shared by two route geometries, in the respective route
    coordinates: (entry_i, exit_i, entry_j, exit_j)."""
    out = []
    for rz in gi.zones:
        for oz in gj.zones:
            if rz.zone == oz.zone or rz.zone == oz.zone.swapped():
                out.append((rz.entry_s, rz.exit_s, oz.entry_s, oz.exit_s))
    return out


def gap_decision(vi: VehicleState, conflicts: list[VehicleState],
                 priorities: PriorityAssignmentSet, lane_map: LaneMap,
                 model: DriverModel = ANALYTIC,
                 routes: dict[str, Route] | None = None) -> GapDecision:
    """Aggregated decision of vi whether to enter the intersection.

    ``conflicts`` are exactly the vehicles sharing a zone with vi under the
    assumed routes; ``routes`` maps vehicle ids to the assumed routes
    (falls back to declared routes)."""
    routes = routes or {}
    route_i = routes.get(vi.id) or vi.route
    if route_i is None:
        raise ValueError(f"no route resolved for {vi.id}")
    pairwise = []
    agg = 1
    for vj in conflicts:
        route_j = routes.get(vj.id) or vj.route
        if route_j is None:
            raise ValueError(f"no route resolved for {vj.id}")
        d = pair_gap_delta(vi, vj, route_i, route_j, priorities, lane_map, model)
        pairwise.append((vj.id, d))
        agg = min(agg, d)
    return GapDecision(tuple(pairwise), agg)
