"""Star-network model: states, bandwidth-sharing policies, faces and ergodicity.

All functions here are pure. Route-indexed arrays follow ``spec.route_keys``
and channel-indexed arrays follow ``spec.channel_ids``.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Union

import numpy as np

from src.schemas import NetworkSpec, Policy, RouteKey, format_route_key
from src.validators import NetworkValidator, SchemaValidator, ValidationException

RouteLike = Union[str, RouteKey]


@dataclass(frozen=True)
class FluidState:
    """Nonnegative per-route occupancy x_ij"""
    occupancy: np.ndarray

    def __post_init__(self):
        values = np.array(self.occupancy, dtype=float)
        if values.ndim != 1:
            raise ValidationException("state: expected a one-dimensional occupancy vector")
        if not np.all(np.isfinite(values)):
            raise ValidationException("state: occupancies must be finite")
        if np.any(values < 0):
            raise ValidationException("state: occupancies must be >= 0")
        values.setflags(write=False)
        object.__setattr__(self, "occupancy", values)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "FluidState":
        return cls(np.zeros(len(spec.routes)))

    @classmethod
    def from_mapping(cls, spec: NetworkSpec, values: Mapping[RouteLike, float]) -> "FluidState":
        """Build from {'i-j': x_ij}; unlisted routes are 0"""
        occupancy = np.zeros(len(spec.routes))
        for route, value in values.items():
            occupancy[spec.route_position(route)] = value
        return cls(occupancy)

    def check(self, spec: NetworkSpec) -> "FluidState":
        if self.occupancy.shape != (len(spec.routes),):
            raise ValidationException(
                f"state: expected {len(spec.routes)} route occupancies, got {self.occupancy.shape[0]}"
            )
        return self

    def channel_occupancy(self, spec: NetworkSpec) -> np.ndarray:
        """x_i = sum_j x_ij"""
        return spec.incidence @ self.occupancy

    def scaled(self, factor: float) -> "FluidState":
        return type(self)(self.occupancy * factor)

    def as_mapping(self, spec: NetworkSpec) -> Dict[str, float]:
        return {format_route_key(k): float(v) for k, v in zip(spec.route_keys, self.occupancy)}


@dataclass(frozen=True)
class DiscreteState(FluidState):
    """Integer occupancies Q_ij used by the simulator"""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.occupancy != np.round(self.occupancy)):
            raise ValidationException("state: simulator occupancies must be integers")

    def counts(self) -> List[int]:
        return [int(v) for v in self.occupancy]


def as_fluid_state(spec: NetworkSpec, x) -> FluidState:
    """Accept a FluidState, a route mapping or an array aligned with the routes"""
    if isinstance(x, FluidState):
        return x.check(spec)
    if isinstance(x, Mapping):
        return FluidState.from_mapping(spec, x)
    return FluidState(np.asarray(x, dtype=float)).check(spec)


@dataclass(frozen=True)
class FacePartition:
    """The partition (Λ, Λ₁, Λ₂) of the routes at a state.

    Λ holds the routes with positive occupancy, Λ₁ the empty routes sharing a
    channel with Λ, Λ₂ the remaining empty routes.
    """
    saturated: np.ndarray
    jammed: np.ndarray
    ergodic: np.ndarray
    route_keys: tuple = field(default=())

    @property
    def lambda_set(self) -> FrozenSet[RouteKey]:
        return frozenset(k for k, m in zip(self.route_keys, self.saturated) if m)

    @property
    def lambda1_set(self) -> FrozenSet[RouteKey]:
        return frozenset(k for k, m in zip(self.route_keys, self.jammed) if m)

    @property
    def lambda2_set(self) -> FrozenSet[RouteKey]:
        return frozenset(k for k, m in zip(self.route_keys, self.ergodic) if m)

    @property
    def costed(self) -> np.ndarray:
        """Λ ∪ Λ₁, the routes whose costs enter the local rate"""
        return self.saturated | self.jammed

    def describe(self) -> Dict[str, List[str]]:
        return {
            "lambda": sorted(format_route_key(k) for k in self.lambda_set),
            "lambda1": sorted(format_route_key(k) for k in self.lambda1_set),
            "lambda2": sorted(format_route_key(k) for k in self.lambda2_set),
        }


def face_masks(spec: NetworkSpec, occupancy: np.ndarray, zero_tol: float = 0.0):
    """Boolean masks (Λ, Λ₁, Λ₂) for a raw occupancy vector"""
    saturated = occupancy > zero_tol
    touched = (spec.incidence[:, saturated].sum(axis=1) > 0) if saturated.any() else np.zeros(spec.n_channels, bool)
    touches = touched[spec.endpoints].any(axis=1)
    jammed = ~saturated & touches
    ergodic = ~saturated & ~touches
    return saturated, jammed, ergodic


def face_partition(spec: NetworkSpec, x, zero_tol: float = 0.0) -> FacePartition:
    """Classify the routes at x; entries with x_ij <= zero_tol count as zero"""
    NetworkValidator.validate_nonnegative(zero_tol, "zero_tol")
    state = as_fluid_state(spec, x)
    saturated, jammed, ergodic = face_masks(spec, state.occupancy, zero_tol)
    return FacePartition(saturated, jammed, ergodic, spec.route_keys)


def min_policy_allocation(spec: NetworkSpec, occupancy: np.ndarray) -> np.ndarray:
    """Bandwidth ν_ij(x) = x_ij (C_i/x_i ∧ C_j/x_j), with 0/0 = 0.

    Works on a single state (R,) or a stack of states (..., R).
    """
    x = np.asarray(occupancy, dtype=float)
    totals = x @ spec.incidence.T
    ends = spec.endpoints
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.minimum(
            spec.capacities[ends[:, 0]] * (x / totals[..., ends[:, 0]]),
            spec.capacities[ends[:, 1]] * (x / totals[..., ends[:, 1]]),
        )
    return np.where(x > 0, nu, 0.0)


def min_policy_rates(spec: NetworkSpec, occupancy: np.ndarray) -> np.ndarray:
    """Service rates μ_ij(x) = μ_ij ν_ij(x) for every route"""
    return spec.service_rates * min_policy_allocation(spec, occupancy)


def service_rate(
    spec: NetworkSpec,
    policy: Policy,
    x,
    route: RouteLike,
    anchor: Optional[int] = None,
) -> float:
    """Departure rate of one route at state x.

    MinPolicy returns μ_ij x_ij min(C_i/x_i, C_j/x_j). ProcessorSharing
    returns μ_ij C_a x_ij / x_a for the anchor channel a, which must be an
    end of the route. Both are 0 when x_ij = 0.
    """
    state = as_fluid_state(spec, x)
    position = spec.route_position(route)
    x_route = state.occupancy[position]
    if x_route <= 0:
        return 0.0
    mu = spec.service_rates[position]
    if Policy(policy) == Policy.MIN:
        return float(mu * min_policy_allocation(spec, state.occupancy)[position])
    if anchor is None:
        raise ValidationException("anchor: processor sharing needs an anchor channel")
    key = spec.route_keys[position]
    if anchor not in key:
        raise ValidationException(
            f"anchor: channel {anchor} is not an end of route {format_route_key(key)}"
        )
    a = spec.channel_position(anchor)
    x_anchor = state.channel_occupancy(spec)[a]
    return float(mu * spec.capacities[a] * x_route / x_anchor)


@dataclass(frozen=True)
class ChannelLoad:
    channel: int
    load: float
    capacity: float

    @property
    def utilisation(self) -> float:
        """PS load ρ_i = Σ_j λ_ij / (μ_ij C_i)"""
        return self.load / self.capacity

    @property
    def stable(self) -> bool:
        return self.load < self.capacity


@dataclass(frozen=True)
class ErgodicityReport:
    ergodic: bool
    channels: List[ChannelLoad]

    @property
    def overloaded(self) -> List[int]:
        return [c.channel for c in self.channels if not c.stable]

    def describe(self) -> str:
        if self.ergodic:
            return "ergodic: every channel load is below its capacity"
        parts = [
            f"channel {c.channel} load {c.load:.6g} >= capacity {c.capacity:.6g}"
            for c in self.channels
            if not c.stable
        ]
        return "not ergodic: " + "; ".join(parts)

    def as_dict(self) -> Dict:
        return {
            "ergodic": self.ergodic,
            "channels": [
                {"channel": c.channel, "load": c.load, "capacity": c.capacity, "stable": c.stable}
                for c in self.channels
            ],
        }


def channel_loads(spec: NetworkSpec, routes: Optional[np.ndarray] = None) -> np.ndarray:
    """Σ_j λ_ij/μ_ij per channel, optionally restricted to a route mask"""
    ratios = spec.arrival_rates / spec.service_rates
    if routes is not None:
        ratios = np.where(routes, ratios, 0.0)
    return spec.incidence @ ratios


def is_ergodic(spec: NetworkSpec) -> ErgodicityReport:
    """Σ_j λ_ij/μ_ij < C_i for every channel i (strict)"""
    loads = channel_loads(spec)
    channels = [
        ChannelLoad(cid, float(load), float(cap))
        for cid, load, cap in zip(spec.channel_ids, loads, spec.capacities)
    ]
    return ErgodicityReport(all(c.stable for c in channels), channels)


def isolate_channel(spec: NetworkSpec, channel: int) -> NetworkSpec:
    """Sub-network of the routes through one channel (other channels kept)"""
    spec.channel_position(channel)
    routes = [r for r in spec.routes if channel in r.key]
    if not routes:
        raise ValidationException(f"channel: {channel} carries no route")
    return NetworkSpec(channels=list(spec.channels), routes=routes)


def load_network(path: Union[str, Path]) -> NetworkSpec:
    """Read a NetworkSpec JSON document"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationException(f"network: cannot read {path}: {e}")
    return SchemaValidator.validate_against_schema(document, NetworkSpec)


def fig4_network(lambda13: float = 0.3) -> NetworkSpec:
    """Three-channel example: C = (3, 2, 1), λ12 = μ12 = 1, λ23 = 1, μ23 = 2, λ13 = x, μ13 = 1"""
    NetworkValidator.validate_positive(lambda13, "lambda13")
    return NetworkSpec.model_validate(
        {
            "channels": [
                {"id": 1, "capacity": 3.0},
                {"id": 2, "capacity": 2.0},
                {"id": 3, "capacity": 1.0},
            ],
            "routes": [
                {"i": 1, "j": 2, "lambda": 1.0, "mu": 1.0},
                {"i": 1, "j": 3, "lambda": lambda13, "mu": 1.0},
                {"i": 2, "j": 3, "lambda": 1.0, "mu": 2.0},
            ],
        }
    )


def route_keys_to_mask(spec: NetworkSpec, routes) -> np.ndarray:
    mask = np.zeros(len(spec.routes), dtype=bool)
    for route in routes:
        mask[spec.route_position(route)] = True
    return mask
