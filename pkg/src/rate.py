"""Rate-function calculus of the star network under the min policy.

Covers the M/M/1 drift cost l(D || λ, μ), the Poisson relative entropy, the
local rate L(x, D) (ergodic, extended and general forms), the entropy of
tilted generators and the stay-near-zero cost of a possibly transient network.

Public operations return ``INFINITY`` rather than ``float('inf')`` for
unattainable behaviour; vectorised helpers prefixed with an underscore work
on numpy arrays and use ``np.inf`` internally.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
from scipy.special import kl_div

from src.model import (
    FacePartition,
    as_fluid_state,
    face_partition,
    is_ergodic,
    min_policy_rates,
    route_keys_to_mask,
)
from src.schemas import NetworkSpec, format_route_key
from src.validators import ModeMismatchError, NetworkValidator, ValidationException


class InfiniteCost:
    """Sentinel for a cost of +infinity.

    Absorbs addition and positive scaling, compares above every float, and
    converts to ``math.inf`` only on an explicit ``float()``.
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITY"

    def __float__(self) -> float:
        return math.inf

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __mul__(self, other):
        if other is self or float(other) > 0:
            return self
        raise ValidationException("cost: infinite cost scaled by a non-positive factor")

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return other is self or (isinstance(other, float) and other == math.inf)

    def __hash__(self) -> int:
        return hash(math.inf)

    def __lt__(self, other) -> bool:
        return False

    def __le__(self, other) -> bool:
        return self == other

    def __gt__(self, other) -> bool:
        return not self == other

    def __ge__(self, other) -> bool:
        return True


INFINITY = InfiniteCost()
Cost = Union[float, InfiniteCost]


def is_infinite(value) -> bool:
    return value is INFINITY


def as_cost(value: float) -> Cost:
    """Wrap a float produced by a vectorised helper"""
    return INFINITY if math.isinf(value) else float(value)


def cost_to_json(value: Cost):
    return "infinity" if value is INFINITY else float(value)


def _sum_costs(terms: Iterable[Cost]) -> Cost:
    total = 0.0
    for term in terms:
        if term is INFINITY:
            return INFINITY
        total += term
    return total


# M/M/1 drift cost and Poisson entropy


def _mm1_cost_array(D, lam, mu) -> np.ndarray:
    """l(D || λ, μ) elementwise; np.inf where the drift is unattainable"""
    D, lam, mu = np.broadcast_arrays(
        np.asarray(D, dtype=float), np.asarray(lam, dtype=float), np.asarray(mu, dtype=float)
    )
    root = np.hypot(D, 2.0 * np.sqrt(lam * mu))
    out = np.square(np.sqrt(lam) - np.sqrt(mu))
    with np.errstate(divide="ignore", invalid="ignore"):
        up = D > 0
        # log((D + S) / 2λ); for D < 0 use the equal form log(2μ / (S - D))
        log_up = np.log(D + root) - np.log(2.0 * lam)
        log_down = np.log(2.0 * mu) - np.log(root - D)
        tail = lam + mu - root
        out = np.where(up, D * log_up + tail, out)
        out = np.where(D < 0, D * log_down + tail, out)
    out = np.where(up & (lam <= 0), np.inf, out)
    out = np.where((D < 0) & (mu <= 0), np.inf, out)
    return np.maximum(out, 0.0)


def mm1_cost(D: float, lam: float, mu: float) -> Cost:
    """Cost for an M/M/1 queue with rates (λ, μ) to follow drift D.

    l(D || λ, μ) = D log((D + √(D² + 4λμ)) / 2λ) + λ + μ − √(D² + 4λμ),
    with l(0 || λ, 0) = λ, l(0 || 0, μ) = μ; INFINITY when D > 0 without
    arrivals or D < 0 without service.
    """
    D = NetworkValidator.validate_finite(D, "D")
    lam = NetworkValidator.validate_nonnegative(lam, "lambda")
    mu = NetworkValidator.validate_nonnegative(mu, "mu")
    return as_cost(float(_mm1_cost_array(D, lam, mu)))


def poisson_entropy(nu: float, lam: float) -> Cost:
    """I_p(ν || λ) = ν log(ν/λ) − ν + λ, with 0 log 0 = 0"""
    nu = NetworkValidator.validate_nonnegative(nu, "nu")
    lam = NetworkValidator.validate_nonnegative(lam, "lambda")
    return as_cost(float(kl_div(nu, lam)))


def entropy_minimize(lam: float, mu: float, D: float) -> Tuple[float, Cost]:
    """Minimise I_p(a || λ) + I_p(a − D || μ) over a ≥ max(0, D).

    Returns the optimal tilted arrival rate a* = (D + √(D² + 4λμ)) / 2 and
    the minimum, which equals mm1_cost(D, λ, μ). At the optimum
    a* (a* − D) = λμ.
    """
    value = mm1_cost(D, lam, mu)
    if value is INFINITY:
        return max(float(D), 0.0), INFINITY
    a_star = 0.5 * (D + math.hypot(D, 2.0 * math.sqrt(lam * mu)))
    return max(a_star, 0.0, float(D)), value


# Generators and allocations


@dataclass(frozen=True)
class Allocation:
    """Per-route bandwidth ν_ij"""
    nu: np.ndarray
    route_keys: tuple

    def channel_usage(self, spec: NetworkSpec) -> np.ndarray:
        return spec.incidence @ self.nu

    def in_capacity_region(self, spec: NetworkSpec, tol: float = 1e-12) -> bool:
        """ν ∈ V: ν ≥ 0 and Σ_j ν_ij ≤ C_i"""
        return bool(np.all(self.nu >= -tol) and np.all(self.channel_usage(spec) <= spec.capacities + tol))

    def as_mapping(self) -> Dict[str, float]:
        return {format_route_key(k): float(v) for k, v in zip(self.route_keys, self.nu)}


@dataclass(frozen=True)
class TiltedGenerator:
    """Modified rates (λ̃, μ̃) of an empirical generator seen as a star network.

    In the localized form μ̃ is a constant per-route service rate on Λ ∪ Λ₁
    and Λ₂ entries are ignored (those routes keep natural dynamics). In the
    transient form ``allocation`` holds ν and μ̃ = λ̃ / ν is the intensity of
    a min-policy network.
    """
    lambda_tilde: np.ndarray
    mu_tilde: np.ndarray
    allocation: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = np.array(self.lambda_tilde, dtype=float)
        mu = np.array(self.mu_tilde, dtype=float)
        if lam.shape != mu.shape or lam.ndim != 1:
            raise ValidationException("generator: lambda_tilde and mu_tilde must be vectors of equal length")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
            raise ValidationException("generator: rates must be finite")
        object.__setattr__(self, "lambda_tilde", lam)
        object.__setattr__(self, "mu_tilde", mu)
        if self.allocation is not None:
            object.__setattr__(self, "allocation", np.array(self.allocation, dtype=float))

    @property
    def transient(self) -> bool:
        return self.allocation is not None

    @property
    def drift(self) -> np.ndarray:
        return self.lambda_tilde - self.mu_tilde

    @classmethod
    def natural(cls, spec: NetworkSpec, x) -> "TiltedGenerator":
        """The local generator R(x) = (λ, μ(x))"""
        state = as_fluid_state(spec, x)
        return cls(spec.arrival_rates.copy(), min_policy_rates(spec, state.occupancy))

    @classmethod
    def from_drift(cls, spec: NetworkSpec, x, D, zero_tol: float = 0.0) -> "TiltedGenerator":
        """Entropy-minimising generator with drift D on Λ ∪ Λ₁ (natural on Λ₂)"""
        state = as_fluid_state(spec, x)
        drift = _drift_vector(spec, D)
        face = face_partition(spec, state, zero_tol)
        natural = cls.natural(spec, state)
        lam = natural.lambda_tilde.copy()
        mu = natural.mu_tilde.copy()
        for r in np.flatnonzero(face.costed):
            a_star, value = entropy_minimize(lam[r], natural.mu_tilde[r], drift[r])
            if value is INFINITY:
                raise ValidationException(
                    f"drift: route {format_route_key(spec.route_keys[r])} cannot follow D = {drift[r]}"
                )
            lam[r], mu[r] = a_star, a_star - drift[r]
        return cls(lam, np.maximum(mu, 0.0))

    @classmethod
    def from_allocation(cls, spec: NetworkSpec, arrivals, nu) -> "TiltedGenerator":
        """Transient generator (A, ν): λ̃ = a, μ̃ = a/ν (0 where ν = 0)"""
        a = np.asarray(arrivals, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if a.shape != (len(spec.routes),) or nu.shape != a.shape:
            raise ValidationException("generator: arrivals and allocation must have one entry per route")
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(nu > 0, a / nu, 0.0)
        return cls(a, mu, allocation=nu)

    def check_feasible(self, spec: NetworkSpec, x=None, zero_tol: float = 0.0) -> Optional[FacePartition]:
        """Raise ValidationException naming the first violated constraint"""
        keys = spec.route_keys
        if self.lambda_tilde.shape != (len(keys),):
            raise ValidationException(f"generator: expected {len(keys)} routes, got {self.lambda_tilde.shape[0]}")
        for r in range(len(keys)):
            if self.lambda_tilde[r] < 0:
                raise ValidationException(f"generator: lambda_tilde[{format_route_key(keys[r])}] < 0")
            if self.mu_tilde[r] < 0:
                raise ValidationException(
                    f"generator: a - D >= 0 violated on route {format_route_key(keys[r])} (mu_tilde < 0)"
                )
        if self.transient:
            nu = self.allocation
            if np.any(nu < 0):
                raise ValidationException("generator: allocation must be >= 0")
            usage = spec.incidence @ nu
            for n, cid in enumerate(spec.channel_ids):
                if usage[n] > spec.capacities[n] * (1 + 1e-12):
                    raise ValidationException(
                        f"generator: allocation exceeds capacity on channel {cid} ({usage[n]:.6g} > {spec.capacities[n]:.6g})"
                    )
            for r in range(len(keys)):
                if nu[r] == 0 and self.lambda_tilde[r] > 0:
                    raise ValidationException(
                        f"generator: arrivals must be cut where the allocation is 0 (route {format_route_key(keys[r])})"
                    )
            return None
        if x is None:
            raise ValidationException("generator: a localized generator needs the state x")
        face = face_partition(spec, x, zero_tol)
        for r in np.flatnonzero(face.jammed):
            if self.lambda_tilde[r] > 0:
                raise ValidationException(
                    f"generator: arrivals must be cut on jammed route {format_route_key(keys[r])} (a_ij = 0 on Λ₁)"
                )
        return face


def _drift_vector(spec: NetworkSpec, D) -> np.ndarray:
    if isinstance(D, dict):
        drift = np.zeros(len(spec.routes))
        for route, value in D.items():
            drift[spec.route_position(route)] = value
    else:
        drift = np.array(D, dtype=float)
    if drift.shape != (len(spec.routes),):
        raise ValidationException(f"drift: expected {len(spec.routes)} entries, got {drift.shape}")
    if not np.all(np.isfinite(drift)):
        raise ValidationException("drift: entries must be finite")
    return drift


def relative_entropy(spec: NetworkSpec, x, G: TiltedGenerator, zero_tol: float = 0.0) -> Cost:
    """H(G || R(x)) for a localized generator, or H(G || R) for a transient one.

    Localized: Σ over Λ ∪ Λ₁ of I_p(λ̃ || λ) + I_p(μ̃ || μ(x)).
    Transient: Σ over all routes of I_p(λ̃ || λ) + I_p(λ̃ || ν μ).
    """
    if G.transient:
        G.check_feasible(spec)
        terms = kl_div(G.lambda_tilde, spec.arrival_rates) + kl_div(
            G.lambda_tilde, G.allocation * spec.service_rates
        )
        return as_cost(float(np.sum(terms)))
    state = as_fluid_state(spec, x)
    face = G.check_feasible(spec, state, zero_tol)
    mu_x = min_policy_rates(spec, state.occupancy)
    mask = face.costed
    terms = kl_div(G.lambda_tilde[mask], spec.arrival_rates[mask]) + kl_div(G.mu_tilde[mask], mu_x[mask])
    return as_cost(float(np.sum(terms)))


# Stay-near-zero cost


@dataclass(frozen=True)
class StayCost:
    """Result of the stay-near-zero program inf_{ν∈V} Σ (√λ − √(μν))²"""
    value: float
    allocation: Allocation
    dual_value: float
    iterations: int
    converged: bool

    @property
    def duality_gap(self) -> float:
        return max(self.value - self.dual_value, 0.0)


def _route_mask(spec: NetworkSpec, route_subset) -> np.ndarray:
    if route_subset is None:
        return np.ones(len(spec.routes), dtype=bool)
    if isinstance(route_subset, np.ndarray) and route_subset.dtype == bool:
        return route_subset.copy()
    return route_keys_to_mask(spec, route_subset)


def stay_cost_objective(spec: NetworkSpec, nu, route_subset=None) -> float:
    """Σ (√λ_ij − √(μ_ij ν_ij))² over the routes of the subset"""
    mask = _route_mask(spec, route_subset)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (len(spec.routes),) or np.any(nu < 0):
        raise ValidationException(f"nu: expected {len(spec.routes)} allocations >= 0")
    lam, mu = spec.arrival_rates, spec.service_rates
    return float(np.sum(np.where(mask, (np.sqrt(lam) - np.sqrt(mu * nu)) ** 2, 0.0)))


def stay_cost_transient(
    spec: NetworkSpec,
    route_subset=None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> StayCost:
    """Cost for the routes in ``route_subset`` to stay near 0.

    Solved on the channel multipliers p ≥ 0 of the capacity constraints: for
    fixed p the optimal allocation is ν_ij = λ_ij μ_ij / (μ_ij + p_i + p_j)²,
    and the concave dual Σ λ P/(μ + P) − Σ p_i C_i is maximised by projected
    gradient ascent with the step 1/L of its Lipschitz bound. The returned
    allocation is scaled into V, so ``value`` is attained by it.
    """
    mask = _route_mask(spec, route_subset)
    keys = spec.route_keys
    if not mask.any():
        return StayCost(0.0, Allocation(np.zeros(len(keys)), keys), 0.0, 0, True)

    lam = np.where(mask, spec.arrival_rates, 0.0)
    mu = spec.service_rates
    ends = spec.endpoints
    caps = spec.capacities
    incidence = spec.incidence * mask
    lipschitz = 4.0 * float(np.max(incidence @ (lam / mu**2)))

    def allocation(p):
        P = p[ends[:, 0]] + p[ends[:, 1]]
        return lam * mu / (mu + P) ** 2, P

    p = np.zeros(len(caps))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nu, _ = allocation(p)
        gradient = incidence @ nu - caps
        p_next = np.maximum(p + gradient / lipschitz, 0.0)
        step = lipschitz * float(np.linalg.norm(p_next - p))
        p = p_next
        if step < tol:
            converged = True
            break

    nu, P = allocation(p)
    nu = _scale_into_capacity(incidence, caps, ends, nu)
    value = stay_cost_objective(spec, nu, mask)
    dual = float(np.sum(lam * P / (mu + P)) - p @ caps)
    return StayCost(value, Allocation(nu, keys), dual, iterations, converged)


def _scale_into_capacity(incidence, caps, ends, nu) -> np.ndarray:
    usage = incidence @ nu
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(usage > caps, caps / usage, 1.0)
    return nu * np.minimum(factor[ends[:, 0]], factor[ends[:, 1]])


# Local rate


@dataclass(frozen=True)
class LocalRate:
    """L(x, D) with its per-route breakdown"""
    total: Cost
    terms: np.ndarray
    face: FacePartition
    stay_cost: float = 0.0

    def breakdown(self, spec: NetworkSpec) -> Dict[str, object]:
        cut = float(np.sum(self.terms[self.face.jammed]))
        return {
            "total": cost_to_json(self.total),
            "routes": {
                format_route_key(k): cost_to_json(as_cost(float(t)))
                for k, t, m in zip(spec.route_keys, self.terms, self.face.saturated)
                if m
            },
            "jammed_cut": cost_to_json(as_cost(cut)),
            "stay_cost": self.stay_cost,
        }


def local_rate_terms(
    spec: NetworkSpec,
    x,
    D,
    mode: str = "ergodic",
    zero_tol: float = 0.0,
    extended: bool = False,
) -> LocalRate:
    """L(x, D) = Σ_{Λ ∪ Λ₁} l(D_ij || λ_ij, μ_ij(x)) [+ Λ₂ stay cost in general mode].

    The strict form needs D_ij = 0 off the face; ``extended`` allows
    D_ij ≥ 0 there. Ergodic mode refuses non-ergodic networks.

    Args:
        spec: Network whose rates are used
        x: Fluid state (array in route order, mapping or FluidState)
        D: Drift, same forms as x; missing routes count as 0
        mode: 'ergodic' (Λ₂ costs nothing) or 'general' (adds the Λ₂ stay cost)
        zero_tol: Occupancies at or below this count as empty
        extended: Accept D_ij >= 0 on empty routes

    Returns:
        LocalRate with the total (INFINITY when unattainable), per-route terms and the face
    """
    if mode not in ("ergodic", "general"):
        raise ValidationException(f"mode: expected 'ergodic' or 'general', got {mode!r}")
    state = as_fluid_state(spec, x)
    drift = _drift_vector(spec, D)
    face = face_partition(spec, state, zero_tol)
    for r in np.flatnonzero(~face.saturated):
        if drift[r] < 0 or (drift[r] != 0 and not extended):
            bound = ">= 0" if extended else "= 0"
            raise ValidationException(
                f"drift: D[{format_route_key(spec.route_keys[r])}] must be {bound} on an empty route, got {drift[r]}"
            )
    if mode == "ergodic":
        report = is_ergodic(spec)
        if not report.ergodic:
            raise ModeMismatchError(f"ergodic mode on a non-ergodic network ({report.describe()}); use mode 'general'")

    mu_x = min_policy_rates(spec, state.occupancy)
    terms = np.where(face.costed, _mm1_cost_array(drift, spec.arrival_rates, mu_x), 0.0)
    stay = 0.0
    if mode == "general":
        stay = stay_cost_transient(spec, face.ergodic).value
    total = as_cost(float(np.sum(terms)) + stay)
    return LocalRate(total, terms, face, stay)


def local_rate(
    spec: NetworkSpec,
    x,
    D,
    mode: str = "ergodic",
    zero_tol: float = 0.0,
    extended: bool = False,
) -> Cost:
    return local_rate_terms(spec, x, D, mode, zero_tol, extended).total
