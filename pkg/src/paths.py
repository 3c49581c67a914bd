"""Sample-path costs and the variational estimate of stationary tail decay.

A path is piecewise linear; on each segment the face is constant, so the
integrand t -> L(φ(t), φ') is smooth and a Gauss-Legendre rule integrates it.
The decay estimate minimises the path cost from 0 to {x_i = 1} over paths
with a fixed number of segments.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from src.model import as_fluid_state, face_masks, is_ergodic, min_policy_rates
from src.rate import Cost, _mm1_cost_array, as_cost, stay_cost_transient
from src.schemas import NetworkSpec, format_route_key
from src.validators import (
    ConvergenceError,
    ModeMismatchError,
    NetworkValidator,
    NotErgodicError,
    ValidationException,
)

DEFAULT_NODES = 16
PENALTY = 1e10


@lru_cache(maxsize=8)
def _gauss_legendre(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]"""
    xi, w = np.polynomial.legendre.leggauss(nodes)
    return (xi + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Breakpoint times 0 = t_0 < ... < t_K = T and the states there"""
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        states = np.array(self.states, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValidationException("path: need at least two breakpoints")
        if states.ndim != 2 or states.shape[0] != times.size:
            raise ValidationException("path: one state per breakpoint is required")
        if times[0] != 0.0:
            raise ValidationException("path: the first breakpoint must be t = 0")
        if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
            raise ValidationException("path: breakpoint times must be strictly increasing")
        if not np.all(np.isfinite(states)) or np.any(states < 0):
            raise ValidationException("path: states must be finite and >= 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @classmethod
    def from_durations(cls, start, states: Sequence, durations: Sequence[float]) -> "PiecewiseLinearPath":
        times = np.concatenate([[0.0], np.cumsum(durations)])
        return cls(times, np.vstack([np.asarray(start, dtype=float)] + [np.asarray(s, dtype=float) for s in states]))

    @classmethod
    def constant(cls, state, horizon: float) -> "PiecewiseLinearPath":
        NetworkValidator.validate_positive(horizon, "horizon")
        state = np.asarray(state, dtype=float)
        return cls(np.array([0.0, horizon]), np.vstack([state, state]))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_segments(self) -> int:
        return self.times.size - 1

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.times)

    def drift(self, k: int) -> np.ndarray:
        return (self.states[k + 1] - self.states[k]) / (self.times[k + 1] - self.times[k])

    def state_at(self, t: float) -> np.ndarray:
        t = min(max(t, 0.0), self.horizon)
        return np.array([np.interp(t, self.times, column) for column in self.states.T])

    def face_constant(self, zero_tol: float = 0.0) -> "PiecewiseLinearPath":
        """Snap near-zero entries to 0 so every segment keeps one face.

        A linear segment between nonnegative endpoints is either identically 0
        or positive inside, so once endpoints are snapped no split is needed.
        """
        if zero_tol <= 0:
            return self
        return PiecewiseLinearPath(self.times, np.where(self.states <= zero_tol, 0.0, self.states))

    def refine(self, k: int) -> "PiecewiseLinearPath":
        """Insert the midpoint of segment k as a new breakpoint"""
        t_mid = 0.5 * (self.times[k] + self.times[k + 1])
        x_mid = 0.5 * (self.states[k] + self.states[k + 1])
        return PiecewiseLinearPath(
            np.insert(self.times, k + 1, t_mid), np.insert(self.states, k + 1, x_mid, axis=0)
        )

    def concatenate(self, other: "PiecewiseLinearPath") -> "PiecewiseLinearPath":
        if not np.allclose(self.states[-1], other.states[0], rtol=0, atol=1e-12):
            raise ValidationException("path: concatenated paths must meet")
        return PiecewiseLinearPath(
            np.concatenate([self.times, self.horizon + other.times[1:]]),
            np.vstack([self.states, other.states[1:]]),
        )

    def sample(self, nodes: int = DEFAULT_NODES) -> Tuple[np.ndarray, np.ndarray]:
        """Times and states at the quadrature nodes of every segment"""
        u, _ = _gauss_legendre(nodes)
        times, states = [], []
        for k in range(self.n_segments):
            dt = self.times[k + 1] - self.times[k]
            times.append(self.times[k] + u * dt)
            states.append(self.states[k] + np.outer(u, self.states[k + 1] - self.states[k]))
        return np.concatenate(times), np.vstack(states)

    def as_rows(self, spec: NetworkSpec) -> List[Dict[str, float]]:
        rows = []
        for t, x in zip(self.times, self.states):
            row = {"t": float(t)}
            row.update({format_route_key(k): float(v) for k, v in zip(spec.route_keys, x)})
            rows.append(row)
        return rows


@dataclass(frozen=True)
class PathCostReport:
    total: Cost
    segment_costs: List[Cost]
    refinement_delta: float
    nodes: int


class _SegmentIntegrator:
    """Integrates L along linear segments of one network"""

    def __init__(self, spec: NetworkSpec, mode: str, zero_tol: float):
        if mode not in ("ergodic", "general"):
            raise ValidationException(f"mode: expected 'ergodic' or 'general', got {mode!r}")
        if mode == "ergodic":
            report = is_ergodic(spec)
            if not report.ergodic:
                raise ModeMismatchError(f"ergodic mode on a non-ergodic network ({report.describe()})")
        self.spec = spec
        self.mode = mode
        self.zero_tol = zero_tol
        self._stay: Dict[bytes, float] = {}

    def stay(self, ergodic_routes: np.ndarray) -> float:
        key = ergodic_routes.tobytes()
        if key not in self._stay:
            self._stay[key] = stay_cost_transient(self.spec, ergodic_routes).value
        return self._stay[key]

    def segment(self, x_a: np.ndarray, x_b: np.ndarray, dt: float, nodes: int) -> float:
        """∫ over the segment; np.inf when the drift leaves the face"""
        spec = self.spec
        drift = (x_b - x_a) / dt
        flat = (x_a <= self.zero_tol) & (x_b <= self.zero_tol)
        if np.any(drift[flat] != 0):
            # only reachable when zero_tol snaps distinct endpoints together
            drift = np.where(flat, 0.0, drift)
        saturated, jammed, ergodic = face_masks(spec, 0.5 * (x_a + x_b), self.zero_tol)
        costed = saturated | jammed
        u, w = _gauss_legendre(nodes)
        X = x_a + np.outer(u, x_b - x_a)
        rates = min_policy_rates(spec, X)
        terms = _mm1_cost_array(drift[costed], spec.arrival_rates[costed], rates[:, costed])
        integral = dt * float(w @ terms.sum(axis=1))
        if self.mode == "general" and ergodic.any():
            integral += dt * self.stay(ergodic)
        return integral

    def path(self, path: PiecewiseLinearPath, nodes: int) -> List[float]:
        return [
            self.segment(path.states[k], path.states[k + 1], path.times[k + 1] - path.times[k], nodes)
            for k in range(path.n_segments)
        ]


def path_cost_report(
    spec: NetworkSpec,
    path: PiecewiseLinearPath,
    mode: str = "ergodic",
    zero_tol: float = 0.0,
    nodes: int = DEFAULT_NODES,
) -> PathCostReport:
    """I_T(φ) per segment, with a node-doubling check of the quadrature"""
    if path.states.shape[1] != len(spec.routes):
        raise ValidationException(f"path: states need {len(spec.routes)} route entries")
    path = path.face_constant(zero_tol)
    integrator = _SegmentIntegrator(spec, mode, zero_tol)
    coarse = integrator.path(path, nodes)
    fine = integrator.path(path, 2 * nodes)
    total = sum(coarse)
    delta = abs(sum(fine) - total) if np.isfinite(total) else 0.0
    return PathCostReport(as_cost(total), [as_cost(c) for c in coarse], float(delta), nodes)


def path_cost(
    spec: NetworkSpec,
    path: PiecewiseLinearPath,
    mode: str = "ergodic",
    zero_tol: float = 0.0,
    nodes: int = DEFAULT_NODES,
) -> Cost:
    """I_T(φ) = ∫_0^T L(φ(t), φ'(t)) dt for a piecewise-linear φ"""
    return path_cost_report(spec, path, mode, zero_tol, nodes).total


def natural_fluid_path(spec: NetworkSpec, x0, horizon: float, steps: int = 200) -> PiecewiseLinearPath:
    """Piecewise-linear fluid trajectory ẋ = λ − μ(x) (midpoint rule).

    Stops early, exactly on the boundary, if a route would empty.
    """
    NetworkValidator.validate_positive(horizon, "horizon")
    x = as_fluid_state(spec, x0).occupancy.copy()
    h = horizon / steps
    states, durations = [x.copy()], []
    lam = spec.arrival_rates
    for _ in range(steps):
        half = np.maximum(x + 0.5 * h * (lam - min_policy_rates(spec, x)), 0.0)
        drift = lam - min_policy_rates(spec, half)
        step, hit = h, False
        emptying = (drift < 0) & (x > 0)
        if emptying.any():
            reach = float(np.min(-x[emptying] / drift[emptying]))
            hit = reach <= h
            step = min(h, reach)
        if step <= 0:
            break
        x = np.maximum(x + step * drift, 0.0)
        states.append(x.copy())
        durations.append(step)
        if hit:
            break
    return PiecewiseLinearPath.from_durations(states[0], states[1:], durations)


# Variational decay estimate


@dataclass(frozen=True)
class OptimizeOptions:
    segments: int = 4
    multistarts: int = 16
    seed: int = 0
    max_iterations: int = 4000
    tolerance: float = 1e-8
    mode: str = "ergodic"
    snap: float = 1e-9
    max_occupancy: float = 10.0
    duration_bounds: Tuple[float, float] = (1e-4, 1e4)
    nodes: int = DEFAULT_NODES
    workers: int = 1


@dataclass(frozen=True)
class DecayDiagnostics:
    target_channel: int
    segment_costs: List[float]
    bottlenecks: List[Optional[int]]
    start_values: List[float]
    stage_values: List[float]
    quadrature_delta: float


@dataclass(frozen=True)
class DecayResult:
    """Variational decay estimate inf_T inf_φ {I_T(φ): φ(0) = 0, φ_i(T) = 1}"""
    value: float
    optimal_path: PiecewiseLinearPath
    horizon: float
    status: str
    diagnostics: DecayDiagnostics = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class _PathCodec:
    """Maps optimizer vectors to paths from 0 ending on {x_target = 1}"""

    def __init__(self, spec: NetworkSpec, target: int, segments: int, options: OptimizeOptions):
        self.R = len(spec.routes)
        self.target_routes = spec.incidence[spec.channel_position(target)] > 0
        self.other_routes = ~self.target_routes
        self.segments = segments
        self.snap = options.snap
        lo, hi = np.log(options.duration_bounds[0]), np.log(options.duration_bounds[1])
        n_target, n_other = int(self.target_routes.sum()), int(self.other_routes.sum())
        self.bounds = (
            [(0.0, options.max_occupancy)] * (self.R * (segments - 1))
            + [(0.0, 1.0)] * n_target
            + [(0.0, options.max_occupancy)] * n_other
            + [(lo, hi)] * segments
        )

    @property
    def size(self) -> int:
        return len(self.bounds)

    def decode(self, z: np.ndarray) -> Optional[PiecewiseLinearPath]:
        z = np.clip(z, [b[0] for b in self.bounds], [b[1] for b in self.bounds])
        n_mid = self.R * (self.segments - 1)
        mids = z[:n_mid].reshape(self.segments - 1, self.R)
        n_target = int(self.target_routes.sum())
        weights = z[n_mid:n_mid + n_target]
        if weights.sum() <= 0:
            return None
        final = np.zeros(self.R)
        final[self.target_routes] = weights / weights.sum()
        final[self.other_routes] = z[n_mid + n_target:n_mid + self.R]
        states = np.vstack([mids, final[None, :]])
        states = np.where(states < self.snap, 0.0, states)
        durations = np.exp(z[n_mid + self.R:])
        return PiecewiseLinearPath.from_durations(np.zeros(self.R), states, durations)

    def encode(self, path: PiecewiseLinearPath) -> np.ndarray:
        mids = path.states[1:-1].ravel()
        final = path.states[-1]
        z = np.concatenate([mids, final[self.target_routes], final[self.other_routes], np.log(path.durations)])
        return np.clip(z, [b[0] for b in self.bounds], [b[1] for b in self.bounds])

    def random(self, rng: np.random.Generator) -> np.ndarray:
        z = []
        for lo, hi in self.bounds[:-self.segments]:
            z.append(rng.uniform(lo, min(hi, 2.0)))
        for lo, hi in self.bounds[-self.segments:]:
            z.append(rng.uniform(max(lo, np.log(0.05)), min(hi, np.log(50.0))))
        return np.array(z)


def _objective(z, codec: _PathCodec, integrator: _SegmentIntegrator, nodes: int) -> float:
    path = codec.decode(z)
    if path is None:
        return PENALTY
    total = sum(integrator.path(path, nodes))
    return float(total) if np.isfinite(total) else PENALTY


def _local_search(task) -> Tuple[int, float, np.ndarray, bool]:
    """One start: (index, value, vector, success)"""
    index, spec, target, segments, options, z0 = task
    codec = _PathCodec(spec, target, segments, options)
    integrator = _SegmentIntegrator(spec, options.mode, 0.0)
    start_value = _objective(z0, codec, integrator, options.nodes)
    result = minimize(
        _objective,
        z0,
        args=(codec, integrator, options.nodes),
        method="Powell",
        bounds=codec.bounds,
        options={"maxiter": options.max_iterations, "xtol": 1e-8, "ftol": options.tolerance},
    )
    if result.fun <= start_value:
        return index, float(result.fun), np.asarray(result.x), bool(result.success)
    return index, start_value, z0, bool(result.success)


def _run_tasks(tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_local_search, tasks))
    else:
        results = [_local_search(task) for task in tasks]
    # best value first, ties to the lowest start index
    return sorted(results, key=lambda item: (item[1], item[0]))


def _initial_single_segment(spec: NetworkSpec, codec: _PathCodec, target: int) -> np.ndarray:
    """Straight path towards the load-proportional point of the target channel"""
    ratios = spec.arrival_rates / spec.service_rates
    weights = ratios[codec.target_routes]
    others = np.zeros(int(codec.other_routes.sum()))
    a = spec.channel_position(target)
    load = float(spec.incidence[a] @ ratios)
    slack = max(spec.capacities[a] - load, 1e-3)
    horizon = min(max(load / slack, 0.05), 50.0)
    return np.concatenate([weights / weights.sum(), others, [np.log(horizon)]])


def _target_routes(spec: NetworkSpec, channel: int) -> np.ndarray:
    routes = spec.incidence[spec.channel_position(channel)] > 0
    if not routes.any():
        raise ValidationException(f"channel: {channel} carries no route, its queue is always empty")
    return routes


def _bottleneck(spec: NetworkSpec, x: np.ndarray) -> Optional[int]:
    totals = spec.incidence @ x
    busy = totals > 0
    if not busy.any():
        return None
    share = np.where(busy, spec.capacities / np.where(busy, totals, 1.0), np.inf)
    return int(spec.channel_ids[int(np.argmin(share))])


def optimize_tail_decay(
    spec: NetworkSpec, target_channel: int, opts: Optional[OptimizeOptions] = None
) -> DecayResult:
    """Minimise I_T over piecewise-linear paths from 0 to {x_target = 1}.

    Single-segment paths are searched first from ``multistarts`` starts;
    each further stage splits the longest segment of the incumbent and
    searches again, so the value never increases with the segment budget.

    Args:
        spec: Ergodic network
        target_channel: Channel whose occupancy has to reach 1
        opts: Search budget, seed and quadrature settings

    Returns:
        DecayResult with the best value, its path and diagnostics; status is
        'not_converged' when the search or the quadrature check is not tight

    Raises:
        NotErgodicError: The network has no stationary regime
        ValidationException: The target channel carries no route
        ConvergenceError: No start produced an admissible path
    """
    opts = opts or OptimizeOptions()
    if opts.segments < 1 or opts.multistarts < 1:
        raise ValidationException("options: segments and multistarts must be >= 1")
    report = is_ergodic(spec)
    if not report.ergodic:
        raise NotErgodicError(
            f"tail decay needs a stationary regime ({report.describe()})", report.overloaded
        )
    _target_routes(spec, target_channel)

    codec = _PathCodec(spec, target_channel, 1, opts)
    tasks = []
    for index in range(opts.multistarts):
        if index == 0:
            z0 = _initial_single_segment(spec, codec, target_channel)
        else:
            z0 = codec.random(np.random.default_rng([opts.seed, index]))
        tasks.append((index, spec, target_channel, 1, opts, z0))
    ranked = _run_tasks(tasks, opts.workers)
    start_values = [value for _, value, _, _ in sorted(ranked)]
    _, best_value, best_z, success = ranked[0]
    best_path = codec.decode(best_z)
    if best_path is None or best_value >= PENALTY:
        raise ConvergenceError(
            f"channel {target_channel}: none of the {opts.multistarts} starts produced an admissible path"
        )
    stage_values = [best_value]
    seed_path = best_path

    for segments in range(2, opts.segments + 1):
        refined = seed_path.refine(int(np.argmax(seed_path.durations)))
        codec = _PathCodec(spec, target_channel, segments, opts)
        z0 = codec.encode(refined)
        _, value, z, ok = _local_search((0, spec, target_channel, segments, opts, z0))
        candidate = codec.decode(z)
        if candidate is not None and value <= best_value:
            best_value, best_path, success = value, candidate, ok
            seed_path = candidate
        else:
            # the next stage starts from the incumbent with one more breakpoint
            seed_path = refined
        stage_values.append(best_value)

    final = path_cost_report(spec, best_path, opts.mode, 0.0, opts.nodes)
    value = float(final.total)
    scale = max(1.0, abs(value))
    status = "converged" if success and final.refinement_delta <= 1e-6 * scale else "not_converged"
    mids = 0.5 * (best_path.states[:-1] + best_path.states[1:])
    diagnostics = DecayDiagnostics(
        target_channel=target_channel,
        segment_costs=[float(c) for c in final.segment_costs],
        bottlenecks=[_bottleneck(spec, m) for m in mids],
        start_values=start_values,
        stage_values=stage_values,
        quadrature_delta=final.refinement_delta,
    )
    return DecayResult(value, best_path, best_path.horizon, status, diagnostics)


# Processor-sharing comparison


def ps_decay_rate(spec: NetworkSpec, channel: int) -> float:
    """−log ρ_i for the multiclass PS queue with the channel's parameters"""
    a = spec.channel_position(channel)
    routes = _target_routes(spec, channel)
    rho = float(np.sum(spec.arrival_rates[routes] / spec.service_rates[routes]) / spec.capacities[a])
    if rho >= 1.0:
        raise NotErgodicError(f"channel {channel}: PS load {rho:.6g} >= 1, no stationary tail", [channel])
    return float(-np.log(rho))


@dataclass(frozen=True)
class PSConsistency:
    consistent: bool
    channel: int
    samples: int
    first_violation_time: Optional[float] = None
    violating_route: Optional[str] = None

    def as_dict(self) -> Dict:
        return {
            "consistent": self.consistent,
            "channel": self.channel,
            "samples": self.samples,
            "first_violation_time": self.first_violation_time,
            "violating_route": self.violating_route,
        }


def ps_consistency_check(
    spec: NetworkSpec,
    result,
    channel: int,
    nodes: int = DEFAULT_NODES,
    rtol: float = 1e-9,
) -> PSConsistency:
    """Is the channel the bottleneck (C_i/x_i minimal) of its busy routes along the path?"""
    path = result.optimal_path if isinstance(result, DecayResult) else result
    a = spec.channel_position(channel)
    times, states = path.sample(nodes)
    ends = spec.endpoints
    for t, x in zip(times, states):
        totals = spec.incidence @ x
        if totals[a] <= 0:
            continue
        own = spec.capacities[a] / totals[a]
        for r in np.flatnonzero((spec.incidence[a] > 0) & (x > 0)):
            other = ends[r, 1] if ends[r, 0] == a else ends[r, 0]
            if own > spec.capacities[other] / totals[other] * (1 + rtol):
                return PSConsistency(False, channel, len(times), float(t), format_route_key(spec.route_keys[r]))
    return PSConsistency(True, channel, len(times))
