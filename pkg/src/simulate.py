"""Event-driven simulation of the star network.

Exact (Gillespie) simulation under natural or tilted dynamics, the empirical
generator of a trajectory, likelihood-ratio accounting for importance
sampling and decay-rate estimation from occupancy histograms.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.config import config
from src.model import DiscreteState, FacePartition, as_fluid_state
from src.rate import TiltedGenerator
from src.schemas import NetworkSpec, Policy, RouteKey, format_route_key
from src.validators import (
    AbsoluteContinuityError,
    InsufficientDataError,
    NetworkValidator,
    ValidationException,
)

FULL_REFRESH_EVENTS = 1_000_000
_DRAW_BATCH = 4096


@dataclass(frozen=True)
class Dynamics:
    """Simulatable rates: constant arrivals, per-document service and a policy.

    Routes flagged in ``constant_service`` depart at rate ``service`` whenever
    they are nonempty; the others at ``service`` times the policy allocation.
    """
    spec: NetworkSpec
    arrival: np.ndarray
    service: np.ndarray
    constant_service: np.ndarray
    policy: Policy = Policy.MIN
    anchor: Optional[int] = None

    def __post_init__(self):
        R = len(self.spec.routes)
        for name in ("arrival", "service"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (R,) or np.any(values < 0) or not np.all(np.isfinite(values)):
                raise ValidationException(f"dynamics: {name} must hold {R} finite rates >= 0")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "constant_service", np.asarray(self.constant_service, dtype=bool))
        if Policy(self.policy) == Policy.PROCESSOR_SHARING:
            if self.anchor is None:
                raise ValidationException("anchor: processor sharing needs an anchor channel")
            self.spec.channel_position(self.anchor)
            for key in self.spec.route_keys:
                if self.anchor not in key:
                    raise ValidationException(
                        f"anchor: route {format_route_key(key)} does not use channel {self.anchor}; "
                        f"isolate the channel first"
                    )


def natural_dynamics(spec: NetworkSpec, policy: Policy = Policy.MIN, anchor: Optional[int] = None) -> Dynamics:
    return Dynamics(
        spec,
        spec.arrival_rates.copy(),
        spec.service_rates.copy(),
        np.zeros(len(spec.routes), dtype=bool),
        Policy(policy),
        anchor,
    )


def tilt(spec: NetworkSpec, x, G: TiltedGenerator, zero_tol: float = 0.0) -> Dynamics:
    """Dynamics realising a tilted generator.

    Localized G at x: routes of Λ ∪ Λ₁ get arrival rate λ̃ and constant
    service μ̃ while nonempty; Λ₂ keeps the natural min-policy rates.
    Transient G: the min-policy network with parameters (λ̃, μ̃).
    """
    if G.transient:
        G.check_feasible(spec)
        return Dynamics(spec, G.lambda_tilde, G.mu_tilde, np.zeros(len(spec.routes), dtype=bool))
    face = G.check_feasible(spec, as_fluid_state(spec, x), zero_tol)
    costed = face.costed
    return Dynamics(
        spec,
        np.where(costed, G.lambda_tilde, spec.arrival_rates),
        np.where(costed, G.mu_tilde, spec.service_rates),
        costed,
    )


class _RateTable:
    """Per-route allocations and departure rates of one dynamics"""

    def __init__(self, dynamics: Dynamics):
        spec = dynamics.spec
        self.caps = spec.capacities.tolist()
        self.ends = [tuple(e) for e in spec.endpoints.tolist()]
        self.arrival = dynamics.arrival.tolist()
        self.mu = dynamics.service.tolist()
        self.constant = dynamics.constant_service.tolist()
        self.ps_anchor = (
            spec.channel_position(dynamics.anchor) if Policy(dynamics.policy) == Policy.PROCESSOR_SHARING else None
        )
        R = len(self.ends)
        self.neighbours = [
            [s for s in range(R) if set(self.ends[s]) & set(self.ends[r])] for r in range(R)
        ]

    def allocation(self, r: int, q: List[int], totals: List[int]) -> float:
        if q[r] == 0:
            return 0.0
        if self.ps_anchor is not None:
            a = self.ps_anchor
            return self.caps[a] * q[r] / totals[a]
        i, j = self.ends[r]
        return q[r] * min(self.caps[i] / totals[i], self.caps[j] / totals[j])

    def departure(self, r: int, q: List[int], alloc: float) -> float:
        if q[r] == 0:
            return 0.0
        return self.mu[r] if self.constant[r] else self.mu[r] * alloc

    def refresh(self, q: List[int], totals: List[int]) -> Tuple[List[float], List[float]]:
        alloc = [self.allocation(r, q, totals) for r in range(len(q))]
        dep = [self.departure(r, q, alloc[r]) for r in range(len(q))]
        return alloc, dep


@dataclass(frozen=True)
class TrajectoryStats:
    """Holding-time weighted statistics of one trajectory.

    ``histograms[c, n]`` is the time channel c spent with n documents; the
    last column is the overflow bin for n > cap. ``entries[c, n]`` counts
    the jumps that brought channel c to level n, and ``batch_histograms``
    splits the histograms over consecutive equal slices of the horizon.
    """
    channel_ids: Tuple[int, ...]
    route_keys: Tuple[RouteKey, ...]
    horizon: float
    event_count: int
    arrivals: np.ndarray
    departures: np.ndarray
    histograms: np.ndarray
    allocation_integral: np.ndarray
    initial_state: np.ndarray
    final_state: np.ndarray
    max_occupancy: np.ndarray
    entries: Optional[np.ndarray] = None
    batch_histograms: Optional[np.ndarray] = None

    @property
    def cap(self) -> int:
        return self.histograms.shape[1] - 2

    def histogram(self, channel: int) -> np.ndarray:
        if channel not in self.channel_ids:
            raise ValidationException(f"channel: {channel} is not a simulated channel")
        return self.histograms[self.channel_ids.index(channel)]

    def mean_allocation(self) -> np.ndarray:
        return self.allocation_integral / self.horizon

    def mean_occupancy(self) -> np.ndarray:
        n = np.arange(self.histograms.shape[1])
        return self.histograms @ n / self.horizon

    def summary(self) -> Dict:
        routes = [format_route_key(k) for k in self.route_keys]
        return {
            "horizon": self.horizon,
            "event_count": self.event_count,
            "arrivals": dict(zip(routes, self.arrivals.tolist())),
            "departures": dict(zip(routes, self.departures.tolist())),
            "mean_allocation": dict(zip(routes, self.mean_allocation().tolist())),
            "initial_state": dict(zip(routes, self.initial_state.tolist())),
            "final_state": dict(zip(routes, self.final_state.tolist())),
            "max_occupancy": dict(zip(map(str, self.channel_ids), self.max_occupancy.tolist())),
            "mean_occupancy": dict(zip(map(str, self.channel_ids), self.mean_occupancy().tolist())),
            "histogram_cap": self.cap,
        }

    def histogram_rows(self) -> List[Dict]:
        rows = []
        for c, channel in enumerate(self.channel_ids):
            for n in np.flatnonzero(self.histograms[c]):
                label = "overflow" if n > self.cap else int(n)
                rows.append({"channel": channel, "n": label, "time_mass": float(self.histograms[c, n])})
        return rows

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["channel", "n", "time_mass"])
            writer.writeheader()
            writer.writerows(self.histogram_rows())
        return path


def _draws(rng: np.random.Generator):
    while True:
        exps = rng.standard_exponential(_DRAW_BATCH).tolist()
        unis = rng.random(_DRAW_BATCH).tolist()
        yield from zip(exps, unis)


def _trajectory(
    dynamics: Dynamics,
    q0: List[int],
    horizon: float,
    rng: np.random.Generator,
    cap: int,
    reference: Optional[Dynamics] = None,
    batches: int = 1,
):
    """Run one trajectory; returns (stats, log M_t, cut) where cut flags P-only transitions"""
    spec = dynamics.spec
    R, N = len(spec.routes), spec.n_channels
    table = _RateTable(dynamics)
    ends = table.ends
    lam = table.arrival
    q = list(q0)
    totals = [0] * N
    for r, (i, j) in enumerate(ends):
        totals[i] += q[r]
        totals[j] += q[r]
    alloc, dep = table.refresh(q, totals)
    total_rate = sum(lam) + sum(dep)

    ref = _RateTable(reference) if reference is not None else None
    if ref is not None:
        ref_lam = ref.arrival
        ref_alloc, ref_dep = ref.refresh(q, totals)
        ref_total = sum(ref_lam) + sum(ref_dep)
    log_m = 0.0
    cut = False

    hist = [[[0.0] * (cap + 2) for _ in range(N)] for _ in range(batches)]
    entries = [[0] * (cap + 2) for _ in range(N)]
    batch, batch_end = 0, horizon / batches
    current = hist[0]
    alloc_int = [0.0] * R
    arrivals = [0] * R
    departures = [0] * R
    max_occ = list(totals)
    overflow = cap + 1
    t = 0.0
    events = 0
    draws = _draws(rng)

    while True:
        e, u = next(draws)
        dt = e / total_rate if total_rate > 0 else math.inf
        if t + dt >= horizon:
            dt = horizon - t
            stop = True
        else:
            stop = False
        s, rest = t, dt
        while s + rest > batch_end and batch < batches - 1:
            part = batch_end - s
            for c in range(N):
                current[c][min(totals[c], overflow)] += part
            s, rest = batch_end, rest - part
            batch += 1
            batch_end = horizon * (batch + 1) / batches
            current = hist[batch]
        for c in range(N):
            current[c][min(totals[c], overflow)] += rest
        for r in range(R):
            alloc_int[r] += alloc[r] * dt
        if ref is not None:
            log_m -= (total_rate - ref_total) * dt
            if not cut:
                cut = any(lam[r] == 0 < ref_lam[r] for r in range(R)) or any(
                    dep[r] == 0 < ref_dep[r] for r in range(R)
                )
        if stop:
            break
        t += dt

        # pick the transition
        threshold = u * total_rate
        chosen, arrival = -1, True
        for r in range(R):
            threshold -= lam[r]
            if threshold < 0:
                chosen = r
                break
        if chosen < 0:
            arrival = False
            for r in range(R):
                threshold -= dep[r]
                if threshold < 0:
                    chosen = r
                    break
        if chosen < 0:
            # rounding left the threshold past the sum: take the last live transition
            live = [(r, True) for r in range(R) if lam[r] > 0] + [(r, False) for r in range(R) if dep[r] > 0]
            if not live:
                total_rate = 0.0
                continue
            chosen, arrival = live[-1]

        if ref is not None:
            tilted = lam[chosen] if arrival else dep[chosen]
            natural = ref_lam[chosen] if arrival else ref_dep[chosen]
            if natural <= 0:
                raise AbsoluteContinuityError(
                    f"jump on route {format_route_key(spec.route_keys[chosen])} has zero rate under the reference law",
                    {
                        "time": t,
                        "route": format_route_key(spec.route_keys[chosen]),
                        "arrival": arrival,
                        "state": list(q),
                        "tilted_rate": tilted,
                    },
                )
            log_m += math.log(tilted / natural)

        i, j = ends[chosen]
        if arrival:
            q[chosen] += 1
            totals[i] += 1
            totals[j] += 1
            arrivals[chosen] += 1
            entries[i][min(totals[i], overflow)] += 1
            entries[j][min(totals[j], overflow)] += 1
            if totals[i] > max_occ[i]:
                max_occ[i] = totals[i]
            if totals[j] > max_occ[j]:
                max_occ[j] = totals[j]
        else:
            q[chosen] -= 1
            totals[i] -= 1
            totals[j] -= 1
            departures[chosen] += 1
            entries[i][min(totals[i], overflow)] += 1
            entries[j][min(totals[j], overflow)] += 1
        events += 1

        if events % FULL_REFRESH_EVENTS == 0:
            alloc, dep = table.refresh(q, totals)
            total_rate = sum(lam) + sum(dep)
            if ref is not None:
                ref_alloc, ref_dep = ref.refresh(q, totals)
                ref_total = sum(ref_lam) + sum(ref_dep)
            continue
        for s in table.neighbours[chosen]:
            alloc[s] = table.allocation(s, q, totals)
            new = table.departure(s, q, alloc[s])
            total_rate += new - dep[s]
            dep[s] = new
            if ref is not None:
                ref_alloc[s] = ref.allocation(s, q, totals)
                new = ref.departure(s, q, ref_alloc[s])
                ref_total += new - ref_dep[s]
                ref_dep[s] = new

    stats = TrajectoryStats(
        channel_ids=tuple(spec.channel_ids),
        route_keys=tuple(spec.route_keys),
        horizon=float(horizon),
        event_count=events,
        arrivals=np.array(arrivals, dtype=np.int64),
        departures=np.array(departures, dtype=np.int64),
        histograms=np.sum(hist, axis=0),
        allocation_integral=np.array(alloc_int),
        initial_state=np.array(q0, dtype=np.int64),
        final_state=np.array(q, dtype=np.int64),
        max_occupancy=np.array(max_occ, dtype=np.int64),
        entries=np.array(entries, dtype=np.int64),
        batch_histograms=np.array(hist) if batches > 1 else None,
    )
    return stats, log_m, cut


def _initial_counts(spec: NetworkSpec, x0) -> List[int]:
    if x0 is None:
        return [0] * len(spec.routes)
    if isinstance(x0, DiscreteState):
        return x0.check(spec).counts()
    if isinstance(x0, dict):
        state = DiscreteState.from_mapping(spec, x0)
    else:
        state = DiscreteState(np.asarray(x0, dtype=float))
    return state.check(spec).counts()


def simulate_dynamics(
    dynamics: Dynamics,
    x0=None,
    horizon: float = 1.0,
    seed: Optional[int] = None,
    histogram_cap: Optional[int] = None,
    batches: Optional[int] = None,
) -> TrajectoryStats:
    """Simulate arbitrary (natural or tilted) dynamics"""
    NetworkValidator.validate_positive(horizon, "horizon")
    cap = histogram_cap or config.histogram_cap
    if cap < 1:
        raise ValidationException("histogram_cap: must be >= 1")
    batches = config.decay_batches if batches is None else int(batches)
    if batches < 1:
        raise ValidationException("batches: must be >= 1")
    seed = config.default_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    stats, _, _ = _trajectory(dynamics, _initial_counts(dynamics.spec, x0), horizon, rng, cap, batches=batches)
    return stats


def simulate(
    spec: NetworkSpec,
    policy: Policy = Policy.MIN,
    x0=None,
    horizon: float = 1.0,
    seed: Optional[int] = None,
    anchor: Optional[int] = None,
    histogram_cap: Optional[int] = None,
) -> TrajectoryStats:
    """Exact simulation of the network under MinPolicy or ProcessorSharing.

    Deterministic given the seed; the default seed comes from the settings.

    Args:
        spec: Network to simulate
        policy: Policy.MIN, or Policy.PROCESSOR_SHARING on an isolated channel
        x0: Initial document counts (array in route order or {"i-j": n}); empty by default
        horizon: Simulated time
        seed: Seed of the single random stream
        anchor: Channel shared by every route under processor sharing
        histogram_cap: Largest occupancy with its own histogram bin

    Returns:
        TrajectoryStats with per-channel histograms, entry counts, counters
        and the allocation integral
    """
    return simulate_dynamics(natural_dynamics(spec, policy, anchor), x0, horizon, seed, histogram_cap)


# Decay-rate estimation


@dataclass(frozen=True)
class DecayEstimate:
    channel: int
    rate: float
    stderr: float
    n_low: int
    n_high: int
    bins: int


def estimate_decay_rate(
    stats: TrajectoryStats,
    channel: int,
    window: Tuple[float, float] = (0.5, 0.99),
    min_visits: Optional[int] = None,
) -> DecayEstimate:
    """Least-squares slope of n -> −log P[Q_i = n] over the window.

    The window is a pair of fractions of the largest observed occupancy;
    empty bins and the overflow bin are left out. When the trajectory
    carries entry counts, bins entered fewer than ``min_visits`` times are
    dropped and the fit weights each bin by its entries. With time slices
    the standard error is the delete-one-slice jackknife of the slope;
    otherwise it comes from the weighted residuals.
    """
    low, high = NetworkValidator.validate_window(window)
    min_visits = config.min_bin_visits if min_visits is None else int(min_visits)
    masses = stats.histogram(channel)
    c = stats.channel_ids.index(channel)
    observed = np.flatnonzero(masses[: stats.cap + 1])
    if masses[stats.cap + 1] > 0:
        n_max = stats.cap
    elif observed.size:
        n_max = int(observed[-1])
    else:
        n_max = 0
    n_low, n_high = int(math.floor(low * n_max)), int(math.floor(high * n_max))
    n = np.arange(n_low, n_high + 1)
    keep = masses[n] > 0
    if stats.entries is not None:
        keep &= stats.entries[c, n] >= min_visits
    held_out = None
    if stats.batch_histograms is not None and stats.batch_histograms.shape[0] > 1:
        held_out = masses[None, :] - stats.batch_histograms[:, c, :]
        keep &= np.all(held_out[:, n] > 0, axis=0)
    n = n[keep]
    if n.size < 4:
        raise InsufficientDataError(
            f"channel {channel}: {n.size} usable histogram bins in [{n_low}, {n_high}], need at least 4"
        )

    weights = stats.entries[c, n].astype(float) if stats.entries is not None else np.ones(n.size)
    root_w = np.sqrt(weights)
    y = -np.log(masses[n] / stats.horizon)
    coef, cov = np.polyfit(n, y, 1, w=root_w, cov="unscaled")
    if held_out is not None:
        slices = held_out.shape[0]
        slopes = np.array([np.polyfit(n, -np.log(held_out[b, n]), 1, w=root_w)[0] for b in range(slices)])
        stderr = math.sqrt((slices - 1) / slices * float(np.sum((slopes - slopes.mean()) ** 2)))
    else:
        residuals = root_w * (y - np.polyval(coef, n))
        stderr = math.sqrt(float(cov[0, 0]) * float(residuals @ residuals) / (n.size - 2))
    return DecayEstimate(channel, float(coef[0]), stderr, n_low, n_high, int(n.size))


# Empirical generators


@dataclass(frozen=True)
class EmpiricalGenerator:
    """(A(t)/t, (Q_t − Q_0)/t) and the time-averaged allocation"""
    a: np.ndarray
    d: np.ndarray
    nu_bar: np.ndarray
    routes: np.ndarray
    transient: bool

    def allocation_feasible(self, spec: NetworkSpec, tol: float = 1e-9) -> bool:
        """nu_bar ∈ V"""
        usage = spec.incidence @ self.nu_bar
        return bool(np.all(self.nu_bar >= 0) and np.all(usage <= spec.capacities * (1 + tol)))

    def as_generator(self) -> TiltedGenerator:
        """The transient form read as a TiltedGenerator (A, ν)"""
        if not self.transient:
            raise ValidationException("generator: only the transient form carries an allocation")
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(self.nu_bar > 0, self.a / self.nu_bar, 0.0)
        return TiltedGenerator(self.a, mu, allocation=self.nu_bar)


def empirical_generator(stats: TrajectoryStats, face: Union[FacePartition, str] = "transient") -> EmpiricalGenerator:
    """Localized form on Λ ∪ Λ₁ of a face, or the transient form"""
    NetworkValidator.validate_positive(stats.horizon, "horizon")
    t = stats.horizon
    a = stats.arrivals / t
    d = (stats.final_state - stats.initial_state) / t
    nu_bar = stats.allocation_integral / t
    if isinstance(face, FacePartition):
        routes = face.costed
        return EmpiricalGenerator(np.where(routes, a, 0.0), np.where(routes, d, 0.0), nu_bar, routes, False)
    if face != "transient":
        raise ValidationException(f"face: expected a FacePartition or 'transient', got {face!r}")
    return EmpiricalGenerator(a, d, nu_bar, np.ones_like(a, dtype=bool), True)


# Importance sampling


@dataclass(frozen=True)
class OccupancyAtLeast:
    """Event {Q(t) ≥ n} for a channel (or a single route) at the horizon"""
    threshold: int
    channel: Optional[int] = None
    route: Optional[str] = None

    def __post_init__(self):
        if (self.channel is None) == (self.route is None):
            raise ValidationException("event: give exactly one of channel or route")

    def __call__(self, spec: NetworkSpec, final_state: np.ndarray) -> bool:
        if self.channel is not None:
            value = spec.incidence[spec.channel_position(self.channel)] @ final_state
        else:
            value = final_state[spec.route_position(self.route)]
        return bool(value >= self.threshold)


@dataclass(frozen=True)
class _Always:
    def __call__(self, spec: NetworkSpec, final_state: np.ndarray) -> bool:
        return True


ALWAYS = _Always()


@dataclass(frozen=True)
class ImportanceEstimate:
    """Ẽ[1_event M_t⁻¹] over independent replications"""
    log_weights: np.ndarray
    hits: np.ndarray
    estimate: float
    stderr: float
    replications: int
    effective_sample_size: float
    notes: List[str] = field(default_factory=list)

    @property
    def mean_martingale(self) -> float:
        """Sample mean of M_t⁻¹ (1 in expectation for an absolutely continuous tilt)"""
        return float(np.mean(np.exp(-self.log_weights)))

    def as_dict(self) -> Dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "replications": self.replications,
            "effective_sample_size": self.effective_sample_size,
            "notes": list(self.notes),
        }


def _replication(task):
    dynamics, reference, q0, horizon, seed, index, event = task
    rng = np.random.default_rng([seed, index])
    stats, log_m, cut = _trajectory(dynamics, q0, horizon, rng, 1, reference)
    return index, log_m, bool(event(dynamics.spec, stats.final_state)), cut


def importance_run(
    spec: NetworkSpec,
    G: TiltedGenerator,
    event=ALWAYS,
    horizon: float = 1.0,
    replications: int = 1000,
    seed: Optional[int] = None,
    x=None,
    x0=None,
    zero_tol: float = 0.0,
    workers: Optional[int] = None,
) -> ImportanceEstimate:
    """Estimate P[event] by simulating under G and reweighting with M_t⁻¹.

    log M_t accumulates h = log(q̃/q) at each jump (pre-jump state) minus
    the exact integral of the compensator K = Σ (q̃ − q). Replication k uses
    the stream default_rng([seed, k]).

    Args:
        spec: Network under its natural min-policy law
        G: Tilted generator to simulate under (localized needs ``x``)
        event: Callable (spec, final_state) -> bool, e.g. OccupancyAtLeast or ALWAYS
        horizon: Time t at which the event is read
        replications: Independent trajectories, at least 2
        seed: Base seed of the replication streams
        x: Fluid state a localized tilt is anchored at
        x0: Initial document counts
        zero_tol: Occupancies at or below this count as empty when reading the face of x
        workers: Worker processes (defaults to the threads setting)

    Returns:
        ImportanceEstimate with per-replication log M_t, the estimate, its
        standard error, the effective sample size and validity notes
    """
    NetworkValidator.validate_positive(horizon, "horizon")
    if replications < 2:
        raise ValidationException("replications: need at least 2 for a standard error")
    if not G.transient and x is None:
        raise ValidationException("x: a localized tilt needs the state it is anchored at")
    dynamics = tilt(spec, x, G, zero_tol)
    reference = natural_dynamics(spec)
    q0 = _initial_counts(spec, x0)
    seed = config.default_seed if seed is None else seed
    workers = workers or config.threads
    tasks = [(dynamics, reference, q0, horizon, seed, k, event) for k in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication, tasks, chunksize=max(1, replications // (4 * workers))))
    else:
        results = [_replication(task) for task in tasks]
    results.sort(key=lambda item: item[0])

    log_weights = np.array([r[1] for r in results])
    hits = np.array([r[2] for r in results])
    weights = np.where(hits, np.exp(-log_weights), 0.0)
    estimate = float(np.sum(weights) / replications)
    stderr = float(np.std(weights, ddof=1) / math.sqrt(replications))
    square = float(np.sum(weights**2))
    ess = float(np.sum(weights) ** 2 / square) if square > 0 else 0.0

    notes = []
    if any(r[3] for r in results):
        notes.append(
            "the tilt switches off transitions the reference law allows; the reference law is not "
            "absolutely continuous w.r.t. the tilted one and the estimate only covers paths avoiding them"
        )
    if not np.all(np.isfinite(log_weights)):
        notes.append("some likelihood ratios are not finite")
    return ImportanceEstimate(log_weights, hits, estimate, stderr, replications, ess, notes)
