"""Tests for the simulator, decay estimation and importance sampling"""

import math
from pathlib import Path

import numpy as np
import pytest

from src.cli import load_experiment
from src.config import config
from src.model import face_partition, fig4_network, isolate_channel
from src.paths import ps_decay_rate
from src.rate import TiltedGenerator, stay_cost_transient
from src.schemas import Policy
from src.simulate import (
    ALWAYS,
    Dynamics,
    OccupancyAtLeast,
    TrajectoryStats,
    empirical_generator,
    estimate_decay_rate,
    importance_run,
    simulate,
    simulate_dynamics,
    tilt,
)
from src.validators import InsufficientDataError, ValidationException

from conftest import single_route_network


CONFIGS = Path(__file__).parent / "configs"


def stats_with_histogram(masses, horizon=1.0, cap=30, entries=None, batches=None):
    hist = np.zeros((2, cap + 2))
    hist[0, : len(masses)] = masses
    hist[1, : len(masses)] = masses
    entry_counts = None
    if entries is not None:
        entry_counts = np.zeros((2, cap + 2), dtype=np.int64)
        entry_counts[:, : len(entries)] = entries
    batch_hist = None
    if batches is not None:
        batch_hist = np.zeros((len(batches), 2, cap + 2))
        for b, part in enumerate(batches):
            batch_hist[b, :, : len(part)] = part
        hist = batch_hist.sum(axis=0)
    return TrajectoryStats(
        channel_ids=(1, 2),
        route_keys=((1, 2),),
        horizon=horizon,
        event_count=0,
        arrivals=np.zeros(1, dtype=np.int64),
        departures=np.zeros(1, dtype=np.int64),
        histograms=hist,
        allocation_integral=np.zeros(1),
        initial_state=np.zeros(1, dtype=np.int64),
        final_state=np.zeros(1, dtype=np.int64),
        max_occupancy=np.array([len(masses) - 1] * 2, dtype=np.int64),
        entries=entry_counts,
        batch_histograms=batch_hist,
    )


# Simulation


def test_simulation_is_deterministic_given_the_seed(fig4):
    first = simulate(fig4, horizon=50.0, seed=11)
    second = simulate(fig4, horizon=50.0, seed=11)
    other = simulate(fig4, horizon=50.0, seed=12)
    np.testing.assert_array_equal(first.histograms, second.histograms)
    assert first.event_count == second.event_count
    assert not np.array_equal(first.histograms, other.histograms)


def test_histograms_carry_the_whole_horizon(fig4):
    stats = simulate(fig4, horizon=200.0, seed=3)
    np.testing.assert_allclose(stats.histograms.sum(axis=1), 200.0, rtol=1e-9)
    assert stats.arrivals.sum() + stats.departures.sum() == stats.event_count
    np.testing.assert_array_equal(stats.final_state, stats.arrivals - stats.departures)
    # every jump moves the two channels of its route
    assert stats.entries.sum() == 2 * stats.event_count
    assert stats.batch_histograms.shape[0] == config.decay_batches
    np.testing.assert_allclose(stats.batch_histograms.sum(axis=2), 200.0 / config.decay_batches, rtol=1e-9)


def test_without_arrivals_the_network_drains_and_stays_empty():
    spec = single_route_network()
    dynamics = Dynamics(spec, np.zeros(1), spec.service_rates, np.zeros(1, dtype=bool))
    stats = simulate_dynamics(dynamics, x0={"1-2": 3}, horizon=100.0, seed=1)
    assert stats.final_state.tolist() == [0]
    assert stats.departures.tolist() == [3]
    assert stats.event_count == 3
    assert stats.histogram(1)[0] > 90.0


def test_overflow_bin_collects_large_occupancies():
    spec = single_route_network()
    dynamics = Dynamics(spec, np.zeros(1), spec.service_rates, np.zeros(1, dtype=bool))
    stats = simulate_dynamics(dynamics, x0={"1-2": 5}, horizon=10.0, seed=2, histogram_cap=2)
    assert stats.cap == 2
    assert stats.histogram(1)[3] > 0
    assert any(row["n"] == "overflow" for row in stats.histogram_rows())


def test_simulator_rejects_bad_inputs(fig4):
    with pytest.raises(ValidationException, match="horizon"):
        simulate(fig4, horizon=0.0)
    with pytest.raises(ValidationException, match="integers"):
        simulate(fig4, x0=[0.5, 0.0, 0.0])


def test_processor_sharing_needs_an_isolated_channel(fig4):
    with pytest.raises(ValidationException, match="isolate the channel"):
        simulate(fig4, policy=Policy.PROCESSOR_SHARING, anchor=2, horizon=1.0)
    stats = simulate(isolate_channel(fig4, 2), policy=Policy.PROCESSOR_SHARING, anchor=2, horizon=100.0, seed=4)
    assert stats.route_keys == ((1, 2), (2, 3))
    assert stats.event_count > 0


def test_summary_and_csv_outputs(fig4, tmp_path):
    stats = simulate(fig4, horizon=20.0, seed=5)
    summary = stats.summary()
    assert set(summary["arrivals"]) == {"1-2", "1-3", "2-3"}
    assert summary["histogram_cap"] == stats.cap
    path = stats.to_csv(tmp_path / "histogram.csv")
    assert path.read_text().splitlines()[0] == "channel,n,time_mass"


def test_time_averaged_allocation_is_feasible(fig4):
    stats = simulate(fig4, horizon=200.0, seed=6)
    assert empirical_generator(stats).allocation_feasible(fig4)


# Decay estimation


def test_geometric_histogram_gives_its_ratio():
    rho = 0.6
    masses = [(1 - rho) * rho**n for n in range(21)]
    estimate = estimate_decay_rate(stats_with_histogram(masses), 1)
    assert estimate.rate == pytest.approx(-math.log(rho), rel=1e-9)
    assert (estimate.n_low, estimate.n_high, estimate.bins) == (10, 19, 10)


def test_custom_window():
    masses = [0.5**n for n in range(41)]
    estimate = estimate_decay_rate(stats_with_histogram(masses, horizon=2.0, cap=50), 2, window=(0.25, 0.5))
    assert (estimate.n_low, estimate.n_high) == (10, 20)
    assert estimate.rate == pytest.approx(math.log(2.0), rel=1e-9)


def test_all_mass_at_zero_is_insufficient():
    with pytest.raises(InsufficientDataError):
        estimate_decay_rate(stats_with_histogram([1.0]), 1)


def test_window_must_be_ordered():
    with pytest.raises(ValidationException):
        estimate_decay_rate(stats_with_histogram([0.5, 0.25, 0.125]), 1, window=(0.9, 0.1))


def test_rarely_entered_bins_are_left_out():
    masses = np.array([0.5**n for n in range(21)])
    masses[16:] *= 5.0
    entries = [2 ** (20 - n) for n in range(21)]
    estimate = estimate_decay_rate(stats_with_histogram(masses, entries=entries), 1)
    # bins 10..15 have at least 32 entries, 16..19 at most 16
    assert estimate.bins == 6
    assert estimate.rate == pytest.approx(math.log(2.0), rel=1e-9)
    with pytest.raises(InsufficientDataError):
        estimate_decay_rate(stats_with_histogram(masses, entries=entries), 1, min_visits=200)


def test_entry_weights_follow_the_well_visited_bins():
    masses = np.array([0.5**n for n in range(21)])
    masses[14] *= 1.5
    entries = [10_000 if n != 14 else 30 for n in range(21)]
    weighted = estimate_decay_rate(stats_with_histogram(masses, entries=entries), 1, window=(0.5, 0.8))
    plain = estimate_decay_rate(stats_with_histogram(masses), 1, window=(0.5, 0.8))
    assert abs(weighted.rate - math.log(2.0)) < abs(plain.rate - math.log(2.0))


def test_jackknife_error_vanishes_for_identical_slices():
    part = [0.25 * 0.6**n for n in range(21)]
    entries = [1000] * 21
    estimate = estimate_decay_rate(stats_with_histogram(part, entries=entries, batches=[part] * 4), 1)
    assert estimate.rate == pytest.approx(-math.log(0.6), rel=1e-9)
    assert estimate.stderr < 1e-9


def test_jackknife_error_reflects_slice_disagreement():
    steep = [0.6**n for n in range(21)]
    flat = [0.7**n for n in range(21)]
    entries = [1000] * 21
    estimate = estimate_decay_rate(
        stats_with_histogram(steep, entries=entries, batches=[steep, flat, steep, flat]), 1
    )
    assert -math.log(0.7) < estimate.rate < -math.log(0.6)
    assert estimate.stderr > 1e-3


def test_bins_held_by_a_single_slice_are_left_out():
    part = [0.6**n for n in range(21)]
    lonely = list(part)
    lonely[12] = 0.0
    entries = [1000] * 21
    stats = stats_with_histogram(part, entries=entries, batches=[part, lonely, lonely])
    # bin 12 only has mass in the first slice
    assert estimate_decay_rate(stats, 1).bins == 9


# Empirical generators


def test_empirical_generator_of_a_toy_trajectory():
    stats = TrajectoryStats(
        channel_ids=(1, 2),
        route_keys=((1, 2),),
        horizon=1.0,
        event_count=4,
        arrivals=np.array([3]),
        departures=np.array([1]),
        histograms=np.zeros((2, 4)),
        allocation_integral=np.array([1.5]),
        initial_state=np.array([0]),
        final_state=np.array([2]),
        max_occupancy=np.array([3, 3]),
    )
    transient = empirical_generator(stats)
    assert transient.a.tolist() == [3.0]
    assert transient.d.tolist() == [2.0]
    assert transient.nu_bar.tolist() == [1.5]
    assert transient.as_generator().mu_tilde.tolist() == [2.0]

    spec = single_route_network()
    localized = empirical_generator(stats, face_partition(spec, [1.0]))
    assert not localized.transient
    assert localized.d.tolist() == [2.0]
    with pytest.raises(ValidationException):
        localized.as_generator()


# Importance sampling


def test_untilted_dynamics_have_unit_weights(fig4):
    G = TiltedGenerator(fig4.arrival_rates, fig4.service_rates, allocation=np.full(3, 0.1))
    result = importance_run(fig4, G, event=ALWAYS, horizon=5.0, replications=20, seed=1)
    np.testing.assert_array_equal(result.log_weights, 0.0)
    assert result.estimate == 1.0
    assert result.effective_sample_size == pytest.approx(20.0)
    assert result.notes == []


def test_localized_tilt_with_jammed_arrivals_is_rejected(fig4):
    G = TiltedGenerator.natural(fig4, {"1-2": 1.0})
    with pytest.raises(ValidationException, match="jammed route"):
        importance_run(fig4, G, x={"1-2": 1.0}, replications=10)


def test_localized_tilt_needs_its_state(single_route):
    G = TiltedGenerator.from_drift(single_route, [1.0], [1.0])
    with pytest.raises(ValidationException, match="needs the state"):
        importance_run(single_route, G, replications=10)


def test_inverse_martingale_has_unit_mean(single_route):
    G = TiltedGenerator.from_drift(single_route, [1.0], [1.0])
    result = importance_run(single_route, G, x=[1.0], horizon=1.0, replications=2000, seed=3)
    assert abs(result.estimate - 1.0) < 5 * result.stderr
    assert result.mean_martingale == pytest.approx(result.estimate)


def test_transient_tilt_martingale():
    spec = fig4_network(0.8)
    stay = stay_cost_transient(spec)
    G = TiltedGenerator.from_allocation(spec, spec.arrival_rates, stay.allocation.nu)
    result = importance_run(spec, G, horizon=1.0, replications=2000, seed=4)
    assert result.stderr > 0
    assert abs(result.estimate - 1.0) < 5 * result.stderr


def test_event_needs_one_target():
    with pytest.raises(ValidationException):
        OccupancyAtLeast(3)
    with pytest.raises(ValidationException):
        OccupancyAtLeast(3, channel=1, route="1-2")


@pytest.mark.slow
def test_mm1_configuration_recovers_log_2():
    experiment = load_experiment(CONFIGS / "mm1.json")
    block = experiment.simulate
    stats = simulate(experiment.network, horizon=block.horizon, seed=block.seed, histogram_cap=block.histogram_cap)
    fractions = stats.histogram(1) / stats.horizon
    for n in range(6):
        assert fractions[n] == pytest.approx(0.5 * 0.5**n, abs=0.01)
    estimate = estimate_decay_rate(stats, 1, block.window)
    assert 0.0 < estimate.stderr < 0.1
    assert abs(estimate.rate - math.log(2.0)) < 3 * estimate.stderr


@pytest.mark.slow
def test_isolated_ps_channel_decays_at_the_ps_rate():
    spec = fig4_network(0.3)
    stats = simulate(isolate_channel(spec, 2), Policy.PROCESSOR_SHARING, horizon=2e5, seed=21, anchor=2)
    estimate = estimate_decay_rate(stats, 2, window=(0.2, 0.7))
    assert estimate.stderr < 0.02
    assert estimate.rate == pytest.approx(ps_decay_rate(spec, 2), abs=0.03)


@pytest.mark.slow
def test_tilted_network_follows_its_fluid_limit():
    spec = fig4_network(0.3)
    nu = np.array([1.2, 0.35, 0.5])
    G = TiltedGenerator.from_allocation(spec, spec.arrival_rates, nu)
    horizon = 1e5
    stats = simulate_dynamics(tilt(spec, None, G), horizon=horizon, seed=17)
    observed = empirical_generator(stats)
    assert np.max(np.abs(observed.nu_bar - nu)) < 0.05
    # arrival counts are Poisson(λ t)
    bound = 3.0 * np.sqrt(spec.arrival_rates / horizon)
    assert np.all(np.abs(observed.a - spec.arrival_rates) < bound)


# mild transient tilts of (λ, μ) keep log M_t concentrated at t = 100
MARTINGALE_TILTS = [
    ([1.02, 1.0, 1.0], [1.0, 1.0, 1.0]),
    ([1.0, 1.0, 1.0], [0.98, 1.0, 1.02]),
    ([0.98, 1.02, 1.0], [1.0, 0.98, 1.0]),
    ([1.02, 1.02, 1.02], [0.98, 0.98, 0.98]),
    ([1.0, 1.0, 0.98], [1.02, 1.0, 1.0]),
]


@pytest.mark.slow
@pytest.mark.parametrize("lam_scale, mu_scale", MARTINGALE_TILTS)
def test_martingale_has_unit_mean_at_t100(lam_scale, mu_scale):
    spec = fig4_network(0.3)
    lam = spec.arrival_rates * np.array(lam_scale)
    mu = spec.service_rates * np.array(mu_scale)
    G = TiltedGenerator(lam, mu, allocation=lam / mu)
    result = importance_run(spec, G, event=ALWAYS, horizon=100.0, replications=10_000, seed=2004)
    assert result.notes == []
    assert result.stderr > 0
    assert abs(result.estimate - 1.0) < 3 * result.stderr



@pytest.mark.slow
def test_importance_sampling_agrees_with_plain_monte_carlo():
    spec = single_route_network(lam=1.0, mu=1.0, c1=2.0, c2=3.0)
    event = OccupancyAtLeast(5, channel=1)
    G = TiltedGenerator.from_drift(spec, [1.0], [1.0])
    tilted = importance_run(spec, G, event=event, x=[1.0], horizon=5.0, replications=4000, seed=8)

    natural = TiltedGenerator(spec.arrival_rates, spec.service_rates, allocation=np.array([2.0]))
    plain = importance_run(spec, natural, event=event, horizon=5.0, replications=20000, seed=9)
    spread = math.hypot(tilted.stderr, plain.stderr)
    assert tilted.estimate > 0
    assert abs(tilted.estimate - plain.estimate) < 4 * spread


@pytest.mark.slow
def test_parallel_replications_match_serial(single_route):
    G = TiltedGenerator.from_drift(single_route, [1.0], [1.0])
    serial = importance_run(single_route, G, x=[1.0], replications=200, seed=5, workers=1)
    parallel = importance_run(single_route, G, x=[1.0], replications=200, seed=5, workers=2)
    np.testing.assert_array_equal(serial.log_weights, parallel.log_weights)
