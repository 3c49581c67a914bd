"""Tests for path costs and the variational decay estimate"""

import math

import numpy as np
import pytest

from src.model import fig4_network
from src.paths import (
    OptimizeOptions,
    _PathCodec,
    PiecewiseLinearPath,
    natural_fluid_path,
    optimize_tail_decay,
    path_cost,
    path_cost_report,
    ps_consistency_check,
    ps_decay_rate,
)
from src.rate import local_rate, mm1_cost, stay_cost_transient
from src.schemas import NetworkSpec
from src.validators import ConvergenceError, ModeMismatchError, NotErgodicError, ValidationException

from conftest import single_route_network

FAST = dict(multistarts=3, max_iterations=150, seed=5)


def straight(x_a, x_b, duration):
    return PiecewiseLinearPath(np.array([0.0, duration]), np.vstack([x_a, x_b]))


# Paths


def test_path_validation():
    with pytest.raises(ValidationException, match="strictly increasing"):
        PiecewiseLinearPath(np.array([0.0, 1.0, 1.0]), np.zeros((3, 1)))
    with pytest.raises(ValidationException, match=">= 0"):
        PiecewiseLinearPath(np.array([0.0, 1.0]), np.array([[0.0], [-1.0]]))
    with pytest.raises(ValidationException, match="t = 0"):
        PiecewiseLinearPath(np.array([0.5, 1.0]), np.zeros((2, 1)))


def test_state_at_and_refine():
    path = straight([0.0, 2.0], [2.0, 0.0], 2.0)
    np.testing.assert_allclose(path.state_at(0.5), [0.5, 1.5])
    refined = path.refine(0)
    assert refined.n_segments == 2
    np.testing.assert_allclose(refined.states[1], [1.0, 1.0])
    assert refined.times.tolist() == [0.0, 1.0, 2.0]


# Path cost


def test_constant_interior_path(fig4):
    x = np.array([2.0, 1.0, 1.0])
    path = PiecewiseLinearPath.constant(x, 3.0)
    assert path_cost(fig4, path) == pytest.approx(3.0 * local_rate(fig4, x, np.zeros(3)), rel=1e-12)


def test_constant_path_at_origin_is_free(fig4):
    assert path_cost(fig4, PiecewiseLinearPath.constant(np.zeros(3), 10.0)) == 0.0


def test_constant_path_at_origin_in_general_mode():
    spec = fig4_network(0.8)
    path = PiecewiseLinearPath.constant(np.zeros(3), 2.0)
    assert path_cost(spec, path, mode="general") == pytest.approx(2.0 * stay_cost_transient(spec).value)
    with pytest.raises(ModeMismatchError):
        path_cost(spec, path)


@pytest.mark.parametrize("D", [0.25, 1.0, 3.0])
def test_single_route_straight_climb(D):
    spec = single_route_network(lam=1.0, mu=1.0, c1=2.0, c2=3.0)
    path = straight([0.0], [1.0], 1.0 / D)
    assert path_cost(spec, path) == pytest.approx(mm1_cost(D, 1.0, 2.0) / D, rel=1e-12)


def test_path_cost_is_additive_and_ignores_collinear_breakpoints(fig4):
    first = straight([1.0, 1.0, 1.0], [2.0, 1.5, 1.2], 0.7)
    second = straight([2.0, 1.5, 1.2], [2.5, 1.0, 1.4], 1.3)
    whole = first.concatenate(second)
    assert path_cost(fig4, whole) == pytest.approx(path_cost(fig4, first) + path_cost(fig4, second), abs=1e-12)
    assert path_cost(fig4, whole.refine(0).refine(2)) == pytest.approx(path_cost(fig4, whole), abs=1e-9)


def test_path_cost_report_lists_segments(fig4):
    path = straight([1.0, 1.0, 1.0], [2.0, 1.5, 1.2], 0.7).concatenate(
        straight([2.0, 1.5, 1.2], [2.5, 1.0, 1.4], 1.3)
    )
    report = path_cost_report(fig4, path)
    assert len(report.segment_costs) == 2
    assert report.total == pytest.approx(sum(report.segment_costs))
    assert report.refinement_delta < 1e-6


def test_natural_fluid_path_costs_almost_nothing(fig4):
    path = natural_fluid_path(fig4, [2.0, 1.0, 1.0], horizon=0.5, steps=200)
    report = path_cost_report(fig4, path)
    assert report.total < 1e-4
    coarse = path_cost(fig4, natural_fluid_path(fig4, [2.0, 1.0, 1.0], horizon=0.5, steps=20))
    assert report.total < coarse


def test_natural_fluid_path_stops_on_the_boundary():
    spec = single_route_network(lam=1.0, mu=1.0, c1=2.0, c2=3.0)
    path = natural_fluid_path(spec, [1.0], horizon=5.0, steps=10)
    assert path.states[-1, 0] == 0.0
    assert path.horizon == pytest.approx(1.0)
    assert path_cost(spec, path) == pytest.approx(0.0, abs=1e-12)


def test_path_state_count_must_match_routes(fig4):
    with pytest.raises(ValidationException, match="route entries"):
        path_cost(fig4, straight([0.0], [1.0], 1.0))


# PS reference


def test_ps_decay_rate_values():
    assert ps_decay_rate(fig4_network(0.3), 2) == pytest.approx(-math.log(0.75))
    assert ps_decay_rate(fig4_network(0.3), 3) == pytest.approx(-math.log(0.8))
    assert ps_decay_rate(fig4_network(0.3), 1) == pytest.approx(-math.log(1.3 / 3))


def test_ps_decay_rate_at_critical_load():
    with pytest.raises(NotErgodicError):
        ps_decay_rate(single_route_network(lam=2.0, mu=1.0, c1=2.0, c2=3.0), 1)


def test_ps_consistency_on_a_single_route():
    spec = single_route_network()
    path = straight([0.0], [1.0], 1.0)
    assert ps_consistency_check(spec, path, 1).consistent
    report = ps_consistency_check(spec, path, 2)
    assert not report.consistent
    assert report.violating_route == "1-2"
    assert 0.0 < report.first_violation_time < 1.0


# Variational decay estimate


def test_optimizer_recovers_the_mm1_decay():
    spec = single_route_network(lam=1.0, mu=1.0, c1=2.0, c2=3.0)
    result = optimize_tail_decay(spec, 1, OptimizeOptions(segments=2, **FAST))
    assert result.value == pytest.approx(math.log(2.0), abs=1e-3)
    assert result.optimal_path.states[-1].sum() == pytest.approx(1.0)
    assert result.value == pytest.approx(path_cost(spec, result.optimal_path), abs=1e-9)
    assert ps_consistency_check(spec, result, 1).consistent


def test_optimizer_near_critical_load():
    spec = single_route_network(lam=1.98, mu=1.0, c1=2.0, c2=3.0)
    result = optimize_tail_decay(spec, 1, OptimizeOptions(segments=1, **FAST))
    assert result.value == pytest.approx(math.log(2.0 / 1.98), abs=1e-3)


def test_optimizer_rejects_non_ergodic_networks():
    with pytest.raises(NotErgodicError):
        optimize_tail_decay(fig4_network(0.6), 3, OptimizeOptions(**FAST))


def test_optimizer_value_does_not_increase_with_segments():
    spec = fig4_network(0.3)
    one = optimize_tail_decay(spec, 3, OptimizeOptions(segments=1, **FAST))
    three = optimize_tail_decay(spec, 3, OptimizeOptions(segments=3, **FAST))
    assert 0.0 <= three.value <= one.value + 1e-12
    stages = three.diagnostics.stage_values
    assert all(b <= a for a, b in zip(stages, stages[1:]))
    assert stages[0] == pytest.approx(one.value)
    assert three.value <= min(three.diagnostics.start_values) + 1e-12


def test_optimizer_is_deterministic():
    spec = fig4_network(0.3)
    first = optimize_tail_decay(spec, 2, OptimizeOptions(segments=2, **FAST))
    second = optimize_tail_decay(spec, 2, OptimizeOptions(segments=2, **FAST))
    assert first.value == second.value
    np.testing.assert_array_equal(first.optimal_path.states, second.optimal_path.states)
    assert first.status in ("converged", "not_converged")
    assert len(first.diagnostics.bottlenecks) == first.optimal_path.n_segments


def test_channel_without_routes_is_rejected():
    spec = NetworkSpec.model_validate(
        {
            "channels": [{"id": k, "capacity": 2.0} for k in (1, 2, 3)],
            "routes": [{"i": 1, "j": 2, "lambda": 1.0, "mu": 1.0}],
        }
    )
    with pytest.raises(ValidationException, match="carries no route"):
        optimize_tail_decay(spec, 3, OptimizeOptions(segments=1, **FAST))
    with pytest.raises(ValidationException, match="carries no route"):
        ps_decay_rate(spec, 3)


def test_optimizer_without_admissible_starts_raises(monkeypatch):
    monkeypatch.setattr(_PathCodec, "decode", lambda self, z: None)
    with pytest.raises(ConvergenceError, match="admissible path"):
        optimize_tail_decay(single_route_network(), 1, OptimizeOptions(segments=1, **FAST))


@pytest.mark.slow
def test_optimizer_full_budget_on_fig4():
    spec = fig4_network(0.3)
    result = optimize_tail_decay(spec, 3, OptimizeOptions(segments=4, multistarts=16, seed=3))
    assert 0.0 < result.value < result.diagnostics.stage_values[0] + 1e-12
    assert result.optimal_path.states[-1] @ spec.incidence[2] == pytest.approx(1.0)
    assert result.optimal_path.n_segments <= 4


@pytest.mark.slow
def test_optimizer_mm1_with_parallel_starts():
    spec = single_route_network(lam=1.0, mu=1.0, c1=2.0, c2=3.0)
    serial = optimize_tail_decay(spec, 1, OptimizeOptions(segments=2, multistarts=4, seed=1))
    parallel = optimize_tail_decay(spec, 1, OptimizeOptions(segments=2, multistarts=4, seed=1, workers=2))
    assert parallel.value == serial.value
    assert serial.value == pytest.approx(math.log(2.0), abs=1e-3)
