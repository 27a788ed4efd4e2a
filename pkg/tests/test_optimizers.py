"""Tests for ADAM, RMSProp, BFGS, L-BFGS and optimizer schedules."""
import math

import numpy as np
import pytest

from optimizers import (
    AdamState,
    FunctionObjective,
    NonFiniteGradientError,
    QuasiNewtonState,
    RmsPropState,
    adam_step,
    quasi_newton_run,
    rmsprop_step,
    run_schedule,
)
from schemas import OptimizerPhase, parse_schedule

SPD = np.array([
    [4.0, 1.0, 0.0, 0.5],
    [1.0, 3.0, 0.2, 0.0],
    [0.0, 0.2, 2.0, 0.3],
    [0.5, 0.0, 0.3, 1.0],
])


def _quadratic() -> FunctionObjective:
    return FunctionObjective(lambda x: 0.5 * x @ SPD @ x, lambda x: SPD @ x)


def _rosenbrock() -> FunctionObjective:
    def f(p):
        return (1 - p[0]) ** 2 + 100 * (p[1] - p[0] ** 2) ** 2

    def grad(p):
        return np.array([-2 * (1 - p[0]) - 400 * p[0] * (p[1] - p[0] ** 2), 200 * (p[1] - p[0] ** 2)])

    return FunctionObjective(f, grad)


def _sum_of_squares() -> FunctionObjective:
    return FunctionObjective(lambda x: float(x @ x), lambda x: 2 * x)


def test_adam_first_step():
    """Bias corrections cancel on the first step: the move is lr/(1+eps)."""
    state = AdamState(lr=0.01, n=1)
    updated = adam_step(state, np.array([0.0]), np.array([1.0]))
    assert updated[0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)
    assert state.t == 1


def test_adam_zero_gradient():
    """A zero gradient never moves the parameters."""
    state = AdamState(lr=0.1, n=3)
    params = np.array([1.0, -2.0, 0.5])
    for _ in range(20):
        params = adam_step(state, params, np.zeros(3))
    np.testing.assert_array_equal(params, [1.0, -2.0, 0.5])


def test_adam_matches_hand_rolled_trace():
    """Ten steps on theta^2 agree with a scalar re-implementation."""
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    theta, m, v = 1.0, 0.0, 0.0
    expected = []
    for t in range(1, 11):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        expected.append(theta)

    state = AdamState(lr=lr, n=1)
    params = np.array([1.0])
    for t in range(10):
        params = adam_step(state, params, 2 * params)
        assert params[0] == pytest.approx(expected[t], abs=1e-12)


@pytest.mark.parametrize("kind", ["adam", "rmsprop"])
def test_first_order_step_is_bounded(kind):
    """No coordinate moves by more than lr per step."""
    lr = 0.01
    state = AdamState(lr=lr, n=3) if kind == "adam" else RmsPropState(lr=lr, n=3)
    step = adam_step if kind == "adam" else rmsprop_step
    params = np.array([1.0, -2.0, 3.0])
    for _ in range(50):
        updated = step(state, params, 2 * params)
        assert np.all(np.abs(updated - params) <= lr * (1 + 1e-6))
        params = updated


def test_rmsprop_first_step():
    """The bias-corrected first step moves by lr·sign(g)."""
    state = RmsPropState(lr=0.005, n=2)
    updated = rmsprop_step(state, np.zeros(2), np.array([3.0, -0.2]))
    np.testing.assert_allclose(updated, [-0.005, 0.005], rtol=1e-6)


def test_non_finite_gradient_raises():
    """inf or nan gradients stop first-order steps."""
    with pytest.raises(NonFiniteGradientError):
        adam_step(AdamState(lr=0.01, n=1), np.zeros(1), np.array([np.nan]))
    with pytest.raises(NonFiniteGradientError):
        rmsprop_step(RmsPropState(lr=0.01, n=1), np.zeros(1), np.array([np.inf]))


@pytest.mark.parametrize("variant", ["bfgs", "lbfgs"])
def test_quasi_newton_quadratic(variant):
    """A convex quadratic is minimized to the gradient tolerance."""
    result = quasi_newton_run(QuasiNewtonState(variant=variant), _quadratic(), np.array([1.0, -1.0, 2.0, 0.5]), 50)
    assert result.status == "gradient_converged"
    assert result.iterations <= 20
    np.testing.assert_allclose(result.params, 0.0, atol=1e-7)


@pytest.mark.parametrize("variant", ["bfgs", "lbfgs"])
def test_quasi_newton_rosenbrock(variant):
    """Rosenbrock from (-1.2, 1) reaches f < 1e-10 within 200 iterations."""
    objective = _rosenbrock()
    result = quasi_newton_run(QuasiNewtonState(variant=variant), objective, np.array([-1.2, 1.0]), 200)
    assert objective.value(result.params) < 1e-10
    np.testing.assert_allclose(result.params, [1.0, 1.0], atol=1e-4)


def test_quasi_newton_at_stationary_point():
    """Starting at the minimum takes zero iterations."""
    result = quasi_newton_run(QuasiNewtonState(), _quadratic(), np.zeros(4), 10)
    assert result.status == "gradient_converged"
    assert result.iterations == 0


def test_quasi_newton_maxiters():
    """The iteration cap is reported as the stop reason."""
    result = quasi_newton_run(QuasiNewtonState(), _rosenbrock(), np.array([-1.2, 1.0]), 3)
    assert result.status == "maxiters"
    assert result.iterations == 3


def test_quasi_newton_line_search_failure():
    """An objective that is non-finite off the start point fails the line search."""
    objective = FunctionObjective(lambda x: 0.0 if np.all(x == 1.0) else math.inf, lambda x: np.ones_like(x))
    result = quasi_newton_run(QuasiNewtonState(), objective, np.ones(2), 10)
    assert result.status == "line_search_failed"
    np.testing.assert_array_equal(result.params, np.ones(2))


def test_bfgs_inverse_hessian_stays_positive_definite():
    """The inverse-Hessian approximation is symmetric and admits a Cholesky factor."""
    state = QuasiNewtonState(variant="bfgs")
    quasi_newton_run(state, _rosenbrock(), np.array([-1.2, 1.0]), 15)
    h = state.inverse_hessian
    np.testing.assert_allclose(h, h.T, atol=1e-14)
    np.linalg.cholesky(h)


def test_curvature_pair_skipped():
    """Pairs with non-positive s'y leave the approximation alone."""
    state = QuasiNewtonState(variant="bfgs")
    assert not state.update(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert state.inverse_hessian is None
    assert state.skipped == 1


def test_schedule_records_every_iteration():
    """ADAM for 50 then BFGS for up to 150 records at most 200 iterations."""
    phases = parse_schedule("adam:0.001:50+bfgs:150")
    result = run_schedule(phases, _quadratic(), np.array([1.0, -1.0, 2.0, 0.5]))
    assert 50 < len(result.history) <= 200
    assert [r.iteration for r in result.history] == list(range(1, len(result.history) + 1))
    assert {r.optimizer for r in result.history[:50]} == {"adam"}
    assert result.statuses[0] == "maxiters"
    assert result.statuses[1] == "gradient_converged"


def test_empty_phase_returns_initial_params():
    """A single zero-iteration phase leaves the parameters unchanged."""
    start = np.array([0.3, -0.4])
    result = run_schedule([OptimizerPhase(kind="adam", lr=0.01, maxiters=0)], _sum_of_squares(), start)
    np.testing.assert_array_equal(result.best_params, start)
    assert result.history == []


def test_empty_schedule_rejected():
    """At least one phase is required."""
    with pytest.raises(ValueError):
        run_schedule([], _sum_of_squares(), np.zeros(1))


def test_next_phase_starts_from_best_params():
    """A phase continues from the best parameters seen, not from the last ones."""
    seen = []

    def callback(record, params):
        seen.append((record.phase, params.copy()))
        # pretend the first iterate scored best
        return 0.0 if record.iteration == 1 else 1.0

    start = np.array([1.0, 1.0])
    run_schedule(parse_schedule("adam:0.1:5+adam:0.1:1"), _sum_of_squares(), start, callback)
    second_phase = [p for phase, p in seen if phase == 1]
    np.testing.assert_array_equal(second_phase[0], start)


def test_callback_score_selects_best():
    """Scores returned by the callback pick the best parameters."""
    result = run_schedule(
        parse_schedule("adam:0.1:10"), _sum_of_squares(), np.array([2.0]),
        lambda record, params: 0.0 if record.iteration == 4 else 5.0,
    )
    assert result.best_score == 0.0
    assert result.best_params[0] > result.params[0]


def test_schedule_is_deterministic():
    """Identical inputs give identical trajectories."""
    phases = parse_schedule("adam:0.01:20+lbfgs:30")
    a = run_schedule(phases, _rosenbrock(), np.array([-1.2, 1.0]))
    b = run_schedule(phases, _rosenbrock(), np.array([-1.2, 1.0]))
    assert [r.loss for r in a.history] == [r.loss for r in b.history]
    np.testing.assert_array_equal(a.params, b.params)
