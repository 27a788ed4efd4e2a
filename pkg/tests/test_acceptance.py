"""End-to-end training runs on the built-in benchmarks (slow; run with -m slow)."""
import pytest

from benchmarks import LORENZ_TRUE_PARAMS, builtin_problem
from trainer import train

pytestmark = pytest.mark.slow


def test_poisson_grid_adam_bfgs():
    """grid:0.05 with ADAM then BFGS solves Poisson to 2% relative error."""
    problem = builtin_problem("poisson2d")
    result = train(problem.default_config(), problem)
    assert result.final_loss < 1e-4
    assert result.final_rel_l2 < 2e-2


def test_burgers_quasirandom():
    """Sobol sampling reaches 5% relative error on periodic Burgers."""
    problem = builtin_problem("burgers")
    result = train(problem.default_config(), problem)
    assert result.final_rel_l2 < 5e-2


def test_pdae_system_quadrature():
    """The constrained wave system is fitted to 0.05 max error in every variable."""
    problem = builtin_problem("pdae_system")
    result = train(problem.default_config(), problem)
    for name in ("u1", "u2", "u3"):
        assert result.errors[name].max_abs < 5e-2, name


def test_lorenz_parameters_recovered():
    """BFGS recovers sigma, rho and beta within 5% from the trajectory data."""
    problem = builtin_problem("lorenz_inverse")
    result = train(problem.default_config(), problem)
    for name, truth in LORENZ_TRUE_PARAMS.items():
        assert result.estimated[name] == pytest.approx(truth, rel=5e-2), name


@pytest.mark.parametrize("problem_id", ["allencahn4d", "hjb5d"])
def test_high_dimensional_loss(problem_id):
    """2500 ADAM iterations on 100 Sobol points bring the loss under 0.05."""
    problem = builtin_problem(problem_id)
    result = train(problem.default_config(), problem)
    assert result.final_loss < 5e-2


def test_spm_adaptive_weights_reduce_boundary_residual():
    """Both adaptive schemes end with a smaller boundary residual than unit weights on SPM."""
    problem = builtin_problem("spm")
    boundary = {}
    for weights in ("fixed", "lossgrad", "minimax"):
        config = problem.default_config(schedule="adam:0.0003:5000", weights=weights, seed=0)
        boundary[weights] = train(config, problem).boundary_loss
    assert boundary["lossgrad"] < boundary["fixed"]
    assert boundary["minimax"] < boundary["fixed"]
