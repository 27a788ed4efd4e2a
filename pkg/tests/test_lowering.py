"""Tests for lowering PDE systems into residual evaluators."""
import math

import numpy as np
import pytest
import torch

from benchmarks import LORENZ, builtin_problem
from lowering import (
    DomainViolationError,
    EmptyDataError,
    NonFiniteResidualError,
    OracleFields,
    TrialWrapper,
    WrapperConsistencyError,
    attach_additional_loss,
    eval_residual,
    lower_system,
)
from mlp_jet import MlpSpec, forward
from pde_ir import SystemValidationError, parse_system

DECAY_SPEC = """
ivars t
dvars u(t)
domain t in [0, 1]
eq Dt(u(t)) = -u(t)
bc u(0) = 1
"""


def _poisson_oracle():
    return OracleFields({"u": lambda x, y: torch.sin(math.pi * x) * torch.sin(math.pi * y) / (2 * math.pi**2)})


def test_poisson_terms(poisson_program):
    """Poisson lowers to one interior term and four boundary terms with one pin each."""
    assert len(poisson_program.interior_terms) == 1
    assert len(poisson_program.boundary_terms) == 4
    assert poisson_program.term_labels == ["eq1", "bc1", "bc2", "bc3", "bc4"]
    for term in poisson_program.boundary_terms:
        assert len(term.pinned) == 1
        assert term.dim == 1
    assert poisson_program.interior_terms[0].bounds == ((0.0, 1.0), (0.0, 1.0))


def test_pdae_terms():
    """The PDAE system lowers to 3 interior and 8 boundary terms."""
    problem = builtin_problem("pdae_system")
    program = lower_system(problem.system, problem.nets)
    assert len(program.interior_terms) == 3
    assert len(program.boundary_terms) == 8


def test_lower_rejects_invalid_system(poisson_system):
    """Validation problems surface before lowering."""
    with pytest.raises(SystemValidationError):
        lower_system(poisson_system, {"u": MlpSpec.dense([3, 4, 1])})


def test_param_estim_needs_params(poisson_system, small_net):
    """Estimating parameters of a parameter-free system is an error."""
    with pytest.raises(ValueError):
        lower_system(poisson_system, {"u": small_net}, param_estim=True)


def test_wrapper_absorbs_initial_condition():
    """psi(t) = t*N(t) + 1 satisfies u(0) = 1, so no boundary terms remain."""
    system = parse_system(DECAY_SPEC)
    wrapper = TrialWrapper.from_text("u", "t", "1", [0], system.declarations())
    program = lower_system(system, {"u": MlpSpec.dense([1, 4, 1])}, [wrapper])
    assert program.boundary_terms == ()
    assert len(program.terms) == 1


def test_wrapper_jet_is_product_rule():
    """The wrapped field's value and derivative follow psi = t*N + 1."""
    system = parse_system(DECAY_SPEC)
    net = MlpSpec.dense([1, 4, 1])
    wrapper = TrialWrapper.from_text("u", "t", "1", [0], system.declarations())
    program = lower_system(system, {"u": net}, [wrapper])
    params = program.initial_params(3)
    t = torch.tensor([[0.0], [0.25], [0.8]])
    jet = program.context.fields.jet("u", t, (0,), torch.as_tensor(params))
    n = forward(net, params, t.numpy())[:, 0]
    np.testing.assert_allclose(jet.value[:, 0].numpy(), t[:, 0].numpy() * n + 1, rtol=1e-12)

    h = 1e-6
    plus = (t[:, 0].numpy() + h) * forward(net, params, t.numpy() + h)[:, 0]
    minus = (t[:, 0].numpy() - h) * forward(net, params, t.numpy() - h)[:, 0]
    np.testing.assert_allclose(jet.first[:, 0, 0].numpy(), (plus - minus) / (2 * h), rtol=1e-6)


def test_wrapper_that_misses_its_condition():
    """A wrapper that does not pin u(0) = 1 is rejected."""
    system = parse_system(DECAY_SPEC)
    wrapper = TrialWrapper.from_text("u", "1", "0", [0], system.declarations())
    with pytest.raises(WrapperConsistencyError):
        lower_system(system, {"u": MlpSpec.dense([1, 4, 1])}, [wrapper])


def test_poisson_oracle_residuals_vanish(poisson_program, rng):
    """The analytic Poisson solution zeroes every residual."""
    program = poisson_program.with_fields(_poisson_oracle())
    interior = program.interior_terms[0]
    points = rng.uniform(size=(200, 2))
    assert np.max(np.abs(eval_residual(interior, points, np.zeros(0)))) < 1e-12
    for term in program.boundary_terms:
        residual = eval_residual(term, rng.uniform(size=(50, 1)), np.zeros(0))
        assert np.max(np.abs(residual)) < 1e-12


def test_zero_network_on_stationary_equation():
    """A zero network satisfies Dt(u) = 0 exactly."""
    system = parse_system("ivars t, x\ndvars u(t, x)\ndomain t in [0, 1]\ndomain x in [0, 1]\neq Dt(u(t, x)) = 0\nbc u(0, x) = 0\n")
    spec = MlpSpec.dense([2, 5, 1])
    program = lower_system(system, {"u": spec})
    residual = eval_residual(program.interior_terms[0], [[0.3, 0.6], [0.9, 0.1]], np.zeros(spec.param_count))
    np.testing.assert_array_equal(residual, 0.0)


def test_eval_residual_domain_violation(poisson_program):
    """Points outside a term's bounds or of the wrong width are rejected."""
    params = poisson_program.initial_params(0)
    term = poisson_program.interior_terms[0]
    with pytest.raises(DomainViolationError):
        eval_residual(term, [1.5, 0.5], params)
    with pytest.raises(DomainViolationError):
        eval_residual(term, [0.5], params)


def test_eval_residual_names_non_finite_node():
    """log of a negative number is reported with the offending expression."""
    system = parse_system("ivars x\ndvars u(x)\ndomain x in [0, 1]\neq u(x) = log(x - 2)\nbc u(0) = 0\n")
    spec = MlpSpec.dense([1, 2, 1])
    program = lower_system(system, {"u": spec})
    with pytest.raises(NonFiniteResidualError) as info:
        eval_residual(program.interior_terms[0], [0.5], np.zeros(spec.param_count))
    assert "log" in info.value.node


def test_residuals_are_pure(poisson_program, rng):
    """Repeated evaluation gives bitwise identical residuals."""
    params = poisson_program.initial_params(4)
    points = rng.uniform(size=(20, 2))
    term = poisson_program.interior_terms[0]
    np.testing.assert_array_equal(eval_residual(term, points, params), eval_residual(term, points, params))


def test_param_slice_only_moves_equations_that_use_it(heat_program, rng):
    """Perturbing k changes the heat equation residual and no boundary residual."""
    params = heat_program.initial_params(2)
    assert heat_program.layout.param_names == ("k",)
    assert params[-1] == 1.0
    perturbed = params.copy()
    perturbed[-1] = 1.5
    interior = heat_program.interior_terms[0]
    points = rng.uniform(size=(10, 2))
    assert not np.allclose(eval_residual(interior, points, params), eval_residual(interior, points, perturbed))
    for term in heat_program.boundary_terms:
        free = rng.uniform(size=(10, term.dim))
        np.testing.assert_array_equal(eval_residual(term, free, params), eval_residual(term, free, perturbed))


def test_zero_dimensional_boundary_terms():
    """Lorenz initial conditions pin every coordinate."""
    program = lower_system(parse_system(LORENZ), {n: MlpSpec.dense([1, 4, 1]) for n in ("x", "y", "z")})
    assert len(program.boundary_terms) == 3
    for term in program.boundary_terms:
        assert term.dim == 0
        assert eval_residual(term, [], program.initial_params(0)).shape == (1,)


def test_additional_loss_against_own_output(poisson_program, rng):
    """Data generated from the network itself gives zero misfit."""
    params = poisson_program.initial_params(1)
    points = rng.uniform(size=(15, 2))
    values = forward(poisson_program.layout.spec("u"), params, points)[:, 0]
    program = attach_additional_loss(poisson_program, {"u": (points, values)})
    assert float(program.additional_value(torch.as_tensor(params))) == pytest.approx(0.0, abs=1e-28)


def test_additional_loss_single_point():
    """One point off by 2 with weight 1 costs 4."""
    system = parse_system(DECAY_SPEC)
    spec = MlpSpec.dense([1, 3, 1])
    program = lower_system(system, {"u": spec})
    params = np.zeros(spec.param_count)
    program = attach_additional_loss(program, {"u": ([[0.5]], [2.0])}, weight=1.0)
    assert float(program.additional_value(torch.as_tensor(params))) == pytest.approx(4.0)


def test_additional_loss_rejects_bad_data(poisson_program):
    """Empty data sets and points outside the domain are rejected."""
    with pytest.raises(EmptyDataError):
        attach_additional_loss(poisson_program, {"u": (np.zeros((0, 2)), np.zeros(0))})
    with pytest.raises(DomainViolationError):
        attach_additional_loss(poisson_program, {"u": ([[2.0, 0.5]], [1.0])})


def test_lorenz_data_loss_is_mean_squared_error():
    """The Lorenz data loss is the plain MSE of the initial networks against the trajectory."""
    problem = builtin_problem("lorenz_inverse")
    program = attach_additional_loss(
        lower_system(problem.system, problem.nets, param_estim=True), problem.data(), problem.data_weight
    )
    params = program.initial_params(0)
    data = problem.data()
    expected = 0.0
    for name, (points, values) in data.items():
        predicted = forward(problem.nets[name], params[program.layout.offsets[name]], points)[:, 0]
        expected += np.mean((predicted - values) ** 2)
    assert len(data["x"][0]) == 101
    assert float(program.additional_value(torch.as_tensor(params))) == pytest.approx(expected, rel=1e-12)
