"""Tests for dense networks, input jets and parameter gradients."""
import math

import numpy as np
import pytest
import torch

from benchmarks import PROBLEM_IDS, builtin_problem
from mlp_jet import (
    DenseLayer,
    DimensionMismatchError,
    FlatLayout,
    MlpSpec,
    NonFiniteLossError,
    forward,
    init_params,
    input_jet,
    load_params_text,
    loss_param_gradient,
    network_forward,
    network_jet,
    params_from_bytes,
    params_to_bytes,
    save_params_text,
    value_and_gradient,
)


def test_param_count():
    """2 -> 16 -> 16 -> 1 has 337 parameters."""
    spec = MlpSpec.dense([2, 16, 16, 1])
    assert spec.param_count == 337
    assert init_params(spec, 0).shape == (337,)


def test_init_is_deterministic():
    """Same seed, same vector; different seed, different vector."""
    spec = MlpSpec.dense([2, 16, 16, 1])
    np.testing.assert_array_equal(init_params(spec, 7), init_params(spec, 7))
    assert not np.array_equal(init_params(spec, 7), init_params(spec, 8))


def test_init_glorot_bound_and_zero_bias():
    """First-layer weights lie within sqrt(6/18) and biases start at zero."""
    spec = MlpSpec.dense([2, 16, 1])
    params = init_params(spec, 3)
    weights, biases = params[:32], params[32:48]
    assert np.all(np.abs(weights) <= math.sqrt(6 / 18))
    np.testing.assert_array_equal(biases, 0.0)


def test_layers_must_chain():
    """Mismatched consecutive dims are rejected."""
    with pytest.raises(ValueError):
        MlpSpec((DenseLayer(2, 3), DenseLayer(4, 1)))


def test_forward_affine():
    """W=[[2]], b=[1], x=[3] gives 7."""
    spec = MlpSpec((DenseLayer(1, 1, "identity"),))
    np.testing.assert_allclose(forward(spec, [2.0, 1.0], [3.0]), [7.0])


def test_forward_sigmoid_at_zero():
    """A sigmoid layer at z=0 gives one half."""
    spec = MlpSpec((DenseLayer(1, 1, "sigmoid"),))
    np.testing.assert_allclose(forward(spec, [1.0, 0.0], [0.0]), [0.5])


def test_forward_zero_params():
    """All-zero params with an identity output layer give 0."""
    spec = MlpSpec.dense([3, 5, 1])
    out = forward(spec, np.zeros(spec.param_count), np.array([[0.3, -1.0, 2.0], [4.0, 5.0, 6.0]]))
    np.testing.assert_array_equal(out, 0.0)


def test_forward_dimension_mismatch():
    """Wrong input width raises."""
    spec = MlpSpec.dense([2, 4, 1])
    with pytest.raises(DimensionMismatchError):
        forward(spec, init_params(spec, 0), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatchError):
        forward(spec, np.zeros(3), [1.0, 2.0])


def test_sigmoid_jet_at_zero():
    """sigma at 0: value 0.5, first 0.25, second 0."""
    spec = MlpSpec((DenseLayer(1, 1, "sigmoid"),))
    jet = input_jet(spec, [1.0, 0.0], [0.0], second_order_axes=[0])
    assert jet.value.item() == pytest.approx(0.5)
    assert jet.first.item() == pytest.approx(0.25)
    assert jet.second[0].item() == pytest.approx(0.0, abs=1e-15)


def test_affine_network_has_no_curvature():
    """Identity activations give exactly zero second derivatives."""
    spec = MlpSpec.dense([2, 4, 1], activation="identity")
    jet = input_jet(spec, init_params(spec, 1), np.random.default_rng(0).uniform(size=(5, 2)), [0, 1])
    assert torch.all(jet.second[0] == 0)
    assert torch.all(jet.second[1] == 0)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "gelu"])
def test_jet_matches_finite_differences(activation):
    """First and pure second derivatives agree with central differences."""
    spec = MlpSpec.dense([2, 8, 1], activation=activation)
    params = init_params(spec, 11)
    x = np.array([[0.3, -0.7], [1.1, 0.4]])
    jet = input_jet(spec, params, x, [0, 1])
    h1, h2 = 1e-6, 1e-4
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = 1.0
        plus1, minus1 = forward(spec, params, x + h1 * e), forward(spec, params, x - h1 * e)
        first_fd = (plus1 - minus1)[:, 0] / (2 * h1)
        np.testing.assert_allclose(jet.first[:, axis, 0].numpy(), first_fd, rtol=1e-5, atol=1e-9)
        plus2, minus2, center = forward(spec, params, x + h2 * e), forward(spec, params, x - h2 * e), forward(spec, params, x)
        second_fd = (plus2 - 2 * center + minus2)[:, 0] / h2**2
        np.testing.assert_allclose(jet.second[axis][:, 0].numpy(), second_fd, rtol=1e-3, atol=1e-6)


@pytest.mark.parametrize("seed", [0, 7])
@pytest.mark.parametrize("problem_id", PROBLEM_IDS)
def test_builtin_network_jets_match_finite_differences(problem_id, seed):
    """Every built-in network's input derivatives agree with central differences."""
    rng = np.random.default_rng(seed)
    for name, spec in builtin_problem(problem_id).nets.items():
        params = init_params(spec, seed)
        x = rng.uniform(-1.0, 1.0, size=(3, spec.in_dim))
        jet = input_jet(spec, params, x, range(spec.in_dim))
        center = forward(spec, params, x)
        h1, h2 = 1e-6, 1e-4
        for axis in range(spec.in_dim):
            e = np.zeros(spec.in_dim)
            e[axis] = 1.0
            first_fd = (forward(spec, params, x + h1 * e) - forward(spec, params, x - h1 * e)) / (2 * h1)
            np.testing.assert_allclose(jet.first[:, axis, :].numpy(), first_fd, rtol=1e-5, atol=1e-8, err_msg=name)
            second_fd = (forward(spec, params, x + h2 * e) - 2 * center + forward(spec, params, x - h2 * e)) / h2**2
            np.testing.assert_allclose(jet.second[axis].numpy(), second_fd, rtol=1e-3, atol=1e-5, err_msg=name)


def test_jet_axes_validated():
    """Second-order axes must be input axes."""
    spec = MlpSpec.dense([2, 3, 1])
    with pytest.raises(DimensionMismatchError):
        input_jet(spec, init_params(spec, 0), [0.1, 0.2], [2])


def test_affine_loss_gradient():
    """loss=(wx+b-c)^2 at w=1, b=0, x=2, c=1 has gradient (4, 2)."""
    spec = MlpSpec((DenseLayer(1, 1, "identity"),))
    x = torch.tensor([[2.0]])

    def loss(theta):
        return ((network_forward(spec, theta, x) - 1.0) ** 2).sum()

    np.testing.assert_allclose(loss_param_gradient(loss, [1.0, 0.0]), [4.0, 2.0])


def test_zero_residual_gives_zero_gradient():
    """A loss already at its minimum has a zero gradient."""
    spec = MlpSpec((DenseLayer(1, 1, "identity"),))
    x = torch.tensor([[2.0]])

    def loss(theta):
        return ((network_forward(spec, theta, x) - 2.0) ** 2).sum()

    value, grad = value_and_gradient(loss, [1.0, 0.0])
    assert value == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_second_derivative_loss_gradient_matches_finite_differences():
    """Gradients through a Dxx jet agree with parameter finite differences."""
    spec = MlpSpec.dense([1, 5, 1], activation="tanh")
    params = init_params(spec, 5)
    x = torch.linspace(0.1, 0.9, 7).reshape(-1, 1)

    def loss(theta):
        jet = network_jet(spec, theta, x, [0])
        return ((jet.second[0] + jet.value) ** 2).mean()

    grad = loss_param_gradient(loss, params)
    h = 1e-6
    fd = np.empty_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        plus = float(loss(torch.as_tensor(params + e)))
        minus = float(loss(torch.as_tensor(params - e)))
        fd[i] = (plus - minus) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_non_finite_loss_raises():
    """A nan loss raises with the offending value."""
    with pytest.raises(NonFiniteLossError) as info:
        value_and_gradient(lambda theta: theta.sum() * math.inf, [1.0])
    assert math.isinf(info.value.value)


def test_flat_layout_appends_physical_params():
    """Networks come first, then the physical-parameter slice."""
    a, b = MlpSpec.dense([1, 2, 1]), MlpSpec.dense([2, 1])
    layout = FlatLayout((("x", a), ("y", b)), ("sigma", "rho"))
    assert layout.length == a.param_count + b.param_count + 2
    theta = layout.init(0, {"sigma": 1.0, "rho": 2.0})
    assert layout.physical_params(theta) == {"sigma": 1.0, "rho": 2.0}
    np.testing.assert_array_equal(theta[layout.offsets["x"]], init_params(a, 0))
    np.testing.assert_array_equal(theta[layout.offsets["y"]], init_params(b, 1))
    with pytest.raises(ValueError):
        layout.init(0, {"sigma": 1.0})


def test_params_blob_and_text(tmp_path):
    """Binary blobs keep a header and reject corruption; text files keep every bit."""
    params = init_params(MlpSpec.dense([2, 3, 1]), 2)
    blob = params_to_bytes(params)
    assert blob[:4] == b"PNFP"
    assert len(blob) == 16 + 8 * params.size
    np.testing.assert_array_equal(params_from_bytes(blob), params)
    with pytest.raises(ValueError):
        params_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        params_from_bytes(blob[:-8])

    path = tmp_path / "params.txt"
    save_params_text(params, path)
    np.testing.assert_array_equal(load_params_text(path), params)
