"""Dense networks, forward input jets and parameter gradients over one flat vector."""
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)

torch.set_default_dtype(torch.float64)

ACTIVATIONS = ("sigmoid", "tanh", "gelu", "identity")

PARAMS_MAGIC = b"PNFP"
PARAMS_VERSION = 1
_HEADER = struct.Struct("<4sIQ")

_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence[float]]


class DimensionMismatchError(ValueError):
    """Input or parameter vector does not fit the network."""


class NonFiniteLossError(ValueError):
    """Loss evaluated to inf or nan."""

    def __init__(self, value: float):
        super().__init__(f"Non-finite loss value: {value}")
        self.value = value


@dataclass(frozen=True)
class DenseLayer:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    @property
    def param_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass(frozen=True)
class MlpSpec:
    """Layer shapes of a dense feed-forward network."""

    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MlpSpec needs at least one layer")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"Unknown activation {layer.activation!r}")
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise ValueError("Layer dimensions must be >= 1")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"Layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @classmethod
    def dense(cls, sizes: Sequence[int], activation: str = "sigmoid", output_activation: str = "identity") -> "MlpSpec":
        """``dense([2, 16, 16, 1])``: hidden layers use ``activation``, the last ``output_activation``."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(DenseLayer(n_in, n_out, output_activation if last else activation))
        return cls(tuple(layers))

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)


@dataclass
class Jet:
    """Network output with input derivatives over a batch.

    value: (N, out); first: (N, in, out); second: axis -> (N, out).
    """

    value: torch.Tensor
    first: torch.Tensor
    second: dict[int, torch.Tensor] = field(default_factory=dict)


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; a pure function of (spec, seed)."""
    rng = np.random.default_rng(seed)
    chunks = []
    for layer in spec.layers:
        bound = math.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        chunks.append(rng.uniform(-bound, bound, size=layer.in_dim * layer.out_dim))
        chunks.append(np.zeros(layer.out_dim))
    return np.concatenate(chunks).astype(np.float64)


def _as_tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == torch.float64 else x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def unpack(spec: MlpSpec, theta: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Views (W of shape (out, in), b) per layer into a flat parameter tensor."""
    if theta.shape != (spec.param_count,):
        raise DimensionMismatchError(f"Expected {spec.param_count} parameters, got {tuple(theta.shape)}")
    out, offset = [], 0
    for layer in spec.layers:
        n_w = layer.in_dim * layer.out_dim
        weight = theta[offset:offset + n_w].reshape(layer.out_dim, layer.in_dim)
        offset += n_w
        bias = theta[offset:offset + layer.out_dim]
        offset += layer.out_dim
        out.append((weight, bias))
    return out


def _activate(name: str, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(σ(z), σ'(z), σ''(z))."""
    if name == "sigmoid":
        s = torch.sigmoid(z)
        s1 = s * (1 - s)
        return s, s1, s1 * (1 - 2 * s)
    if name == "tanh":
        t = torch.tanh(z)
        t1 = 1 - t * t
        return t, t1, -2 * t * t1
    if name == "gelu":
        cdf = 0.5 * (1 + torch.erf(z * _INV_SQRT_2))
        pdf = torch.exp(-0.5 * z * z) * _INV_SQRT_2PI
        return z * cdf, cdf + z * pdf, pdf * (2 - z * z)
    return z, torch.ones_like(z), torch.zeros_like(z)


def _check_inputs(spec: MlpSpec, x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if x.dim() != 2 or x.shape[1] != spec.in_dim:
        raise DimensionMismatchError(f"Network takes {spec.in_dim} inputs, got shape {tuple(x.shape)}")
    return x


def network_forward(spec: MlpSpec, theta: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Batched forward pass: x (N, in) -> (N, out)."""
    a = _check_inputs(spec, x)
    for layer, (weight, bias) in zip(spec.layers, unpack(spec, theta)):
        a = _activate(layer.activation, a @ weight.T + bias)[0]
    return a


def forward(spec: MlpSpec, params: ArrayLike, x: ArrayLike) -> np.ndarray:
    """Output vector for one input vector (or an (N, in) batch)."""
    x_t = _as_tensor(x)
    with torch.no_grad():
        y = network_forward(spec, _as_tensor(params), x_t)
    y = y.numpy()
    return y[0] if x_t.dim() == 1 else y


def network_jet(spec: MlpSpec, theta: torch.Tensor, x: torch.Tensor, second_order_axes: Sequence[int] = ()) -> Jet:
    """
    Forward-propagate (value, first, pure second) input derivatives through the layers.

    For y = σ(z): y' = σ'(z) z', y'' = σ''(z) z'^2 + σ'(z) z''.
    Differentiable with respect to ``theta``.
    """
    a = _check_inputs(spec, x)
    n, d = a.shape
    axes = list(dict.fromkeys(int(i) for i in second_order_axes))
    if any(i < 0 or i >= d for i in axes):
        raise DimensionMismatchError(f"Second-order axes {axes} outside 0..{d - 1}")
    da = torch.eye(d, dtype=a.dtype).expand(n, d, d)
    d2a = torch.zeros(n, len(axes), d, dtype=a.dtype)
    for layer, (weight, bias) in zip(spec.layers, unpack(spec, theta)):
        z = a @ weight.T + bias
        dz = da @ weight.T
        d2z = d2a @ weight.T
        s, s1, s2 = _activate(layer.activation, z)
        a = s
        da = s1.unsqueeze(1) * dz
        if axes:
            d2a = s2.unsqueeze(1) * dz[:, axes, :] ** 2 + s1.unsqueeze(1) * d2z
        else:
            d2a = d2z
    return Jet(value=a, first=da, second={axis: d2a[:, k, :] for k, axis in enumerate(axes)})


def input_jet(spec: MlpSpec, params: ArrayLike, x: ArrayLike, second_order_axes: Sequence[int] = ()) -> Jet:
    """Jet at one point or a batch, detached from any graph."""
    with torch.no_grad():
        return network_jet(spec, _as_tensor(params), _as_tensor(x), second_order_axes)


@dataclass(frozen=True)
class FlatLayout:
    """Several networks concatenated in one vector, then the physical-parameter slice."""

    networks: tuple[tuple[str, MlpSpec], ...]
    param_names: tuple[str, ...] = ()

    @property
    def offsets(self) -> dict[str, slice]:
        out, offset = {}, 0
        for name, spec in self.networks:
            out[name] = slice(offset, offset + spec.param_count)
            offset += spec.param_count
        return out

    @property
    def network_length(self) -> int:
        return sum(spec.param_count for _, spec in self.networks)

    @property
    def param_slice(self) -> slice:
        return slice(self.network_length, self.network_length + len(self.param_names))

    @property
    def length(self) -> int:
        return self.network_length + len(self.param_names)

    def spec(self, name: str) -> MlpSpec:
        return dict(self.networks)[name]

    def split(self, theta: torch.Tensor) -> dict[str, torch.Tensor]:
        """Per-network parameter views."""
        if theta.shape[0] != self.length:
            raise DimensionMismatchError(f"Expected {self.length} parameters, got {theta.shape[0]}")
        return {name: theta[s] for name, s in self.offsets.items()}

    def physical_params(self, theta: ArrayLike) -> dict[str, Union[float, torch.Tensor]]:
        values = theta[self.param_slice]
        return {name: values[i] for i, name in enumerate(self.param_names)}

    def init(self, seed: int, param_values: dict[str, float] = None) -> np.ndarray:
        """Initial flat vector: network i seeded with seed + i, λ from ``param_values``."""
        chunks = [init_params(spec, seed + i) for i, (_, spec) in enumerate(self.networks)]
        param_values = param_values or {}
        missing = [p for p in self.param_names if p not in param_values]
        if missing:
            raise ValueError(f"No initial value for physical parameters {missing}")
        chunks.append(np.array([param_values[p] for p in self.param_names], dtype=np.float64))
        return np.concatenate(chunks)


def value_and_gradient(loss: Callable[[torch.Tensor], torch.Tensor], params: ArrayLike) -> tuple[float, np.ndarray]:
    """Scalar loss and its gradient with respect to the full flat vector."""
    theta = _as_tensor(params).detach().clone().requires_grad_(True)
    value = loss(theta)
    scalar = float(value.detach())
    if not math.isfinite(scalar):
        raise NonFiniteLossError(scalar)
    if not value.requires_grad:
        return scalar, np.zeros(theta.shape[0])
    (grad,) = torch.autograd.grad(value, theta, allow_unused=True)
    if grad is None:
        return scalar, np.zeros(theta.shape[0])
    return scalar, grad.detach().numpy().copy()


def loss_param_gradient(loss: Callable[[torch.Tensor], torch.Tensor], params: ArrayLike) -> np.ndarray:
    """Gradient of a scalar loss of the flat parameters."""
    return value_and_gradient(loss, params)[1]


# FlatParams serialization
def params_to_bytes(params: ArrayLike) -> bytes:
    values = np.ascontiguousarray(np.asarray(params, dtype="<f8"))
    return _HEADER.pack(PARAMS_MAGIC, PARAMS_VERSION, values.size) + values.tobytes()


def params_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ValueError("Parameter blob shorter than its header")
    magic, version, length = _HEADER.unpack_from(blob)
    if magic != PARAMS_MAGIC:
        raise ValueError(f"Bad parameter blob magic {magic!r}")
    if version != PARAMS_VERSION:
        raise ValueError(f"Unsupported parameter blob version {version}")
    body = blob[_HEADER.size:]
    if len(body) != 8 * length:
        raise ValueError(f"Parameter blob declares {length} values but carries {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


def save_params_text(params: ArrayLike, path: Union[str, Path]) -> None:
    np.savetxt(path, np.asarray(params, dtype=np.float64), fmt="%.17g")


def load_params_text(path: Union[str, Path]) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=np.float64))
