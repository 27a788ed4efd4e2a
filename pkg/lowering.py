"""Compile a PdeSystem plus networks into residual evaluators (a LossProgram)."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Protocol, Sequence, Union

import numpy as np
import torch
from scipy.stats import qmc

from mlp_jet import FlatLayout, Jet, MlpSpec, network_jet
from pde_ir import (
    BinaryFn,
    BinaryOp,
    Const,
    Declarations,
    DepVarApp,
    Derivative,
    Equation,
    Expr,
    GradNorm,
    IndVar,
    Param,
    PdeSystem,
    Piecewise,
    UnaryFn,
    applications,
    format_expression,
    iter_nodes,
    parse_expression,
    validate_system,
)

logger = logging.getLogger(__name__)

WRAPPER_PROBE_POINTS = 16
WRAPPER_TOLERANCE = 1e-10
DOMAIN_TOLERANCE = 1e-12


class WrapperConsistencyError(ValueError):
    """A trial wrapper claims a boundary condition it does not satisfy."""


class DomainViolationError(ValueError):
    """Point outside a term's free-variable bounds."""


class NonFiniteResidualError(ValueError):
    """Non-finite intermediate while evaluating a residual."""

    def __init__(self, node: str):
        super().__init__(f"Non-finite value at {node}")
        self.node = node


class EmptyDataError(ValueError):
    """Additional loss configured without data."""


# ---------------------------------------------------------------------------
# Second-order forward duals, used for trial-wrapper factors g and h
# ---------------------------------------------------------------------------


class Dual2:
    """Truncated Taylor triple (f, f', f'') along one seeded direction."""

    __slots__ = ("v", "d", "dd")

    def __init__(self, v, d=0.0, dd=0.0):
        self.v = v
        self.d = d
        self.dd = dd

    @staticmethod
    def lift(other) -> "Dual2":
        return other if isinstance(other, Dual2) else Dual2(other)

    def __add__(self, other):
        o = Dual2.lift(other)
        return Dual2(self.v + o.v, self.d + o.d, self.dd + o.dd)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual2.lift(other)
        return Dual2(self.v - o.v, self.d - o.d, self.dd - o.dd)

    def __rsub__(self, other):
        return Dual2.lift(other) - self

    def __neg__(self):
        return Dual2(-self.v, -self.d, -self.dd)

    def __mul__(self, other):
        o = Dual2.lift(other)
        return Dual2(self.v * o.v, self.d * o.v + self.v * o.d, self.dd * o.v + 2 * self.d * o.d + self.v * o.dd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * Dual2.lift(other).reciprocal()

    def __rtruediv__(self, other):
        return Dual2.lift(other) * self.reciprocal()

    def reciprocal(self) -> "Dual2":
        inv = 1 / self.v
        return self.chain(inv, -inv * inv, 2 * inv * inv * inv)

    def chain(self, f, f1, f2) -> "Dual2":
        """Compose with a scalar function given f(v), f'(v), f''(v)."""
        return Dual2(f, f1 * self.d, f2 * self.d * self.d + f1 * self.dd)

    def __pow__(self, other):
        o = Dual2.lift(other)
        if _is_zero(o.d) and _is_zero(o.dd):
            c = o.v
            return self.chain(self.v ** c, c * self.v ** (c - 1), c * (c - 1) * self.v ** (c - 2))
        return (o * self.log()).exp()

    def exp(self):
        e = torch.exp(self.v)
        return self.chain(e, e, e)

    def log(self):
        inv = 1 / self.v
        return self.chain(torch.log(self.v), inv, -inv * inv)


def _is_zero(x) -> bool:
    return isinstance(x, float) and x == 0.0


def _dual_unary(fn: str, a: Dual2) -> Dual2:
    v = a.v
    if fn == "neg":
        return -a
    if fn == "sin":
        return a.chain(torch.sin(v), torch.cos(v), -torch.sin(v))
    if fn == "cos":
        return a.chain(torch.cos(v), -torch.sin(v), -torch.cos(v))
    if fn == "exp":
        return a.exp()
    if fn == "log":
        return a.log()
    if fn == "sqrt":
        s = torch.sqrt(v)
        return a.chain(s, 0.5 / s, -0.25 / (s * v))
    if fn == "sinh":
        return a.chain(torch.sinh(v), torch.cosh(v), torch.sinh(v))
    if fn == "cosh":
        return a.chain(torch.cosh(v), torch.sinh(v), torch.cosh(v))
    if fn == "tanh":
        t = torch.tanh(v)
        return a.chain(t, 1 - t * t, -2 * t * (1 - t * t))
    if fn == "abs":
        return a.chain(torch.abs(v), torch.sign(v), torch.zeros_like(v))
    raise ValueError(f"Unknown function {fn!r}")


def _select(mask: torch.Tensor, a: Dual2, b: Dual2) -> Dual2:
    def pick(x, y):
        return torch.where(mask, torch.as_tensor(x), torch.as_tensor(y))

    return Dual2(pick(a.v, b.v), pick(a.d, b.d), pick(a.dd, b.dd))


def evaluate_dual(expr: Expr, coords: dict[str, torch.Tensor], seed_var: Optional[str], params: dict[str, float]) -> Dual2:
    """Evaluate an application-free expression as a Dual2 seeded along ``seed_var``."""
    if isinstance(expr, Const):
        return Dual2(torch.tensor(float(expr.value)))
    if isinstance(expr, IndVar):
        x = coords[expr.name]
        return Dual2(x, 1.0 if expr.name == seed_var else 0.0)
    if isinstance(expr, Param):
        return Dual2(torch.as_tensor(params[expr.name]))
    if isinstance(expr, UnaryFn):
        return _dual_unary(expr.fn, evaluate_dual(expr.operand, coords, seed_var, params))
    if isinstance(expr, BinaryOp):
        left = evaluate_dual(expr.left, coords, seed_var, params)
        right = evaluate_dual(expr.right, coords, seed_var, params)
        return {"+": left.__add__, "-": left.__sub__, "*": left.__mul__, "/": left.__truediv__, "^": left.__pow__}[
            expr.op
        ](right)
    if isinstance(expr, BinaryFn):
        left = evaluate_dual(expr.left, coords, seed_var, params)
        right = evaluate_dual(expr.right, coords, seed_var, params)
        mask = left.v >= right.v if expr.fn == "max" else left.v <= right.v
        return _select(torch.as_tensor(mask), left, right)
    if isinstance(expr, Piecewise):
        selector = evaluate_dual(expr.selector, coords, seed_var, params).v
        result = evaluate_dual(expr.otherwise, coords, seed_var, params)
        for bound, value in reversed(expr.branches):
            result = _select(selector < bound, evaluate_dual(value, coords, seed_var, params), result)
        return result
    raise ValueError(f"Trial wrapper factors cannot contain {format_expression(expr)}")


# ---------------------------------------------------------------------------
# Field sources: what stands in for each dependent variable
# ---------------------------------------------------------------------------


class FieldSource(Protocol):
    def jet(self, name: str, inputs: torch.Tensor, second_axes: Sequence[int], theta: torch.Tensor) -> Jet:
        ...

    def param(self, name: str, theta: torch.Tensor) -> torch.Tensor:
        ...


@dataclass(frozen=True)
class TrialWrapper:
    """ψ = g·N + h over the dependent variable's own arguments."""

    dvar: str
    g: Expr
    h: Expr
    absorbs: tuple[int, ...] = ()

    @classmethod
    def from_text(cls, dvar: str, g: str, h: str, absorbs: Sequence[int], declarations: Declarations) -> "TrialWrapper":
        return cls(dvar, parse_expression(g, declarations), parse_expression(h, declarations), tuple(absorbs))

    def factor_jets(self, args: Sequence[str], inputs: torch.Tensor, second_axes: Sequence[int], params: dict) -> tuple:
        """(g, h) each as (value (N,), first (N, in), second {axis: (N,)})."""
        coords = {name: inputs[:, i] for i, name in enumerate(args)}
        n = inputs.shape[0]
        out = []
        for factor in (self.g, self.h):
            value = None
            firsts, seconds = [], {}
            for i, name in enumerate(args):
                dual = evaluate_dual(factor, coords, name, params)
                value = torch.broadcast_to(torch.as_tensor(dual.v), (n,))
                firsts.append(torch.broadcast_to(torch.as_tensor(dual.d), (n,)))
                if i in second_axes:
                    seconds[i] = torch.broadcast_to(torch.as_tensor(dual.dd), (n,))
            out.append((value, torch.stack(firsts, dim=1), seconds))
        return tuple(out)


class NetworkFields:
    """Dependent variables backed by networks in one flat vector, optionally wrapped."""

    def __init__(self, layout: FlatLayout, args: dict[str, tuple[str, ...]], wrappers: Sequence[TrialWrapper] = (),
                 param_defaults: Optional[dict[str, float]] = None):
        self.layout = layout
        self.args = args
        self.wrappers = {w.dvar: w for w in wrappers}
        self.param_defaults = dict(param_defaults or {})

    def param(self, name: str, theta: torch.Tensor) -> torch.Tensor:
        if name in self.layout.param_names:
            return theta[self.layout.param_slice][self.layout.param_names.index(name)]
        return torch.tensor(float(self.param_defaults[name]))

    def jet(self, name: str, inputs: torch.Tensor, second_axes: Sequence[int], theta: torch.Tensor) -> Jet:
        spec = self.layout.spec(name)
        net = network_jet(spec, theta[self.layout.offsets[name]], inputs, second_axes)
        wrapper = self.wrappers.get(name)
        if wrapper is None:
            return net
        params = {p: self.param(p, theta) for p in self.param_defaults}
        (g, g1, g2), (h, h1, h2) = wrapper.factor_jets(self.args[name], inputs, second_axes, params)
        gv, hv = g.unsqueeze(-1), h.unsqueeze(-1)
        value = gv * net.value + hv
        first = g1.unsqueeze(-1) * net.value.unsqueeze(1) + gv.unsqueeze(1) * net.first + h1.unsqueeze(-1)
        second = {
            axis: g2[axis].unsqueeze(-1) * net.value
            + 2 * g1[:, axis].unsqueeze(-1) * net.first[:, axis, :]
            + gv * net.second[axis]
            + h2[axis].unsqueeze(-1)
            for axis in net.second
        }
        return Jet(value=value, first=first, second=second)


OracleFn = Callable[..., torch.Tensor]


class OracleFields:
    """Closed-form torch functions in place of networks; derivatives by autograd."""

    def __init__(self, functions: dict[str, OracleFn], param_defaults: Optional[dict[str, float]] = None):
        self.functions = functions
        self.param_defaults = dict(param_defaults or {})

    def param(self, name: str, theta: torch.Tensor) -> torch.Tensor:
        return torch.tensor(float(self.param_defaults[name]))

    def jet(self, name: str, inputs: torch.Tensor, second_axes: Sequence[int], theta: torch.Tensor) -> Jet:
        with torch.enable_grad():
            x = inputs.detach().clone().requires_grad_(True)
            value = self.functions[name](*x.unbind(dim=1))
            value = torch.broadcast_to(value, (x.shape[0],))
            first = None
            if value.requires_grad:
                (first,) = torch.autograd.grad(value.sum(), x, create_graph=True, allow_unused=True)
            if first is None:
                first = torch.zeros_like(x)
            second = {}
            for axis in second_axes:
                if not first.requires_grad:
                    second[axis] = torch.zeros(x.shape[0])
                    continue
                (hess_row,) = torch.autograd.grad(first[:, axis].sum(), x, retain_graph=True, allow_unused=True)
                second[axis] = torch.zeros(x.shape[0]) if hess_row is None else hess_row[:, axis].detach()
        return Jet(
            value=value.detach().unsqueeze(-1),
            first=first.detach().unsqueeze(-1),
            second={axis: v.unsqueeze(-1) for axis, v in second.items()},
        )


# ---------------------------------------------------------------------------
# Terms and programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvaluationContext:
    fields: FieldSource
    dvar_args: dict[str, tuple[str, ...]]


@dataclass(frozen=True, eq=False)
class LossTerm:
    """One residual evaluator over its free variables."""

    kind: Literal["interior", "boundary", "paired"]
    label: str
    equation: Equation
    free_vars: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]
    pinned: dict[str, float]
    requests: tuple[tuple[DepVarApp, tuple[int, ...]], ...]
    context: EvaluationContext = field(repr=False, compare=False, default=None)

    @property
    def dim(self) -> int:
        return len(self.free_vars)

    @property
    def is_boundary(self) -> bool:
        return self.kind != "interior"

    def lower_bounds(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds], dtype=np.float64)

    def upper_bounds(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds], dtype=np.float64)

    def residual(self, points: torch.Tensor, theta: torch.Tensor, checked: bool = False) -> torch.Tensor:
        """Residual lhs - rhs at each row of ``points`` (N, dim); differentiable in ``theta``."""
        n = points.shape[0]
        coords = {var: points[:, j] for j, var in enumerate(self.free_vars)}
        for var, value in self.pinned.items():
            coords[var] = torch.full((n,), value)
        fields = self.context.fields
        jets = {}
        for app, axes in self.requests:
            columns = [coords[a] if isinstance(a, str) else torch.full((n,), a) for a in app.args]
            inputs = torch.stack(columns, dim=1) if columns else torch.zeros(n, 0)
            jets[app] = fields.jet(app.name, inputs, axes, theta)
        env = _Environment(coords, jets, self.context.dvar_args, fields, theta, checked)
        lhs = env.evaluate(self.equation.lhs)
        rhs = env.evaluate(self.equation.rhs)
        return torch.broadcast_to(lhs - rhs, (n,))


@dataclass
class _Environment:
    coords: dict[str, torch.Tensor]
    jets: dict[DepVarApp, Jet]
    dvar_args: dict[str, tuple[str, ...]]
    fields: FieldSource
    theta: torch.Tensor
    checked: bool

    def evaluate(self, node: Expr) -> torch.Tensor:
        value = self._evaluate(node)
        if self.checked and not bool(torch.isfinite(value).all()):
            raise NonFiniteResidualError(format_expression(node))
        return value

    def _axis(self, app: DepVarApp, var: str) -> int:
        return self.dvar_args[app.name].index(var)

    def _evaluate(self, node: Expr) -> torch.Tensor:
        if isinstance(node, Const):
            return torch.tensor(float(node.value))
        if isinstance(node, IndVar):
            if node.name not in self.coords:
                raise ValueError(f"{node.name} has no single value in this term")
            return self.coords[node.name]
        if isinstance(node, Param):
            return self.fields.param(node.name, self.theta)
        if isinstance(node, DepVarApp):
            return self.jets[node].value[:, 0]
        if isinstance(node, Derivative):
            jet = self.jets[node.operand]
            axis = self._axis(node.operand, node.var)
            return jet.first[:, axis, 0] if node.order == 1 else jet.second[axis][:, 0]
        if isinstance(node, GradNorm):
            jet = self.jets[node.operand]
            axes = [self._axis(node.operand, v) for v in node.vars]
            return torch.sqrt((jet.first[:, axes, 0] ** 2).sum(dim=1))
        if isinstance(node, UnaryFn):
            operand = self.evaluate(node.operand)
            if node.fn == "neg":
                return -operand
            return getattr(torch, node.fn)(operand)
        if isinstance(node, BinaryOp):
            left, right = self.evaluate(node.left), self.evaluate(node.right)
            if node.op == "+":
                return left + right
            if node.op == "-":
                return left - right
            if node.op == "*":
                return left * right
            if node.op == "/":
                return left / right
            return torch.pow(left, right)
        if isinstance(node, BinaryFn):
            left, right = self.evaluate(node.left), self.evaluate(node.right)
            return torch.maximum(left, right) if node.fn == "max" else torch.minimum(left, right)
        if isinstance(node, Piecewise):
            selector = self.evaluate(node.selector)
            result = self.evaluate(node.otherwise)
            for bound, value in reversed(node.branches):
                result = torch.where(selector < bound, self.evaluate(value), result)
            return result
        raise TypeError(f"Not an expression node: {node!r}")


def eval_residual(term: LossTerm, point, params) -> np.ndarray:
    """Checked residual at one point or a batch of points; raises on domain or finiteness violations."""
    points = torch.as_tensor(np.atleast_2d(np.asarray(point, dtype=np.float64)))
    if term.dim == 0:
        points = torch.zeros(1, 0)
    if points.shape[1] != term.dim:
        raise DomainViolationError(f"{term.label} takes {term.dim} free coordinates, got {points.shape[1]}")
    lo, hi = term.lower_bounds(), term.upper_bounds()
    p = points.numpy()
    if term.dim and (np.any(p < lo - DOMAIN_TOLERANCE) or np.any(p > hi + DOMAIN_TOLERANCE)):
        raise DomainViolationError(f"Point outside the bounds of {term.label}")
    theta = torch.as_tensor(np.asarray(params, dtype=np.float64))
    with torch.no_grad():
        return term.residual(points, theta, checked=True).numpy()


@dataclass(frozen=True)
class DataLoss:
    """weight · Σ over dependent variables of the mean squared misfit against data."""

    data: dict[str, tuple[np.ndarray, np.ndarray]]
    weight: float = 1.0

    def __call__(self, context: EvaluationContext, theta: torch.Tensor) -> torch.Tensor:
        total = torch.tensor(0.0)
        for name, (points, values) in self.data.items():
            jet = context.fields.jet(name, torch.as_tensor(points), (), theta)
            total = total + torch.mean((jet.value[:, 0] - torch.as_tensor(values)) ** 2)
        return self.weight * total


@dataclass(frozen=True)
class LossProgram:
    system: PdeSystem
    layout: FlatLayout
    interior_terms: tuple[LossTerm, ...]
    boundary_terms: tuple[LossTerm, ...]
    context: EvaluationContext
    additional_loss: Optional[DataLoss] = None
    param_estim: bool = False
    wrappers: tuple[TrialWrapper, ...] = ()

    @property
    def terms(self) -> tuple[LossTerm, ...]:
        return self.interior_terms + self.boundary_terms

    @property
    def term_labels(self) -> list[str]:
        return [t.label for t in self.terms]

    def additional_value(self, theta: torch.Tensor) -> torch.Tensor:
        if self.additional_loss is None:
            return torch.tensor(0.0)
        return self.additional_loss(self.context, theta)

    def initial_params(self, seed: int) -> np.ndarray:
        return self.layout.init(seed, self.system.param_defaults)

    def with_fields(self, fields: FieldSource) -> "LossProgram":
        """Same terms evaluated against another field source (e.g. an exact solution)."""
        context = EvaluationContext(fields, self.context.dvar_args)
        return dataclasses.replace(
            self,
            interior_terms=tuple(dataclasses.replace(t, context=context) for t in self.interior_terms),
            boundary_terms=tuple(dataclasses.replace(t, context=context) for t in self.boundary_terms),
            context=context,
        )


def _requests(equation: Equation, dvar_args: dict[str, tuple[str, ...]]) -> tuple:
    axes: dict[DepVarApp, set[int]] = {}
    for side in (equation.lhs, equation.rhs):
        for app in applications(side):
            axes.setdefault(app, set())
        for node in iter_nodes(side):
            if isinstance(node, Derivative) and node.order == 2:
                axes[node.operand].add(dvar_args[node.operand.name].index(node.var))
    return tuple((app, tuple(sorted(a))) for app, a in axes.items())


def _boundary_pins(system: PdeSystem, bc: Equation) -> tuple[dict[str, float], set[str]]:
    """Pinned coordinates and the variables pinned to two different endpoints."""
    values: dict[str, set[float]] = {}
    for app in applications(bc.lhs) + applications(bc.rhs):
        args = system.dvar(app.name).args
        for position, value in app.pinned.items():
            values.setdefault(args[position], set()).add(float(value))
    pinned = {var: next(iter(v)) for var, v in values.items() if len(v) == 1}
    paired = {var for var, v in values.items() if len(v) > 1}
    return pinned, paired


def _probe_points(term: LossTerm) -> np.ndarray:
    if term.dim == 0:
        return np.zeros((1, 0))
    sampler = qmc.Sobol(d=term.dim, scramble=False)
    sampler.fast_forward(1)
    unit = sampler.random(WRAPPER_PROBE_POINTS)
    return qmc.scale(unit, term.lower_bounds(), term.upper_bounds())


def lower_system(
    system: PdeSystem,
    nets: dict[str, MlpSpec],
    trial_wrappers: Sequence[TrialWrapper] = (),
    additional_loss: Optional[DataLoss] = None,
    param_estim: bool = False,
    probe_seed: int = 0,
) -> LossProgram:
    """
    Compile equations into interior terms and boundary conditions into boundary terms.

    Boundary conditions absorbed by a trial wrapper are checked at probe points
    and dropped.
    """
    validate_system(system, nets).raise_for_problems()
    if param_estim and not system.physical_params:
        raise ValueError("param_estim set but the system declares no physical parameters")

    dvar_args = {d.name: d.args for d in system.dependent_vars}
    layout = FlatLayout(
        networks=tuple((d.name, nets[d.name]) for d in system.dependent_vars),
        param_names=tuple(p.name for p in system.physical_params) if param_estim else (),
    )
    for wrapper in trial_wrappers:
        if wrapper.dvar not in dvar_args:
            raise ValueError(f"Trial wrapper for unknown dependent variable {wrapper.dvar!r}")
    fields = NetworkFields(layout, dvar_args, trial_wrappers, system.param_defaults)
    context = EvaluationContext(fields, dvar_args)

    interior = []
    for i, eq in enumerate(system.equations):
        interior.append(
            LossTerm(
                kind="interior",
                label=f"eq{i + 1}",
                equation=eq,
                free_vars=system.independent_vars,
                bounds=tuple((system.domain(v).lower, system.domain(v).upper) for v in system.independent_vars),
                pinned={},
                requests=_requests(eq, dvar_args),
                context=context,
            )
        )

    boundary = []
    for i, bc in enumerate(system.boundary_conditions):
        pinned, paired = _boundary_pins(system, bc)
        free = tuple(v for v in system.independent_vars if v not in pinned and v not in paired)
        boundary.append(
            LossTerm(
                kind="paired" if paired else "boundary",
                label=f"bc{i + 1}",
                equation=bc,
                free_vars=free,
                bounds=tuple((system.domain(v).lower, system.domain(v).upper) for v in free),
                pinned=pinned,
                requests=_requests(bc, dvar_args),
                context=context,
            )
        )

    absorbed = sorted({i for w in trial_wrappers for i in w.absorbs})
    if absorbed:
        theta = torch.as_tensor(layout.init(probe_seed, system.param_defaults))
        for index in absorbed:
            if not 0 <= index < len(boundary):
                raise WrapperConsistencyError(f"Trial wrapper claims missing boundary condition {index}")
            term = boundary[index]
            with torch.no_grad():
                residual = term.residual(torch.as_tensor(_probe_points(term)), theta)
            worst = float(residual.abs().max())
            if not math.isfinite(worst) or worst > WRAPPER_TOLERANCE:
                raise WrapperConsistencyError(
                    f"Trial wrapper does not satisfy {term.label} ({term.equation}): max residual {worst:.3e}"
                )
        boundary = [t for i, t in enumerate(boundary) if i not in absorbed]

    logger.info(
        f"Lowered system: {len(interior)} interior terms, {len(boundary)} boundary terms"
        + (f", {len(absorbed)} absorbed by trial wrappers" if absorbed else "")
    )
    return LossProgram(
        system=system,
        layout=layout,
        interior_terms=tuple(interior),
        boundary_terms=tuple(boundary),
        context=context,
        additional_loss=additional_loss,
        param_estim=param_estim,
        wrappers=tuple(trial_wrappers),
    )


def attach_additional_loss(
    program: LossProgram,
    data: dict[str, tuple[Union[np.ndarray, Sequence], Union[np.ndarray, Sequence]]],
    weight: float = 1.0,
) -> LossProgram:
    """Program with a data-misfit term; points are (M, args) arrays per dependent variable."""
    cleaned = {}
    for name, (points, values) in data.items():
        dvar = program.system.dvar(name)
        pts = np.asarray(points, dtype=np.float64).reshape(-1, len(dvar.args))
        vals = np.asarray(values, dtype=np.float64).reshape(-1)
        if pts.shape[0] == 0:
            continue
        if pts.shape[0] != vals.shape[0]:
            raise ValueError(f"{name}: {pts.shape[0]} points but {vals.shape[0]} values")
        for j, var in enumerate(dvar.args):
            domain = program.system.domain(var)
            if np.any(pts[:, j] < domain.lower - DOMAIN_TOLERANCE) or np.any(pts[:, j] > domain.upper + DOMAIN_TOLERANCE):
                raise DomainViolationError(f"Data for {name} leaves the domain of {var}")
        cleaned[name] = (pts, vals)
    if not cleaned:
        raise EmptyDataError("Additional loss needs at least one data point")
    return dataclasses.replace(program, additional_loss=DataLoss(cleaned, float(weight)))
