"""Training strategies: turn a LossProgram into a scalar loss and its parameter gradient."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch

from lowering import LossProgram, LossTerm
from mlp_jet import NonFiniteLossError, value_and_gradient
from quadrature import integrate_adaptive
from sampling import SobolStream, grid_points, lhs_points, scale_to, uniform_points
from schemas import GridStrategy, QuadratureStrategy, QuasiRandomStrategy, StochasticStrategy

logger = logging.getLogger(__name__)

MIN_BOUNDARY_POINTS = 4

Strategy = Union[GridStrategy, StochasticStrategy, QuasiRandomStrategy, QuadratureStrategy]


@dataclass
class LossEvaluation:
    total: float
    per_term: np.ndarray
    error_bounds: Optional[np.ndarray] = None
    additional: float = 0.0


def boundary_point_count(points_per_term: int) -> int:
    return max(MIN_BOUNDARY_POINTS, points_per_term // 4)


class Discretizer:
    """
    Stateful loss/gradient evaluator for one program under one strategy.

    ``loss_value`` and ``value_and_gradient`` draw a new sample first when
    ``auto_resample`` is set; ``loss_gradient`` and ``term_gradients`` reuse
    the current one. Quasi-Newton drivers switch ``auto_resample`` off and
    call ``begin_iteration`` once per iteration.
    """

    resamples = False

    def __init__(self, program: LossProgram, strategy: Strategy, seed: int = 0):
        self.program = program
        self.strategy = strategy
        self.seed = seed
        self.auto_resample = True
        self.last_points: dict[str, np.ndarray] = {}
        self.last_error_bounds: Optional[np.ndarray] = None

    @property
    def terms(self) -> tuple[LossTerm, ...]:
        return self.program.terms

    def _weights(self, weights: Optional[Sequence[float]]) -> np.ndarray:
        if weights is None:
            return np.ones(len(self.terms))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(self.terms),):
            raise ValueError(f"Expected {len(self.terms)} weights, got {weights.shape}")
        return weights

    def resample(self) -> None:
        """Draw a fresh sample (no-op for deterministic strategies)."""

    def begin_iteration(self) -> bool:
        """Start an optimizer iteration; True when the sample changed."""
        if self.resamples:
            self.resample()
            return True
        return False

    def loss_value(self, params, weights=None) -> LossEvaluation:
        raise NotImplementedError

    def loss_gradient(self, params, weights=None) -> np.ndarray:
        raise NotImplementedError

    def value_and_gradient(self, params, weights=None) -> tuple[LossEvaluation, np.ndarray]:
        raise NotImplementedError

    def term_gradients(self, params) -> list[np.ndarray]:
        raise NotImplementedError


class SampledDiscretizer(Discretizer):
    """Discretize-then-optimize over an explicit point set per term."""

    def __init__(self, program: LossProgram, strategy: Strategy, seed: int = 0):
        super().__init__(program, strategy, seed)
        self._points: list[torch.Tensor] = []
        self._scales: list[float] = []
        self._sampled = False

    def _draw(self) -> list[tuple[np.ndarray, float]]:
        """(points, scale) per term; a term's loss is scale · Σ r² over its points."""
        raise NotImplementedError

    def resample(self) -> None:
        drawn = self._draw()
        self._points = [torch.as_tensor(p) for p, _ in drawn]
        self._scales = [s for _, s in drawn]
        self.last_points = {t.label: p for t, (p, _) in zip(self.terms, drawn)}
        self._sampled = True

    def _ensure_sample(self, fresh: bool) -> None:
        if not self._sampled or (fresh and self.auto_resample and self.resamples):
            self.resample()

    def _term_tensor(self, theta: torch.Tensor) -> torch.Tensor:
        values = []
        for term, points, scale in zip(self.terms, self._points, self._scales):
            residual = term.residual(points, theta)
            values.append(scale * torch.sum(residual ** 2))
        return torch.stack(values) if values else torch.zeros(0)

    def _evaluate(self, params, weights, with_gradient: bool):
        w = torch.as_tensor(self._weights(weights))
        parts = {}

        def loss(theta: torch.Tensor) -> torch.Tensor:
            per_term = self._term_tensor(theta)
            additional = self.program.additional_value(theta)
            parts["per_term"] = per_term.detach().numpy().copy()
            parts["additional"] = float(additional.detach())
            return torch.sum(w * per_term) + additional

        if with_gradient:
            total, grad = value_and_gradient(loss, params)
        else:
            with torch.no_grad():
                total = float(loss(torch.as_tensor(np.asarray(params, dtype=np.float64))))
            if not np.isfinite(total):
                raise NonFiniteLossError(total)
            grad = None
        return LossEvaluation(total, parts["per_term"], None, parts["additional"]), grad

    def loss_value(self, params, weights=None) -> LossEvaluation:
        self._ensure_sample(fresh=True)
        return self._evaluate(params, weights, with_gradient=False)[0]

    def loss_gradient(self, params, weights=None) -> np.ndarray:
        self._ensure_sample(fresh=False)
        return self._evaluate(params, weights, with_gradient=True)[1]

    def value_and_gradient(self, params, weights=None) -> tuple[LossEvaluation, np.ndarray]:
        self._ensure_sample(fresh=True)
        return self._evaluate(params, weights, with_gradient=True)

    def term_gradients(self, params) -> list[np.ndarray]:
        self._ensure_sample(fresh=False)
        grads = []
        for term, points, scale in zip(self.terms, self._points, self._scales):
            grads.append(value_and_gradient(lambda th: scale * torch.sum(term.residual(points, th) ** 2), params)[1])
        return grads


class GridDiscretizer(SampledDiscretizer):
    """Δx-product weighted sum over a fixed lattice (strict interior, endpoint-inclusive on boundaries)."""

    def _draw(self) -> list[tuple[np.ndarray, float]]:
        ivars = self.program.system.independent_vars
        out = []
        for term in self.terms:
            dx = [self.strategy.dx_for(ivars.index(v), len(ivars)) for v in term.free_vars]
            points = grid_points(term.lower_bounds(), term.upper_bounds(), dx, include_endpoints=term.is_boundary)
            out.append((points, float(np.prod(dx)) if dx else 1.0))
        return out


class StochasticDiscretizer(SampledDiscretizer):
    """Mean squared residual over fresh uniform points."""

    resamples = True

    def __init__(self, program: LossProgram, strategy: StochasticStrategy, seed: int = 0):
        super().__init__(program, strategy, seed)
        self._rng = np.random.default_rng(seed)

    def _count(self, term: LossTerm) -> int:
        if term.dim == 0:
            return 1
        n = self.strategy.points
        return boundary_point_count(n) if term.is_boundary else n

    def _unit(self, term: LossTerm, index: int, n: int) -> np.ndarray:
        return uniform_points(n, term.dim, self._rng)

    def _draw(self) -> list[tuple[np.ndarray, float]]:
        out = []
        for index, term in enumerate(self.terms):
            n = self._count(term)
            if term.dim == 0:
                out.append((np.zeros((1, 0)), 1.0))
                continue
            unit = self._unit(term, index, n)
            out.append((scale_to(unit, term.lower_bounds(), term.upper_bounds()), 1.0 / n))
        return out


class QuasiRandomDiscretizer(StochasticDiscretizer):
    """Mean squared residual over low-discrepancy points; Sobol draws successive blocks of one stream per term."""

    def __init__(self, program: LossProgram, strategy: QuasiRandomStrategy, seed: int = 0):
        super().__init__(program, strategy, seed)
        self.resamples = strategy.resample
        self._streams = {i: SobolStream(t.dim) for i, t in enumerate(self.terms) if t.dim > 0} if strategy.sampler == "sobol" else {}

    def _unit(self, term: LossTerm, index: int, n: int) -> np.ndarray:
        if self.strategy.sampler == "sobol":
            return self._streams[index].next(n)
        return lhs_points(n, term.dim, int(self._rng.integers(2 ** 63 - 1)))


class QuadratureDiscretizer(Discretizer):
    """Adaptive cubature of each squared residual; gradients by integrating the gradient integrand."""

    def __init__(self, program: LossProgram, strategy: QuadratureStrategy, seed: int = 0):
        super().__init__(program, strategy, seed)
        self._unconverged: set[str] = set()
        for term in self.terms:
            logger.info(
                f"{term.label}: {self._rule(term)} cubature, abstol {strategy.abstol:g}, "
                f"reltol {strategy.reltol:g}, maxiters {strategy.maxiters}"
            )

    def _rule(self, term: LossTerm) -> str:
        rule = self.strategy.rule
        if rule == "gauss_kronrod_1d" and term.dim != 1:
            return "auto"
        if rule == "h_cubature_genz_malik" and term.dim < 2:
            return "auto"
        return rule

    def _integrate(self, term: LossTerm, integrand):
        s = self.strategy
        return integrate_adaptive(
            integrand, term.lower_bounds(), term.upper_bounds(),
            reltol=s.reltol, abstol=s.abstol, maxiters=s.maxiters, rule=self._rule(term),
        )

    def _term_values(self, theta: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        values, bounds = [], []
        for term in self.terms:
            seen = []

            def integrand(x: np.ndarray, term=term, seen=seen) -> np.ndarray:
                seen.append(x)
                with torch.no_grad():
                    return (term.residual(torch.as_tensor(x), theta) ** 2).numpy()

            estimate = self._integrate(term, integrand)
            if not estimate.converged and term.label not in self._unconverged:
                self._unconverged.add(term.label)
                logger.warning(f"{term.label}: quadrature not converged, error bound {estimate.error_bound:.3e}")
            self.last_points[term.label] = np.concatenate(seen) if seen else np.zeros((0, term.dim))
            values.append(estimate.value)
            bounds.append(estimate.error_bound)
        return np.array(values, dtype=np.float64), np.array(bounds, dtype=np.float64)

    def _term_gradient(self, term: LossTerm, theta: torch.Tensor) -> np.ndarray:
        def integrand(x: np.ndarray) -> np.ndarray:
            return residual_square_jacobian(term, torch.as_tensor(x), theta)

        estimate = self._integrate(term, integrand)
        return np.atleast_1d(np.asarray(estimate.value, dtype=np.float64))

    def loss_value(self, params, weights=None) -> LossEvaluation:
        w = self._weights(weights)
        theta = torch.as_tensor(np.asarray(params, dtype=np.float64))
        per_term, bounds = self._term_values(theta)
        with torch.no_grad():
            additional = float(self.program.additional_value(theta))
        total = float(np.dot(w, per_term)) + additional
        if not np.isfinite(total):
            raise NonFiniteLossError(total)
        self.last_error_bounds = bounds
        return LossEvaluation(total, per_term, bounds, additional)

    def loss_gradient(self, params, weights=None) -> np.ndarray:
        w = self._weights(weights)
        theta = torch.as_tensor(np.asarray(params, dtype=np.float64))
        grad = np.zeros(theta.shape[0])
        for weight, term in zip(w, self.terms):
            grad += weight * self._term_gradient(term, theta)
        if self.program.additional_loss is not None:
            grad += value_and_gradient(self.program.additional_value, theta)[1]
        return grad

    def value_and_gradient(self, params, weights=None) -> tuple[LossEvaluation, np.ndarray]:
        return self.loss_value(params, weights), self.loss_gradient(params, weights)

    def term_gradients(self, params) -> list[np.ndarray]:
        theta = torch.as_tensor(np.asarray(params, dtype=np.float64))
        return [self._term_gradient(term, theta) for term in self.terms]


def residual_square_jacobian(term: LossTerm, points: torch.Tensor, theta: torch.Tensor) -> np.ndarray:
    """∂ r(x)² / ∂θ for every point, shape (M, P)."""
    def squared(th: torch.Tensor) -> torch.Tensor:
        return term.residual(points, th) ** 2

    try:
        jac = torch.func.jacrev(squared)(theta)
    except (RuntimeError, NotImplementedError):
        rows = []
        th = theta.detach().clone().requires_grad_(True)
        values = squared(th)
        for i in range(values.shape[0]):
            (row,) = torch.autograd.grad(values[i], th, retain_graph=True, allow_unused=True)
            rows.append(torch.zeros_like(th) if row is None else row)
        jac = torch.stack(rows)
    return jac.detach().numpy()


def build_discretizer(strategy: Strategy, program: LossProgram, seed: int = 0) -> Discretizer:
    if isinstance(strategy, GridStrategy):
        return GridDiscretizer(program, strategy, seed)
    if isinstance(strategy, StochasticStrategy):
        return StochasticDiscretizer(program, strategy, seed)
    if isinstance(strategy, QuasiRandomStrategy):
        return QuasiRandomDiscretizer(program, strategy, seed)
    if isinstance(strategy, QuadratureStrategy):
        return QuadratureDiscretizer(program, strategy, seed)
    raise ValueError(f"Unknown strategy {strategy!r}")


def loss_value(strategy: Strategy, program: LossProgram, params, weights=None, seed: int = 0) -> LossEvaluation:
    """One-shot loss under a fresh discretizer."""
    return build_discretizer(strategy, program, seed).loss_value(params, weights)


def loss_gradient(strategy: Strategy, program: LossProgram, params, weights=None, seed: int = 0) -> np.ndarray:
    """One-shot gradient under a fresh discretizer."""
    return build_discretizer(strategy, program, seed).loss_gradient(params, weights)
