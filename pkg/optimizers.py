"""First-order and quasi-Newton optimizers over a flat parameter vector, and phase schedules."""
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from schemas import OptimizerPhase

logger = logging.getLogger(__name__)

QuasiNewtonStatus = Literal["maxiters", "gradient_converged", "line_search_failed"]


class NonFiniteGradientError(ValueError):
    """Gradient with inf or nan entries."""


class Objective:
    """Loss oracle driven by the optimizers; subclasses override the hooks they need."""

    def value_and_gradient(self, params: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def value(self, params: np.ndarray) -> float:
        return self.value_and_gradient(params)[0]

    def begin_phase(self, kind: str) -> None:
        """Called before each schedule phase."""

    def begin_iteration(self) -> bool:
        """Called by quasi-Newton methods each iteration; True means cached f and g are stale."""
        return False


class FunctionObjective(Objective):
    """Objective from plain callables."""

    def __init__(self, f: Callable[[np.ndarray], float], grad: Callable[[np.ndarray], np.ndarray]):
        self.f = f
        self.grad = grad

    def value_and_gradient(self, params):
        return float(self.f(params)), np.asarray(self.grad(params), dtype=np.float64)

    def value(self, params):
        return float(self.f(params))


def _check_gradient(gradient: np.ndarray) -> np.ndarray:
    gradient = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteGradientError("Gradient contains non-finite entries")
    return gradient


@dataclass
class AdamState:
    lr: float
    n: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        self.m = np.zeros(self.n) if self.m is None else self.m
        self.v = np.zeros(self.n) if self.v is None else self.v


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """θ <- θ - lr·m̂/(√v̂ + ε)."""
    g = _check_gradient(gradient)
    if g.shape != state.m.shape:
        raise ValueError(f"Gradient shape {g.shape} does not match optimizer state {state.m.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class RmsPropState:
    lr: float
    n: int
    rho: float = 0.9
    eps: float = 1e-8
    accumulator: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        self.accumulator = np.zeros(self.n) if self.accumulator is None else self.accumulator


def rmsprop_step(state: RmsPropState, params: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """θ <- θ - lr·g/(√(a/(1-ρ^t)) + ε) with a the running mean square."""
    g = _check_gradient(gradient)
    if g.shape != state.accumulator.shape:
        raise ValueError(f"Gradient shape {g.shape} does not match optimizer state {state.accumulator.shape}")
    state.t += 1
    state.accumulator = state.rho * state.accumulator + (1 - state.rho) * g * g
    corrected = state.accumulator / (1 - state.rho ** state.t)
    return params - state.lr * g / (np.sqrt(corrected) + state.eps)


@dataclass
class QuasiNewtonState:
    variant: Literal["bfgs", "lbfgs"] = "bfgs"
    memory: int = 10
    c1: float = 1e-4
    shrink: float = 0.5
    max_trials: int = 40
    gradient_tolerance: float = 1e-8
    curvature_eps: float = 1e-12
    inverse_hessian: Optional[np.ndarray] = None
    pairs: deque = field(default_factory=deque)
    skipped: int = 0

    def direction(self, g: np.ndarray) -> np.ndarray:
        if self.variant == "bfgs":
            if self.inverse_hessian is None:
                return -g
            return -self.inverse_hessian @ g
        return -self._two_loop(g)

    def _two_loop(self, g: np.ndarray) -> np.ndarray:
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return q

    @property
    def has_curvature(self) -> bool:
        return self.inverse_hessian is not None or bool(self.pairs)

    def update(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Fold in a curvature pair; pairs with sᵀy <= curvature_eps are skipped."""
        sy = float(s @ y)
        if not sy > self.curvature_eps:
            self.skipped += 1
            logger.warning(f"Skipping curvature pair with s'y = {sy:.3e}")
            return False
        rho = 1.0 / sy
        if self.variant == "lbfgs":
            self.pairs.append((s, y, rho))
            while len(self.pairs) > self.memory:
                self.pairs.popleft()
            return True
        n = s.size
        if self.inverse_hessian is None:
            self.inverse_hessian = (sy / float(y @ y)) * np.eye(n)
        h = self.inverse_hessian
        left = np.eye(n) - rho * np.outer(s, y)
        h = left @ h @ left.T + rho * np.outer(s, s)
        self.inverse_hessian = 0.5 * (h + h.T)
        return True

    def reset(self) -> None:
        self.inverse_hessian = None
        self.pairs.clear()


@dataclass
class QuasiNewtonResult:
    params: np.ndarray
    value: float
    status: QuasiNewtonStatus
    iterations: int


def quasi_newton_run(
    state: QuasiNewtonState,
    objective: Objective,
    params: np.ndarray,
    maxiters: int,
    callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> QuasiNewtonResult:
    """
    BFGS / L-BFGS with backtracking Armijo line search.

    Stops on ‖g‖∞ < gradient_tolerance, ``maxiters`` or a failed line search.
    ``callback(iteration, params, value)`` sees every accepted iterate.
    """
    x = np.asarray(params, dtype=np.float64).copy()
    f, g = objective.value_and_gradient(x)
    g = _check_gradient(g)
    iterations = 0
    status: QuasiNewtonStatus = "maxiters"
    while True:
        if objective.begin_iteration():
            f, g = objective.value_and_gradient(x)
            g = _check_gradient(g)
        if np.max(np.abs(g), initial=0.0) < state.gradient_tolerance:
            status = "gradient_converged"
            break
        if iterations >= maxiters:
            status = "maxiters"
            break
        d = state.direction(g)
        slope = float(g @ d)
        if not slope < 0:
            state.reset()
            d = -g
            slope = float(g @ d)
        alpha = 1.0 if state.has_curvature else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        accepted = False
        for _ in range(state.max_trials):
            trial = x + alpha * d
            f_trial = objective.value(trial)
            if math.isfinite(f_trial) and f_trial <= f + state.c1 * alpha * slope:
                accepted = True
                break
            alpha *= state.shrink
        if not accepted:
            status = "line_search_failed"
            logger.warning(f"Line search failed after {state.max_trials} trials at iteration {iterations}")
            break
        f_new, g_new = objective.value_and_gradient(trial)
        g_new = _check_gradient(g_new)
        state.update(trial - x, g_new - g)
        x, f, g = trial, f_new, g_new
        iterations += 1
        if callback is not None:
            callback(iterations, x, f)
    return QuasiNewtonResult(params=x, value=f, status=status, iterations=iterations)


@dataclass
class IterationRecord:
    iteration: int
    phase: int
    optimizer: str
    loss: float
    wall_s: float


@dataclass
class ScheduleResult:
    params: np.ndarray
    best_params: np.ndarray
    best_score: float
    history: list[IterationRecord]
    statuses: list[str]


def run_schedule(
    phases: Sequence[OptimizerPhase],
    objective: Objective,
    params: np.ndarray,
    callback: Optional[Callable[[IterationRecord, np.ndarray], Optional[float]]] = None,
) -> ScheduleResult:
    """
    Run optimizer phases in order, each starting from the best parameters so far.

    ``callback(record, params)`` may return a score (lower is better) that
    replaces the loss for best-parameter tracking.
    """
    if not phases:
        raise ValueError("Empty optimizer schedule")
    x = np.asarray(params, dtype=np.float64).copy()
    best_params, best_score = x.copy(), math.inf
    history: list[IterationRecord] = []
    statuses: list[str] = []
    start = time.perf_counter()
    counter = 0

    def record(phase_index: int, kind: str, p: np.ndarray, loss: float) -> None:
        nonlocal counter, best_params, best_score
        counter += 1
        entry = IterationRecord(counter, phase_index, kind, float(loss), time.perf_counter() - start)
        history.append(entry)
        score = callback(entry, p) if callback is not None else None
        score = entry.loss if score is None else score
        if math.isfinite(score) and score < best_score:
            best_score, best_params = score, p.copy()

    for phase_index, phase in enumerate(phases):
        maxiters = phase.maxiters if phase.maxiters is not None else 0
        logger.info(f"Phase {phase_index + 1}/{len(phases)}: {phase.label()} for up to {maxiters} iterations")
        if phase_index > 0 and math.isfinite(best_score):
            x = best_params.copy()
        objective.begin_phase(phase.kind)
        if phase.kind in ("adam", "rmsprop"):
            state = AdamState(lr=phase.lr, n=x.size) if phase.kind == "adam" else RmsPropState(lr=phase.lr, n=x.size)
            step = adam_step if phase.kind == "adam" else rmsprop_step
            for _ in range(maxiters):
                loss, grad = objective.value_and_gradient(x)
                record(phase_index, phase.kind, x, loss)
                x = step(state, x, grad)
            statuses.append("maxiters")
        else:
            qn_state = QuasiNewtonState(variant=phase.kind)
            result = quasi_newton_run(
                qn_state, objective, x, maxiters,
                callback=lambda it, p, f, i=phase_index, k=phase.kind: record(i, k, p, f),
            )
            x = result.params
            statuses.append(result.status)
            logger.info(f"Phase {phase_index + 1} stopped: {result.status} after {result.iterations} iterations")

    if not math.isfinite(best_score):
        best_params = x.copy()
    return ScheduleResult(params=x, best_params=best_params, best_score=best_score, history=history, statuses=statuses)
