"""Training runs: lower a problem, discretize its loss, run the optimizer schedule and keep score."""
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import torch

from benchmarks import BenchmarkProblem, builtin_problem
from config import settings
from lowering import LossProgram, attach_additional_loss, lower_system
from mlp_jet import MlpSpec, NonFiniteLossError
from optimizers import IterationRecord, NonFiniteGradientError, Objective, run_schedule
from pde_ir import parse_system
from reweighting import WeightScheme, build_weight_scheme
from sampling import grid_points
from schemas import RunConfig
from strategies import Discretizer, LossEvaluation, build_discretizer

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (16, 16)


class TrainingError(ValueError):
    """The run cannot start or cannot continue."""


class OracleDomainError(ValueError):
    """The oracle has no finite value at some evaluation point."""


def configure_threads() -> None:
    if settings.PINN_THREADS > 0:
        torch.set_num_threads(settings.PINN_THREADS)


def load_problem(config: RunConfig) -> BenchmarkProblem:
    """Built-in problem, or a spec file with a default sigmoid network per dependent variable."""
    if config.problem is not None:
        return builtin_problem(config.problem)
    path = Path(config.spec)
    system = parse_system(path.read_text(encoding="utf-8"))
    nets = {d.name: MlpSpec.dense([len(d.args), *DEFAULT_HIDDEN, 1]) for d in system.dependent_vars}
    return BenchmarkProblem(id=path.stem, system=system, nets=nets)


def build_program(problem: BenchmarkProblem, config: RunConfig) -> LossProgram:
    system = problem.system.with_defaults(config.params)
    param_estim = problem.param_estim if config.param_estim is None else config.param_estim
    if param_estim and not system.physical_params:
        raise TrainingError(f"param_estim set but {problem.id} declares no physical parameters")
    program = lower_system(system, problem.nets, problem.wrappers, param_estim=param_estim, probe_seed=config.seed)
    if problem.data is not None:
        program = attach_additional_loss(program, problem.data(), problem.data_weight)
    return program


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class VariableError:
    rel_l2: float
    max_abs: float


class ErrorEvaluator:
    """
    Scores parameters against the problem's solution on an endpoint-inclusive
    lattice of spacing ``dx``, independent of the training strategy.
    """

    def __init__(self, problem: BenchmarkProblem, program: LossProgram, dx: float):
        self.program = program
        self.lattices: dict[str, torch.Tensor] = {}
        self.exact: dict[str, np.ndarray] = {}
        params = program.system.param_defaults
        for dvar in program.system.dependent_vars:
            domains = [program.system.domain(v) for v in dvar.args]
            points = grid_points(
                [d.lower for d in domains], [d.upper for d in domains], [dx] * len(domains), include_endpoints=True
            )
            values = problem.solution(dvar.name, points, params)
            if values is None:
                continue
            values = np.asarray(values, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(values)):
                bad = points[~np.isfinite(values)][0]
                raise OracleDomainError(f"Solution for {dvar.name} is undefined at {bad.tolist()}")
            self.lattices[dvar.name] = torch.as_tensor(points)
            self.exact[dvar.name] = values

    @property
    def active(self) -> bool:
        return bool(self.exact)

    def __call__(self, params: np.ndarray) -> dict[str, VariableError]:
        theta = torch.as_tensor(np.asarray(params, dtype=np.float64))
        errors = {}
        with torch.no_grad():
            for name, points in self.lattices.items():
                predicted = self.program.context.fields.jet(name, points, (), theta).value[:, 0].numpy()
                diff = predicted - self.exact[name]
                norm = float(np.linalg.norm(self.exact[name]))
                misfit = float(np.linalg.norm(diff))
                # zero reference: report the absolute L2 misfit
                rel = misfit / norm if norm > 0 else misfit
                errors[name] = VariableError(rel, float(np.max(np.abs(diff))))
        return errors


def evaluate_error(
    params: np.ndarray, problem: BenchmarkProblem, program: LossProgram, dx: Optional[float] = None
) -> dict[str, VariableError]:
    """Relative L2 and max abs error per dependent variable with a known solution."""
    return ErrorEvaluator(problem, program, dx or settings.EVAL_DX)(params)


def mean_rel_l2(errors: dict[str, VariableError]) -> float:
    if not errors:
        return math.nan
    return float(np.mean([e.rel_l2 for e in errors.values()]))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainingObjective(Objective):
    """Strategy loss under the current weights; weight changes invalidate quasi-Newton caches."""

    def __init__(self, discretizer: Discretizer, scheme: WeightScheme):
        self.discretizer = discretizer
        self.scheme = scheme
        self.last: Optional[LossEvaluation] = None
        self._weights_changed = False

    def value_and_gradient(self, params):
        evaluation, gradient = self.discretizer.value_and_gradient(params, self.scheme.weights)
        self.last = evaluation
        return evaluation.total, gradient

    def value(self, params):
        try:
            return self.discretizer.loss_value(params, self.scheme.weights).total
        except NonFiniteLossError:
            return math.inf

    def begin_phase(self, kind: str) -> None:
        # quasi-Newton line searches need one sample per iteration
        self.discretizer.auto_resample = kind in ("adam", "rmsprop")

    def begin_iteration(self) -> bool:
        resampled = self.discretizer.begin_iteration()
        changed, self._weights_changed = self._weights_changed, False
        return resampled or changed

    def unweighted_loss(self) -> Optional[float]:
        """Sum of the last evaluation's terms at unit weights; comparable across weight updates."""
        if self.last is None:
            return None
        return float(np.sum(self.last.per_term)) + self.last.additional

    def update_weights(self, iteration: int, params: np.ndarray) -> None:
        if self.last is None:
            return
        if self.scheme.step(iteration, self.last.per_term, lambda: self.discretizer.term_gradients(params)):
            self._weights_changed = True


def should_log(iteration: int) -> bool:
    return iteration <= settings.LOG_EVERY_ITERATION_LIMIT or iteration % settings.LOG_STRIDE == 0


@dataclass
class RunResult:
    problem: str
    strategy: str
    optimizer: str
    weights: str
    params: np.ndarray
    history: pd.DataFrame
    final_loss: float
    final_rel_l2: float
    boundary_loss: float
    errors: dict[str, VariableError]
    estimated: dict[str, float]
    wall_s: float
    statuses: list[str] = field(default_factory=list)

    def summary_line(self) -> str:
        line = (
            f"{self.problem} {self.strategy} {self.optimizer} "
            f"{self.final_loss:.6e} {self.final_rel_l2:.6e} {self.wall_s:.2f}"
        )
        if self.estimated:
            line += " " + " ".join(f"{name}={value:.6g}" for name, value in self.estimated.items())
        return line


def train(config: RunConfig, problem: Optional[BenchmarkProblem] = None) -> RunResult:
    """Run the configured schedule; returns the best parameters seen and the logged history."""
    configure_threads()
    problem = problem or load_problem(config)
    program = build_program(problem, config)
    discretizer = build_discretizer(config.strategy, program, config.effective_sampling_seed)
    scheme = build_weight_scheme(config.weights, [t.is_boundary for t in program.terms])
    evaluator = ErrorEvaluator(problem, program, config.eval_dx)
    objective = TrainingObjective(discretizer, scheme)
    labels = program.term_labels

    params = program.initial_params(config.seed)
    try:
        initial = discretizer.loss_value(params, scheme.weights)
    except NonFiniteLossError as exc:
        raise TrainingError(f"Non-finite loss at initialization ({exc.value})") from exc
    logger.info(
        f"Training {problem.id}: {config.strategy.label()}, {config.schedule_label()}, "
        f"{config.weights.kind} weights, {params.size} parameters, initial loss {initial.total:.4e}"
    )

    rows: list[dict] = []

    def on_iteration(record: IterationRecord, current: np.ndarray) -> Optional[float]:
        # weights move during training, so without an oracle runs are ranked at unit weights
        score = None if evaluator.active else objective.unweighted_loss()
        if should_log(record.iteration):
            errors = evaluator(current) if evaluator.active else {}
            rows.append(_history_row(record, objective, labels, errors))
            logger.debug(f"iter {record.iteration} loss {record.loss:.6e}")
            if evaluator.active:
                score = mean_rel_l2(errors)
        elif evaluator.active:
            score = math.inf
        objective.update_weights(record.iteration, current)
        return score

    start = time.perf_counter()
    try:
        outcome = run_schedule(config.resolved_schedule(), objective, params, callback=on_iteration)
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        raise TrainingError(f"Training diverged: {exc}") from exc
    wall_s = time.perf_counter() - start

    best = outcome.best_params
    discretizer.auto_resample = True
    final = discretizer.loss_value(best)
    errors = evaluator(best) if evaluator.active else {}
    boundary = float(sum(v for v, t in zip(final.per_term, program.terms) if t.is_boundary))
    estimated = {}
    if program.param_estim:
        estimated = {k: float(v) for k, v in program.layout.physical_params(best).items()}

    result = RunResult(
        problem=problem.id,
        strategy=config.strategy.label(),
        optimizer=config.schedule_label(),
        weights=config.weights.kind,
        params=best,
        history=pd.DataFrame(rows, columns=_history_columns(labels, discretizer, evaluator)),
        final_loss=final.total,
        final_rel_l2=mean_rel_l2(errors),
        boundary_loss=boundary,
        errors=errors,
        estimated=estimated,
        wall_s=wall_s,
        statuses=outcome.statuses,
    )
    logger.info(f"Finished {problem.id}: loss {result.final_loss:.4e}, rel L2 {result.final_rel_l2:.4e}")
    return result


def _history_columns(labels: list[str], discretizer: Discretizer, evaluator: ErrorEvaluator) -> list[str]:
    columns = ["iter", "wall_s", "loss", "rel_l2"]
    columns += [f"loss_{label}" for label in labels]
    columns += [f"weight_{label}" for label in labels]
    if discretizer.strategy.kind == "quadrature":
        columns += [f"errbound_{label}" for label in labels]
    columns += [f"rel_l2_{name}" for name in evaluator.exact]
    return columns


def _history_row(
    record: IterationRecord, objective: TrainingObjective, labels: list[str], errors: dict[str, VariableError]
) -> dict:
    row = {"iter": record.iteration, "wall_s": record.wall_s, "loss": record.loss, "rel_l2": mean_rel_l2(errors)}
    last = objective.last
    for i, label in enumerate(labels):
        row[f"loss_{label}"] = float(last.per_term[i]) if last is not None else math.nan
        row[f"weight_{label}"] = float(objective.scheme.weights[i])
        if last is not None and last.error_bounds is not None:
            row[f"errbound_{label}"] = float(last.error_bounds[i])
    for name, error in errors.items():
        row[f"rel_l2_{name}"] = error.rel_l2
    return row


def solve_inverse(config: RunConfig, problem: Optional[BenchmarkProblem] = None) -> tuple[np.ndarray, dict[str, float], pd.DataFrame]:
    """Jointly fit networks and physical parameters against the problem's data."""
    problem = problem or load_problem(config)
    if not problem.system.physical_params:
        raise TrainingError(f"param_estim set but {problem.id} declares no physical parameters")
    if problem.data is None:
        raise TrainingError(f"{problem.id} has no data to estimate parameters from")
    result = train(config.model_copy(update={"param_estim": True}), problem)
    return result.params, result.estimated, result.history


def write_history(history: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Wrote history {path}")
    return path
