"""Pydantic schemas for run configuration: strategies, weight schemes, optimizer schedules."""
import re
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from config import settings


# Strategy Schemas
class GridStrategy(BaseModel):
    """Uniform interior lattice, Δx-product weighted sum."""

    kind: Literal["grid"] = "grid"
    dx: list[float] = Field(..., min_length=1)

    @field_validator("dx", mode="before")
    @classmethod
    def coerce_dx(cls, v):
        if isinstance(v, (int, float)):
            return [float(v)]
        return v

    @field_validator("dx")
    @classmethod
    def positive_dx(cls, v: list[float]) -> list[float]:
        if any(d <= 0 for d in v):
            raise ValueError("dx must be > 0")
        return v

    def dx_for(self, axis: int, ivar_count: int) -> float:
        """Spacing along one system axis; a single value applies to every axis."""
        if len(self.dx) == 1:
            return self.dx[0]
        if len(self.dx) != ivar_count:
            raise ValueError(f"grid needs 1 or {ivar_count} dx values, got {len(self.dx)}")
        return self.dx[axis]

    def label(self) -> str:
        return "grid:" + ",".join(f"{d:g}" for d in self.dx)


class StochasticStrategy(BaseModel):
    """Fresh uniform random points every evaluation."""

    kind: Literal["stochastic"] = "stochastic"
    points: int = Field(..., ge=1)

    def label(self) -> str:
        return f"stochastic:{self.points}"


class QuasiRandomStrategy(BaseModel):
    """Low-discrepancy points, successive blocks of one stream per term."""

    kind: Literal["quasirandom"] = "quasirandom"
    points: int = Field(..., ge=1)
    sampler: Literal["sobol", "lhs"] = "sobol"
    resample: bool = True

    def label(self) -> str:
        return f"quasirandom:{self.points}:{self.sampler}" + ("" if self.resample else ":fixed")


class QuadratureStrategy(BaseModel):
    """Adaptive cubature of the squared residual."""

    kind: Literal["quadrature"] = "quadrature"
    rule: Literal["auto", "gauss_kronrod_1d", "h_cubature_genz_malik"] = "auto"
    reltol: float = Field(default=1.0, ge=0)
    abstol: float = Field(default=1e-4, ge=0)
    maxiters: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def some_tolerance(self):
        if self.abstol <= 0 and self.reltol <= 0:
            raise ValueError("quadrature needs abstol > 0 or reltol > 0")
        return self

    def label(self) -> str:
        return "quadrature"


StrategyConfig = Annotated[
    Union[GridStrategy, StochasticStrategy, QuasiRandomStrategy, QuadratureStrategy],
    Field(discriminator="kind"),
]


# Weight Scheme Schemas
class FixedWeights(BaseModel):
    """Constant per-term weights (unit by default)."""

    kind: Literal["fixed"] = "fixed"
    weights: Optional[list[float]] = None

    @field_validator("weights")
    @classmethod
    def positive_weights(cls, v):
        if v is not None and any(w <= 0 for w in v):
            raise ValueError("weights must be > 0")
        return v


class LossGradientWeights(BaseModel):
    """EMA of reciprocal mean gradient magnitudes."""

    kind: Literal["lossgrad"] = "lossgrad"
    gamma: float = Field(default=0.1, ge=0, le=1)
    update_every: int = Field(default=10, ge=1)
    clamp_eps: float = Field(default=1e-7, gt=0)


class MiniMaxWeights(BaseModel):
    """Gradient ascent on the weights."""

    kind: Literal["minimax"] = "minimax"
    lr_pde: float = Field(default=1e-4, ge=0)
    lr_bc: float = Field(default=1e-2, ge=0)
    update_every: int = Field(default=1, ge=1)


WeightConfig = Annotated[
    Union[FixedWeights, LossGradientWeights, MiniMaxWeights],
    Field(discriminator="kind"),
]


# Optimizer Schemas
class OptimizerPhase(BaseModel):
    """One phase of a schedule; ``maxiters`` None means the run's default iteration count."""

    kind: Literal["adam", "rmsprop", "bfgs", "lbfgs"]
    lr: Optional[float] = Field(default=None, gt=0)
    maxiters: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def learning_rate_for_first_order(self):
        if self.kind in ("adam", "rmsprop") and self.lr is None:
            self.lr = 0.001
        return self

    def label(self) -> str:
        parts = [self.kind]
        if self.lr is not None and self.kind in ("adam", "rmsprop"):
            parts.append(f"{self.lr:g}")
        if self.maxiters is not None:
            parts.append(str(self.maxiters))
        return ":".join(parts)


# Parsers for the compact CLI / run-file syntax
_STRATEGY_SPLIT_RE = re.compile(r",(?=\s*(?:grid|stochastic|quasirandom|quadrature)\b)")


def _keyword_options(tokens: list[str], allowed: dict[str, str]) -> dict[str, str]:
    options = {}
    for token in tokens:
        key, eq, value = token.partition("=")
        if not eq or key not in allowed:
            raise ValueError(f"Unknown option {token!r}; expected one of {sorted(allowed)}")
        options[allowed[key]] = value
    return options


def parse_strategy(text: str) -> Union[GridStrategy, StochasticStrategy, QuasiRandomStrategy, QuadratureStrategy]:
    """Parse ``grid:<dx>[,<dx>...]``, ``stochastic:<n>``, ``quasirandom:<n>[:sobol|lhs][:fixed]``, ``quadrature[:k=v...]``."""
    kind, *rest = text.strip().split(":")
    if kind == "grid":
        if len(rest) != 1:
            raise ValueError(f"grid expects grid:<dx>, got {text!r}")
        return GridStrategy(dx=[float(d) for d in rest[0].split(",")])
    if kind == "stochastic":
        if len(rest) != 1:
            raise ValueError(f"stochastic expects stochastic:<n>, got {text!r}")
        return StochasticStrategy(points=int(rest[0]))
    if kind == "quasirandom":
        if not rest:
            raise ValueError(f"quasirandom expects quasirandom:<n>, got {text!r}")
        config = {"points": int(rest[0])}
        for token in rest[1:]:
            if token in ("sobol", "lhs"):
                config["sampler"] = token
            elif token in ("fixed", "resample"):
                config["resample"] = token == "resample"
            else:
                raise ValueError(f"Unknown quasirandom option {token!r}")
        return QuasiRandomStrategy(**config)
    if kind == "quadrature":
        options = _keyword_options(
            rest, {"abstol": "abstol", "reltol": "reltol", "maxiters": "maxiters", "rule": "rule"}
        )
        return QuadratureStrategy(**options)
    raise ValueError(f"Unknown strategy {kind!r}")


def parse_strategy_list(text: str) -> list:
    """Comma-separated strategies; commas inside a per-axis grid list are kept."""
    return [parse_strategy(part) for part in _STRATEGY_SPLIT_RE.split(text) if part.strip()]


def parse_weights(text: str) -> Union[FixedWeights, LossGradientWeights, MiniMaxWeights]:
    """Parse ``fixed``, ``lossgrad[:gamma=..][:every=..][:eps=..]``, ``minimax[:lrpde=..][:lrbc=..][:every=..]``."""
    kind, *rest = text.strip().split(":")
    if kind == "fixed":
        if rest:
            return FixedWeights(weights=[float(w) for w in rest[0].split(",")])
        return FixedWeights()
    if kind == "lossgrad":
        return LossGradientWeights(
            **_keyword_options(rest, {"gamma": "gamma", "every": "update_every", "eps": "clamp_eps"})
        )
    if kind == "minimax":
        return MiniMaxWeights(
            **_keyword_options(rest, {"lrpde": "lr_pde", "lrbc": "lr_bc", "every": "update_every"})
        )
    raise ValueError(f"Unknown weight scheme {kind!r}")


def parse_schedule(text: str) -> list[OptimizerPhase]:
    """Parse ``adam:0.001:50+bfgs:150``; first-order phases take ``lr[:iters]``, quasi-Newton ``[iters]``."""
    phases = []
    for part in text.strip().split("+"):
        kind, *rest = part.strip().split(":")
        if kind in ("adam", "rmsprop"):
            if len(rest) > 2:
                raise ValueError(f"{kind} expects {kind}:<lr>[:<iters>], got {part!r}")
            lr = float(rest[0]) if rest else None
            maxiters = int(rest[1]) if len(rest) == 2 else None
            phases.append(OptimizerPhase(kind=kind, lr=lr, maxiters=maxiters))
        elif kind in ("bfgs", "lbfgs"):
            if len(rest) > 1:
                raise ValueError(f"{kind} expects {kind}[:<iters>], got {part!r}")
            phases.append(OptimizerPhase(kind=kind, maxiters=int(rest[0]) if rest else None))
        else:
            raise ValueError(f"Unknown optimizer {kind!r}")
    if not phases:
        raise ValueError("Empty optimizer schedule")
    return phases


# Run Schemas
class RunConfig(BaseModel):
    """Everything one training run needs."""

    problem: Optional[str] = None
    spec: Optional[str] = None
    strategy: StrategyConfig = Field(default_factory=lambda: GridStrategy(dx=[0.1]))
    weights: WeightConfig = Field(default_factory=FixedWeights)
    schedule: list[OptimizerPhase] = Field(default_factory=lambda: [OptimizerPhase(kind="adam", lr=0.01)])
    seed: int = 0
    sampling_seed: Optional[int] = None
    iters: int = Field(default=1000, ge=0)
    eval_dx: float = Field(default_factory=lambda: settings.EVAL_DX, gt=0)
    param_estim: Optional[bool] = None
    params: dict[str, float] = Field(default_factory=dict)
    out: Optional[str] = None
    plot: Optional[str] = None

    @field_validator("strategy", mode="before")
    @classmethod
    def strategy_from_text(cls, v):
        return parse_strategy(v) if isinstance(v, str) else v

    @field_validator("weights", mode="before")
    @classmethod
    def weights_from_text(cls, v):
        return parse_weights(v) if isinstance(v, str) else v

    @field_validator("schedule", mode="before")
    @classmethod
    def schedule_from_text(cls, v):
        return parse_schedule(v) if isinstance(v, str) else v

    @field_validator("params", mode="before")
    @classmethod
    def params_from_text(cls, v):
        if isinstance(v, str):
            pairs = [p.split("=") for p in v.split(",") if p.strip()]
            return {name.strip(): float(value) for name, value in pairs}
        return v

    @model_validator(mode="after")
    def problem_or_spec(self):
        if (self.problem is None) == (self.spec is None):
            raise ValueError("Exactly one of problem or spec is required")
        return self

    @property
    def effective_sampling_seed(self) -> int:
        return self.seed if self.sampling_seed is None else self.sampling_seed

    def resolved_schedule(self) -> list[OptimizerPhase]:
        """Schedule with every open-ended phase given the run's iteration count."""
        return [
            phase if phase.maxiters is not None else phase.model_copy(update={"maxiters": self.iters})
            for phase in self.schedule
        ]

    def schedule_label(self) -> str:
        return "+".join(phase.label() for phase in self.schedule)


_RUN_FILE_KEYS = {
    "problem": "problem",
    "spec": "spec",
    "strategy": "strategy",
    "optimizer": "schedule",
    "opt": "schedule",
    "schedule": "schedule",
    "weights": "weights",
    "seed": "seed",
    "sampling_seed": "sampling_seed",
    "iters": "iters",
    "eval_dx": "eval_dx",
    "param_estim": "param_estim",
    "params": "params",
    "out": "out",
    "plot": "plot",
}


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a line-oriented ``key = value`` run file (``#`` comments)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or key not in _RUN_FILE_KEYS:
            raise ValueError(f"{path}:{lineno}: expected one of {sorted(_RUN_FILE_KEYS)} = value")
        values[_RUN_FILE_KEYS[key]] = value.strip()
    return RunConfig(**values)
