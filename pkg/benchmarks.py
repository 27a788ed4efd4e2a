"""Built-in benchmark problems: PDE systems, network shapes, oracles and default run settings."""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
from scipy.integrate import solve_ivp

from lowering import OracleFn, TrialWrapper
from mlp_jet import MlpSpec
from pde_ir import PdeSystem, parse_system
from reference_solvers import (
    P2D_T_END,
    SPM_CHARGE_RATE,
    SPM_FLUX_N,
    SPM_FLUX_P,
    SPM_INITIAL_N,
    SPM_INITIAL_P,
    SPM_RATE_N,
    SPM_RATE_P,
    SPM_T_END,
    load_reference,
)
from schemas import RunConfig

logger = logging.getLogger(__name__)

OracleFactory = Callable[[dict[str, float]], dict[str, OracleFn]]
ReferenceFn = Callable[[str, np.ndarray, dict[str, float]], Optional[np.ndarray]]
DataFactory = Callable[[], dict[str, tuple[np.ndarray, np.ndarray]]]


class UnknownProblemError(ValueError):
    """No built-in problem with that id."""


@dataclass(frozen=True)
class BenchmarkProblem:
    """A system plus everything needed to train and score it."""

    id: str
    system: PdeSystem
    nets: dict[str, MlpSpec]
    oracle: Optional[OracleFactory] = None
    reference: Optional[ReferenceFn] = None
    defaults: dict[str, str] = field(default_factory=dict)
    wrappers: tuple[TrialWrapper, ...] = ()
    data: Optional[DataFactory] = None
    data_weight: float = 1.0
    param_estim: bool = False
    true_params: dict[str, float] = field(default_factory=dict)

    @property
    def has_solution(self) -> bool:
        return self.oracle is not None or self.reference is not None

    def oracle_functions(self, params: Optional[dict[str, float]] = None) -> dict[str, OracleFn]:
        """Closed-form torch functions, possibly only for some dependent variables."""
        if self.oracle is None:
            return {}
        return self.oracle({**self.system.param_defaults, **(params or {})})

    def solution(self, name: str, points: np.ndarray, params: Optional[dict[str, float]] = None) -> Optional[np.ndarray]:
        """Exact or reference values of ``name`` at ``points``; None when nothing is known."""
        params = {**self.system.param_defaults, **(params or {})}
        functions = self.oracle_functions(params)
        if name in functions:
            x = torch.as_tensor(np.asarray(points, dtype=np.float64))
            with torch.no_grad():
                value = functions[name](*x.unbind(dim=1))
            return torch.broadcast_to(torch.as_tensor(value, dtype=torch.float64), (x.shape[0],)).numpy().copy()
        if self.reference is not None:
            return self.reference(name, np.asarray(points, dtype=np.float64), params)
        return None

    def default_config(self, **overrides) -> RunConfig:
        values = {"problem": self.id, **self.defaults, **overrides}
        return RunConfig(**values)


def _dense(in_dim: int, hidden: list[int], activation: str = "sigmoid") -> MlpSpec:
    return MlpSpec.dense([in_dim, *hidden, 1], activation=activation)


# ---------------------------------------------------------------------------
# Problem definitions
# ---------------------------------------------------------------------------

POISSON2D = """
ivars x, y
dvars u(x, y)
domain x in [0, 1]
domain y in [0, 1]
eq Dxx(u(x, y)) + Dyy(u(x, y)) = -sin(pi*x)*sin(pi*y)
bc u(0, y) = 0
bc u(1, y) = 0
bc u(x, 0) = 0
bc u(x, 1) = 0
"""


def _poisson2d() -> BenchmarkProblem:
    def oracle(params):
        return {"u": lambda x, y: torch.sin(math.pi * x) * torch.sin(math.pi * y) / (2 * math.pi**2)}

    return BenchmarkProblem(
        id="poisson2d",
        system=parse_system(POISSON2D),
        nets={"u": _dense(2, [16, 16])},
        oracle=oracle,
        defaults={"strategy": "grid:0.05", "schedule": "adam:0.001:50+bfgs:150"},
    )


DIFFUSION1D = """
params D
default D = 1
ivars t, x
dvars u(t, x)
domain t in [0, 1]
domain x in [-1, 1]
eq Dt(u(t, x)) - D*Dxx(u(t, x)) = (exp(-t) - pi^2)*sin(pi*x)
bc u(0, x) = sin(pi*x)
bc u(t, -1) = 0
bc u(t, 1) = 0
"""


def diffusion_amplitude(t):
    """a(t) with u = a(t) sin(πx) the exact solution at D = 1."""
    lam = math.pi**2
    c = 2.0 - 1.0 / (lam - 1.0)
    return c * np.exp(-lam * np.asarray(t)) + np.exp(-np.asarray(t)) / (lam - 1.0) - 1.0


def _table_reference(problem_id: str) -> ReferenceFn:
    def reference(name: str, points: np.ndarray, params: dict[str, float]) -> Optional[np.ndarray]:
        table = load_reference(problem_id, params=params)
        if name not in table.fields:
            return None
        return table.evaluate(name, points)

    return reference


def _diffusion1d() -> BenchmarkProblem:
    return BenchmarkProblem(
        id="diffusion1d",
        system=parse_system(DIFFUSION1D),
        nets={"u": _dense(2, [16, 16])},
        reference=_table_reference("diffusion1d"),
        defaults={"strategy": "grid:0.2,0.1", "schedule": "adam:0.01:1000"},
    )


# u(0, x) = -2ν φ_x/φ + 4 with φ = exp(-x²/4ν) + exp(-(x - 2π)²/4ν)
BURGERS = """
params nu
default nu = 0.07
ivars t, x
dvars u(t, x)
domain t in [0, 1]
domain x in [0, 2*pi]
eq Dt(u(t, x)) + u(t, x)*Dx(u(t, x)) = nu*Dxx(u(t, x))
bc u(0, x) = (x*exp(-x^2/(4*nu)) + (x - 2*pi)*exp(-(x - 2*pi)^2/(4*nu)))/(exp(-x^2/(4*nu)) + exp(-(x - 2*pi)^2/(4*nu))) + 4
bc u(t, 0) = u(t, 2*pi)
"""

BURGERS_IMAGES = range(-2, 3)


def burgers_solution(t: torch.Tensor, x: torch.Tensor, nu: float) -> torch.Tensor:
    """Cole-Hopf solution, Gaussian images summed over neighbouring periods."""
    shifts = torch.stack([x - 4 * t - 2 * math.pi * k for k in BURGERS_IMAGES])
    weights = torch.softmax(-(shifts**2) / (4 * nu * (t + 1)), dim=0)
    return (weights * shifts).sum(dim=0) / (t + 1) + 4


def _burgers() -> BenchmarkProblem:
    def oracle(params):
        nu = float(params["nu"])
        return {"u": lambda t, x: burgers_solution(t, x, nu)}

    return BenchmarkProblem(
        id="burgers",
        system=parse_system(BURGERS),
        nets={"u": _dense(2, [16, 16])},
        oracle=oracle,
        defaults={"strategy": "quasirandom:100", "schedule": "adam:0.01:1000+bfgs:500"},
    )


# Wind U = [0, 2], so <∇u/‖∇u‖, U> = 2 u_y / ‖∇u‖; slope factor is zero
LEVELSET = """
params R0, A
default R0 = 0.1125
default A = 0.2
ivars t, x, y
dvars u(t, x, y)
domain t in [0, 1]
domain x in [0, 1]
domain y in [0, 1]
eq Dt(u(t, x, y)) + R0*(1 + 0.157*max(abs(0.44*2*Dy(u(t, x, y))/norm(grad(u(t, x, y), x, y)))^0.041, 1.45))*norm(grad(u(t, x, y), x, y)) = 0
bc u(0, x, y) = sqrt((x - 0.5)^2 + (y - 0.5)^2) - A
"""

LEVELSET_WIND_FACTOR = 0.157 * 1.45


def levelset_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """
    Distance to the ignition point with a unit gradient everywhere.

    At the ignition point itself the cone has no gradient; the subgradient
    (1, 0) is used there so that |∇u| = 1 holds on the whole domain.
    """
    dx, dy = x - 0.5, y - 0.5
    squared = dx ** 2 + dy ** 2
    apex = squared == 0
    distance = torch.sqrt(torch.where(apex, torch.ones_like(squared), squared))
    return torch.where(apex, dx, distance)


def _levelset() -> BenchmarkProblem:
    def oracle(params):
        # |0.44·⟨n, U⟩|^0.041 < 1 always, so the max picks 1.45 and the speed is constant
        speed = float(params["R0"]) * (1 + LEVELSET_WIND_FACTOR)
        a = float(params["A"])
        return {"u": lambda t, x, y: levelset_distance(x, y) - a - speed * t}

    return BenchmarkProblem(
        id="levelset",
        system=parse_system(LEVELSET),
        nets={"u": _dense(3, [16])},
        oracle=oracle,
        defaults={"strategy": "quasirandom:100", "schedule": "adam:0.005:20000"},
    )


ALLENCAHN4D = """
ivars t, x1, x2, x3, x4
dvars u(t, x1, x2, x3, x4)
domain t in [0, 1]
domain x1 in [0, 1]
domain x2 in [0, 1]
domain x3 in [0, 1]
domain x4 in [0, 1]
eq Dt(u(t, x1, x2, x3, x4)) = Dx1x1(u(t, x1, x2, x3, x4)) + Dx2x2(u(t, x1, x2, x3, x4)) + Dx3x3(u(t, x1, x2, x3, x4)) + Dx4x4(u(t, x1, x2, x3, x4)) + u(t, x1, x2, x3, x4) - u(t, x1, x2, x3, x4)^3
bc u(0, x1, x2, x3, x4) = 1/(2 + 0.4*(x1^2 + x2^2 + x3^2 + x4^2))
"""


def _allencahn4d() -> BenchmarkProblem:
    return BenchmarkProblem(
        id="allencahn4d",
        system=parse_system(ALLENCAHN4D),
        nets={"u": _dense(5, [20])},
        defaults={"strategy": "quasirandom:100", "schedule": "adam:0.01:2500"},
    )


# Terminal condition at t = 1, time run forward
HJB5D = """
params lambda
default lambda = 1
ivars t, x1, x2, x3, x4
dvars u(t, x1, x2, x3, x4)
domain t in [0, 1]
domain x1 in [0, 1]
domain x2 in [0, 1]
domain x3 in [0, 1]
domain x4 in [0, 1]
eq Dt(u(t, x1, x2, x3, x4)) + Dx1x1(u(t, x1, x2, x3, x4)) + Dx2x2(u(t, x1, x2, x3, x4)) + Dx3x3(u(t, x1, x2, x3, x4)) + Dx4x4(u(t, x1, x2, x3, x4)) - lambda*norm(grad(u(t, x1, x2, x3, x4), x1, x2, x3, x4))^2 = 0
bc u(1, x1, x2, x3, x4) = log((1 + x1^2 + x2^2 + x3^2 + x4^2)/2)
"""


def _hjb5d() -> BenchmarkProblem:
    return BenchmarkProblem(
        id="hjb5d",
        system=parse_system(HJB5D),
        nets={"u": _dense(5, [20])},
        defaults={"strategy": "quasirandom:100", "schedule": "adam:0.005:2500"},
    )


LORENZ = """
params sigma, rho, beta
default sigma = 1
default rho = 1
default beta = 1
ivars t
dvars x(t), y(t), z(t)
domain t in [0, 1]
eq Dt(x(t)) = sigma*(y(t) - x(t))
eq Dt(y(t)) = x(t)*(rho - z(t)) - y(t)
eq Dt(z(t)) = x(t)*y(t) - beta*z(t)
bc x(0) = 1
bc y(0) = 0
bc z(0) = 0
"""

LORENZ_TRUE_PARAMS = {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}
LORENZ_DATA_STEP = 0.01


@functools.lru_cache(maxsize=4)
def lorenz_trajectory(sigma: float, rho: float, beta: float):
    """Dense DOP853 solution of the Lorenz system from (1, 0, 0) over [0, 1]."""

    def rhs(_t, state):
        x, y, z = state
        return [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]

    solution = solve_ivp(rhs, (0.0, 1.0), [1.0, 0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12, dense_output=True)
    if not solution.success:
        raise RuntimeError(f"Lorenz reference integration failed: {solution.message}")
    return solution.sol


def lorenz_data() -> dict[str, tuple[np.ndarray, np.ndarray]]:
    times = np.linspace(0.0, 1.0, int(round(1.0 / LORENZ_DATA_STEP)) + 1)
    states = lorenz_trajectory(**LORENZ_TRUE_PARAMS)(times)
    return {name: (times.reshape(-1, 1), states[i]) for i, name in enumerate(("x", "y", "z"))}


def _lorenz_reference(name: str, points: np.ndarray, params: dict[str, float]) -> Optional[np.ndarray]:
    index = ("x", "y", "z").index(name)
    return lorenz_trajectory(**LORENZ_TRUE_PARAMS)(points[:, 0])[index]


def _lorenz_inverse() -> BenchmarkProblem:
    net = _dense(1, [8, 8, 8])
    return BenchmarkProblem(
        id="lorenz_inverse",
        system=parse_system(LORENZ),
        nets={"x": net, "y": net, "z": net},
        reference=_lorenz_reference,
        defaults={"strategy": "grid:0.01", "schedule": "bfgs:5000", "param_estim": "true"},
        data=lorenz_data,
        param_estim=True,
        true_params=dict(LORENZ_TRUE_PARAMS),
    )


PDAE_SYSTEM = """
ivars t, x
dvars u1(t, x), u2(t, x), u3(t, x)
domain t in [0, 1]
domain x in [0, 1]
eq Dtt(u1(t, x)) = Dxx(u1(t, x)) + u3(t, x)*sin(pi*x)
eq Dtt(u2(t, x)) = Dxx(u2(t, x)) + u3(t, x)*cos(pi*x)
eq 0 = u1(t, x)*sin(pi*x) + u2(t, x)*cos(pi*x) - exp(-t)
bc u1(0, x) = sin(pi*x)
bc u2(0, x) = cos(pi*x)
bc Dt(u1(0, x)) = -sin(pi*x)
bc Dt(u2(0, x)) = -cos(pi*x)
bc u1(t, 0) = 0
bc u2(t, 0) = exp(-t)
bc u1(t, 1) = 0
bc u2(t, 1) = -exp(-t)
"""


def _pdae_system() -> BenchmarkProblem:
    def oracle(params):
        return {
            "u1": lambda t, x: torch.exp(-t) * torch.sin(math.pi * x),
            "u2": lambda t, x: torch.exp(-t) * torch.cos(math.pi * x),
            "u3": lambda t, x: (1 + math.pi**2) * torch.exp(-t) + 0 * x,
        }

    net = _dense(2, [20, 20])
    return BenchmarkProblem(
        id="pdae_system",
        system=parse_system(PDAE_SYSTEM),
        nets={"u1": net, "u2": net, "u3": net},
        oracle=oracle,
        defaults={"strategy": "quadrature", "schedule": "bfgs:200+adam:0.01:10000+bfgs:200"},
    )


# Spherical diffusion K/r² ∂_r(r² ∂_r c) written out as K (c_rr + 2 c_r / r)
SPM = f"""
ivars t, rn, rp
dvars Q(t), cn(t, rn), cp(t, rp)
domain t in [0, {SPM_T_END!r}]
domain rn in [0, 1]
domain rp in [0, 1]
eq Dt(Q(t)) = {SPM_CHARGE_RATE!r}
eq Dt(cn(t, rn)) = {SPM_RATE_N!r}*(Drnrn(cn(t, rn)) + 2/rn*Drn(cn(t, rn)))
eq Dt(cp(t, rp)) = {SPM_RATE_P!r}*(Drprp(cp(t, rp)) + 2/rp*Drp(cp(t, rp)))
bc Q(0) = 0
bc cn(0, rn) = {SPM_INITIAL_N!r}
bc cp(0, rp) = {SPM_INITIAL_P!r}
bc Drn(cn(t, 0)) = 0
bc Drn(cn(t, 1)) = {SPM_FLUX_N!r}
bc Drp(cp(t, 0)) = 0
bc Drp(cp(t, 1)) = {SPM_FLUX_P!r}
"""


def _spm() -> BenchmarkProblem:
    def oracle(params):
        return {"Q": lambda t: SPM_CHARGE_RATE * t}

    table = _table_reference("spm")
    net = MlpSpec.dense([2, 50, 50, 1], activation="gelu")
    return BenchmarkProblem(
        id="spm",
        system=parse_system(SPM),
        nets={"Q": MlpSpec.dense([1, 50, 50, 1], activation="gelu"), "cn": net, "cp": net},
        oracle=oracle,
        reference=table,
        defaults={
            "strategy": "quadrature:abstol=1e-5:reltol=1:maxiters=1000",
            "schedule": "adam:0.0003:50000",
        },
    )


REDUCED_P2D = f"""
ivars t, x
dvars ce(t, x), phie(t, x)
domain t in [0, {P2D_T_END!r}]
domain x in [0, 1]
eq Dt(ce(t, x)) = Dxx(ce(t, x)) + piecewise(x; 0.4: 1, 0.6: 0, else: -1)
eq 0 = Dxx(ce(t, x)) - Dxx(phie(t, x)) - piecewise(x; 0.4: 1, 0.6: 0, else: -1)
bc ce(0, x) = 1
bc phie(0, x) = 0
bc Dx(ce(t, 0)) = 0
bc Dx(ce(t, 1)) = 0
bc phie(t, 0) = 0
bc Dx(phie(t, 1)) = 0
"""


def _reduced_p2d() -> BenchmarkProblem:
    net = MlpSpec.dense([2, 50, 50, 1], activation="gelu")
    return BenchmarkProblem(
        id="reduced_p2d",
        system=parse_system(REDUCED_P2D),
        nets={"ce": net, "phie": net},
        reference=_table_reference("reduced_p2d"),
        defaults={"strategy": "quasirandom:200", "schedule": "adam:0.001:5000"},
    )


_BUILDERS: dict[str, Callable[[], BenchmarkProblem]] = {
    "poisson2d": _poisson2d,
    "diffusion1d": _diffusion1d,
    "burgers": _burgers,
    "levelset": _levelset,
    "allencahn4d": _allencahn4d,
    "hjb5d": _hjb5d,
    "lorenz_inverse": _lorenz_inverse,
    "pdae_system": _pdae_system,
    "spm": _spm,
    "reduced_p2d": _reduced_p2d,
}

PROBLEM_IDS = tuple(_BUILDERS)


def builtin_problem(problem_id: str) -> BenchmarkProblem:
    """The fully configured built-in problem ``problem_id``."""
    try:
        builder = _BUILDERS[problem_id]
    except KeyError:
        raise UnknownProblemError(f"Unknown problem {problem_id!r}; expected one of {', '.join(PROBLEM_IDS)}") from None
    return builder()
