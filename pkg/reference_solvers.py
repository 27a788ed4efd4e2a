"""
Finite-difference reference solutions for the benchmarks without a closed form.

Second-order central differences in space, Crank-Nicolson in time with a
short backward-Euler start (Rannacher smoothing) so flux boundary data that
does not match the initial state does not ring. Tables persist as CSV with
a three-line header and are cached under ``settings.REFERENCE_DIR``.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from config import settings

logger = logging.getLogger(__name__)

SOLVER_VERSION = 1
MIN_RESOLUTION = 32
REFERENCE_PROBLEMS = ("diffusion1d", "spm", "reduced_p2d")
STARTUP_STEPS = 2

# Diffusion
DIFFUSION_T_END = 1.0
DIFFUSION_X = (-1.0, 1.0)

# Single particle model
SPM_T_END = 0.15
SPM_CHARGE_RATE = 4.27249308415467
SPM_RATE_N = 8.813457647415216
SPM_RATE_P = 22.598609352346717
SPM_FLUX_N = -0.14182855923368468
SPM_FLUX_P = 0.03237700710041634
SPM_INITIAL_N = 0.8
SPM_INITIAL_P = 0.6

# Reduced P2D: source n on [0, 0.4), s on [0.4, 0.6), p on [0.6, 1]
P2D_T_END = 1.0
P2D_BREAKS = (0.4, 0.6)
P2D_SOURCE = (1.0, 0.0, -1.0)


class ReferenceSolverError(ValueError):
    """Linear solve failed or produced non-finite values."""


@dataclass
class ReferenceField:
    """One dependent variable sampled on a (time, space) grid."""

    name: str
    axes: tuple[str, str]
    t: np.ndarray
    s: np.ndarray
    values: np.ndarray
    _interpolator: Optional[RegularGridInterpolator] = field(default=None, repr=False, compare=False)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        if self._interpolator is None:
            self._interpolator = RegularGridInterpolator(
                (self.t, self.s), self.values, method="cubic", bounds_error=False, fill_value=None
            )
        return self._interpolator(np.asarray(points, dtype=np.float64).reshape(-1, 2))


@dataclass
class ReferenceTable:
    problem: str
    resolution: int
    fields: dict[str, ReferenceField]

    def evaluate(self, name: str, points: np.ndarray) -> np.ndarray:
        if name not in self.fields:
            raise KeyError(f"Reference table for {self.problem} has no variable {name!r}")
        return self.fields[name](points)

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for ref in self.fields.values():
            tt, ss = np.meshgrid(ref.t, ref.s, indexing="ij")
            frames.append(pd.DataFrame({
                "variable": ref.name,
                "t_axis": ref.axes[0],
                "s_axis": ref.axes[1],
                "t": tt.reshape(-1),
                "s": ss.reshape(-1),
                "value": ref.values.reshape(-1),
            }))
        return pd.concat(frames, ignore_index=True)

    @classmethod
    def from_frame(cls, problem: str, resolution: int, frame: pd.DataFrame) -> "ReferenceTable":
        fields = {}
        for name, group in frame.groupby("variable", sort=False):
            t = np.unique(group["t"].to_numpy())
            s = np.unique(group["s"].to_numpy())
            ordered = group.sort_values(["t", "s"])
            values = ordered["value"].to_numpy().reshape(t.size, s.size)
            axes = (str(group["t_axis"].iloc[0]), str(group["s_axis"].iloc[0]))
            fields[str(name)] = ReferenceField(str(name), axes, t, s, values)
        return cls(problem, resolution, fields)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def _march(
    operator: sparse.spmatrix,
    source: Callable[[float], np.ndarray],
    initial: np.ndarray,
    times: np.ndarray,
) -> np.ndarray:
    """Solve du/dt = A u + b(t); returns (len(times), n)."""
    n = initial.size
    dt = float(times[1] - times[0])
    identity = sparse.identity(n, format="csc")
    operator = sparse.csc_matrix(operator)
    try:
        # backward Euler at dt/2 shares the Crank-Nicolson left matrix
        lu = splu(sparse.csc_matrix(identity - 0.5 * dt * operator))
    except RuntimeError as exc:
        raise ReferenceSolverError(f"Factorization failed: {exc}") from exc
    explicit = identity + 0.5 * dt * operator

    out = np.empty((times.size, n))
    out[0] = initial
    u = initial.copy()
    for k in range(1, times.size):
        t0 = float(times[k - 1])
        if k <= STARTUP_STEPS:
            u = lu.solve(u + 0.5 * dt * source(t0 + 0.5 * dt))
            u = lu.solve(u + 0.5 * dt * source(t0 + dt))
        else:
            u = lu.solve(explicit @ u + 0.5 * dt * (source(t0) + source(t0 + dt)))
        if not np.all(np.isfinite(u)):
            raise ReferenceSolverError(f"Non-finite values at time step {k}")
        out[k] = u
    return out


def _check_resolution(resolution: int) -> None:
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"Reference resolution must be >= {MIN_RESOLUTION}, got {resolution}")


def _laplacian(n: int, h: float) -> sparse.lil_matrix:
    """(1, -2, 1)/h² on interior rows; boundary rows left empty."""
    a = sparse.lil_matrix((n, n))
    for j in range(1, n - 1):
        a[j, j - 1] = 1.0 / h**2
        a[j, j] = -2.0 / h**2
        a[j, j + 1] = 1.0 / h**2
    return a


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


def solve_diffusion(resolution: int, diffusivity: float = 1.0) -> ReferenceTable:
    """u_t = D u_xx + (e^-t - π²) sin(πx) on [-1, 1] with u(±1) = 0 and u(0, x) = sin(πx)."""
    _check_resolution(resolution)
    lo, hi = DIFFUSION_X
    x = np.linspace(lo, hi, resolution + 1)
    t = np.linspace(0.0, DIFFUSION_T_END, resolution + 1)
    h = x[1] - x[0]
    operator = diffusivity * _laplacian(x.size, h)
    shape = np.sin(np.pi * x)
    shape[[0, -1]] = 0.0

    def source(time: float) -> np.ndarray:
        return (math.exp(-time) - np.pi**2) * shape

    values = _march(operator, source, shape.copy(), t)
    return ReferenceTable("diffusion1d", resolution, {"u": ReferenceField("u", ("t", "x"), t, x, values)})


def _radial_operator(r: np.ndarray, rate: float, flux: float) -> tuple[sparse.lil_matrix, np.ndarray]:
    """K (c_rr + 2 c_r / r) with symmetry at r=0 and c_r = flux at r=1, via ghost points."""
    n = r.size
    h = r[1] - r[0]
    a = sparse.lil_matrix((n, n))
    # r -> 0 limit of the spherical Laplacian is 3 c_rr
    a[0, 0] = -6.0 * rate / h**2
    a[0, 1] = 6.0 * rate / h**2
    for j in range(1, n - 1):
        a[j, j - 1] = rate * (1.0 / h**2 - 1.0 / (r[j] * h))
        a[j, j] = -2.0 * rate / h**2
        a[j, j + 1] = rate * (1.0 / h**2 + 1.0 / (r[j] * h))
    a[n - 1, n - 2] = 2.0 * rate / h**2
    a[n - 1, n - 1] = -2.0 * rate / h**2
    b = np.zeros(n)
    b[n - 1] = rate * (2.0 * flux / h + 2.0 * flux / r[n - 1])
    return a, b


def solve_spm(resolution: int) -> ReferenceTable:
    """Radial diffusion in both electrode particles; Q(t) has a closed form and is not tabulated."""
    _check_resolution(resolution)
    r = np.linspace(0.0, 1.0, resolution + 1)
    t = np.linspace(0.0, SPM_T_END, resolution + 1)
    fields = {}
    for name, axis, rate, flux, initial in (
        ("cn", "rn", SPM_RATE_N, SPM_FLUX_N, SPM_INITIAL_N),
        ("cp", "rp", SPM_RATE_P, SPM_FLUX_P, SPM_INITIAL_P),
    ):
        operator, boundary = _radial_operator(r, rate, flux)
        values = _march(operator, lambda _t, b=boundary: b, np.full(r.size, initial), t)
        fields[name] = ReferenceField(name, ("t", axis), t, r, values)
    return ReferenceTable("spm", resolution, fields)


def p2d_source(x: np.ndarray) -> np.ndarray:
    return np.select([x < P2D_BREAKS[0], x < P2D_BREAKS[1]], P2D_SOURCE[:2], P2D_SOURCE[2])


def solve_reduced_p2d(resolution: int) -> ReferenceTable:
    """
    c_e from c_t = c_xx + f(x) with zero flux at both ends; φ_e at every time
    level from the constraint φ_xx = c_xx - f with φ(0) = 0 and φ_x(1) = 0.
    """
    _check_resolution(resolution)
    x = np.linspace(0.0, 1.0, resolution + 1)
    t = np.linspace(0.0, P2D_T_END, resolution + 1)
    h = x[1] - x[0]
    n = x.size
    f = p2d_source(x)

    neumann = _laplacian(n, h)
    neumann[0, 0], neumann[0, 1] = -2.0 / h**2, 2.0 / h**2
    neumann[n - 1, n - 2], neumann[n - 1, n - 1] = 2.0 / h**2, -2.0 / h**2
    neumann = sparse.csr_matrix(neumann)
    concentration = _march(neumann, lambda _t: f, np.ones(n), t)

    potential_op = _laplacian(n, h)
    potential_op[0, 0] = 1.0
    potential_op[n - 1, n - 2], potential_op[n - 1, n - 1] = 2.0 / h**2, -2.0 / h**2
    try:
        lu = splu(sparse.csc_matrix(potential_op))
    except RuntimeError as exc:
        raise ReferenceSolverError(f"Factorization failed: {exc}") from exc
    rhs = (neumann @ concentration.T) - f[:, None]
    rhs[0, :] = 0.0
    potential = lu.solve(rhs).T
    if not np.all(np.isfinite(potential)):
        raise ReferenceSolverError("Non-finite electrolyte potential")

    return ReferenceTable("reduced_p2d", resolution, {
        "ce": ReferenceField("ce", ("t", "x"), t, x, concentration),
        "phie": ReferenceField("phie", ("t", "x"), t, x, potential),
    })


def reference_solve(problem: str, resolution: int, params: Optional[dict[str, float]] = None) -> ReferenceTable:
    """Run the solver for ``problem`` at ``resolution`` intervals per axis."""
    params = params or {}
    if problem == "diffusion1d":
        return solve_diffusion(resolution, float(params.get("D", 1.0)))
    if problem == "spm":
        return solve_spm(resolution)
    if problem == "reduced_p2d":
        return solve_reduced_p2d(resolution)
    raise ValueError(f"No reference solver for {problem!r}; expected one of {REFERENCE_PROBLEMS}")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def table_path(problem: str, resolution: int, directory: Union[str, Path, None] = None) -> Path:
    return Path(directory or settings.REFERENCE_DIR) / f"{problem}_{resolution}.csv"


def write_table(table: ReferenceTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# problem: {table.problem}\n")
        fh.write(f"# resolution: {table.resolution}\n")
        fh.write(f"# solver_version: {SOLVER_VERSION}\n")
        table.to_frame().to_csv(fh, index=False, float_format="%.17g")
    return path


def _read_header(path: Path) -> dict[str, str]:
    header = {}
    with path.open(encoding="utf-8") as fh:
        for _ in range(3):
            line = fh.readline()
            if not line.startswith("#"):
                raise ValueError(f"{path}: missing reference-table header")
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
    return header


def read_table(path: Union[str, Path]) -> ReferenceTable:
    path = Path(path)
    header = _read_header(path)
    frame = pd.read_csv(path, skiprows=3)
    return ReferenceTable.from_frame(header["problem"], int(header["resolution"]), frame)


def _is_current(path: Path, problem: str, resolution: int) -> bool:
    try:
        header = _read_header(path)
    except (OSError, ValueError):
        return False
    return (
        header.get("problem") == problem
        and header.get("resolution") == str(resolution)
        and header.get("solver_version") == str(SOLVER_VERSION)
    )


_loaded: dict[tuple[str, int], ReferenceTable] = {}


def load_reference(
    problem: str,
    resolution: Optional[int] = None,
    directory: Union[str, Path, None] = None,
    params: Optional[dict[str, float]] = None,
) -> ReferenceTable:
    """
    Reference table for ``problem``, read from the cache or built and written.

    Non-default parameters are solved in memory and never cached.
    """
    resolution = resolution or settings.REFERENCE_RESOLUTION
    if params and float(params.get("D", 1.0)) != 1.0:
        return reference_solve(problem, resolution, params)

    key = (problem, resolution)
    if key in _loaded and directory is None:
        return _loaded[key]
    path = table_path(problem, resolution, directory)
    if path.exists() and _is_current(path, problem, resolution):
        logger.info(f"Reference table cache hit: {path}")
        table = read_table(path)
    else:
        logger.info(f"Reference table cache miss: building {problem} at resolution {resolution}")
        table = reference_solve(problem, resolution)
        try:
            write_table(table, path)
            logger.info(f"Wrote reference table {path}")
        except OSError as exc:
            logger.warning(f"Could not write reference table {path}: {exc}")
    if directory is None:
        _loaded[key] = table
    return table
