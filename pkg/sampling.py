"""Point generators: uniform lattices, Sobol and Latin-hypercube samples."""
import logging
import math
import warnings
from typing import Sequence

import numpy as np
from scipy.stats import qmc

logger = logging.getLogger(__name__)

SOBOL_MAX_DIMS = 21
_LATTICE_SLACK = 1e-9


class EmptyLatticeError(ValueError):
    """dx leaves no lattice point on some axis."""


class SobolDimensionError(ValueError):
    """More dimensions than the direction-number table covers."""


def axis_lattice(lower: float, upper: float, dx: float, include_endpoints: bool = False) -> np.ndarray:
    """Points lo+dx, lo+2dx, ... strictly inside (lo, hi), or lo..hi with both endpoints."""
    if dx <= 0:
        raise ValueError("dx must be > 0")
    extent = upper - lower
    steps = math.floor(extent / dx + _LATTICE_SLACK)
    tol = _LATTICE_SLACK * max(1.0, abs(extent))
    if include_endpoints:
        points = lower + dx * np.arange(0, steps + 1)
        points = points[points < upper - tol]
        return np.append(points, upper)
    points = lower + dx * np.arange(1, steps + 1)
    return points[points < upper - tol]


def grid_points(lower: Sequence[float], upper: Sequence[float], dx: Sequence[float], include_endpoints: bool = False) -> np.ndarray:
    """Cartesian product of per-axis lattices, shape (N, dims)."""
    lower, upper = np.atleast_1d(lower), np.atleast_1d(upper)
    if lower.size == 0:
        return np.zeros((1, 0))
    axes = []
    for i, (lo, hi) in enumerate(zip(lower, upper)):
        axis = axis_lattice(float(lo), float(hi), float(dx[i]), include_endpoints)
        if axis.size == 0:
            raise EmptyLatticeError(f"dx={dx[i]} leaves no interior point on [{lo}, {hi}]")
        axes.append(axis)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def sobol_points(n: int, dims: int, skip: int = 0) -> np.ndarray:
    """Unscrambled Sobol points with indices skip+1 .. skip+n; index 0 (the origin) is skipped."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return SobolStream(dims, skip).next(n)


def lhs_points(n: int, dims: int, seed: int) -> np.ndarray:
    """Latin hypercube: each axis has exactly one coordinate per 1/n stratum."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return qmc.LatinHypercube(d=dims, seed=seed).random(n)


def uniform_points(n: int, dims: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n, dims))


class SobolStream:
    """Successive blocks of one unscrambled Sobol sequence."""

    def __init__(self, dims: int, skip: int = 0):
        if dims > SOBOL_MAX_DIMS:
            raise SobolDimensionError(f"Sobol sampler supports at most {SOBOL_MAX_DIMS} dimensions, got {dims}")
        if dims < 1:
            raise ValueError("dims must be >= 1")
        self.dims = dims
        self._sampler = qmc.Sobol(d=dims, scramble=False)
        self._sampler.fast_forward(skip + 1)

    def next(self, n: int) -> np.ndarray:
        with warnings.catch_warnings():
            # balance warnings for non-power-of-two block sizes
            warnings.simplefilter("ignore", UserWarning)
            return self._sampler.random(n)


def scale_to(unit: np.ndarray, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    """Map points from the unit cube onto [lower, upper]."""
    lower, upper = np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)
    return lower + unit * (upper - lower)
