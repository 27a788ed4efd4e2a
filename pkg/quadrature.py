"""
Adaptive quadrature over hyper-rectangles.

One dimension uses the 7/15-point Gauss-Kronrod pair; two or more use the
degree-7 Genz-Malik rule with its embedded degree-5 rule as error estimate.
Regions sit in a priority queue keyed by their largest component error and
the worst one is bisected until the tolerance or the region budget is hit.
Integrands are vectorized: f(points (M, d)) -> (M,) or (M, C).
"""
import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from mlp_jet import NonFiniteLossError

logger = logging.getLogger(__name__)

# Kronrod abscissae on [-1, 1] (non-negative half); odd indices are the Gauss nodes
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
# Gauss weights laid out on the 15 Kronrod nodes (zero where the node is Kronrod-only)
_G_WEIGHTS = np.zeros(15)
_G_WEIGHTS[[1, 3, 5]] = _WG[:3]
_G_WEIGHTS[7] = _WG[3]
_G_WEIGHTS[[9, 11, 13]] = _WG[2::-1]

_LAMBDA2 = math.sqrt(9 / 70)
_LAMBDA4 = math.sqrt(9 / 10)
_LAMBDA5 = math.sqrt(9 / 19)

Integrand = Callable[[np.ndarray], np.ndarray]


@dataclass
class IntegralEstimate:
    value: Union[float, np.ndarray]
    error_bound: Union[float, np.ndarray]
    evaluations: int
    converged: bool
    regions: int = 1


class _GenzMalikRule:
    """Unit-cube offsets and weights of the degree-7/5 pair for one dimension."""

    def __init__(self, dim: int):
        n = dim
        eye = np.eye(n)
        offsets = [np.zeros((1, n))]
        offsets.append(np.concatenate([_LAMBDA2 * eye, -_LAMBDA2 * eye]))
        offsets.append(np.concatenate([_LAMBDA4 * eye, -_LAMBDA4 * eye]))
        pairs = []
        for i, j in itertools.combinations(range(n), 2):
            for si, sj in itertools.product((1.0, -1.0), repeat=2):
                p = np.zeros(n)
                p[i], p[j] = si * _LAMBDA4, sj * _LAMBDA4
                pairs.append(p)
        offsets.append(np.array(pairs).reshape(-1, n))
        offsets.append(_LAMBDA5 * np.array(list(itertools.product((1.0, -1.0), repeat=n))))
        self.offsets = np.concatenate(offsets)
        sizes = [1, 2 * n, 2 * n, 2 * n * (n - 1), 2 ** n]
        w7 = [
            (12824 - 9120 * n + 400 * n * n) / 19683,
            980 / 6561,
            (1820 - 400 * n) / 19683,
            200 / 19683,
            6859 / 19683 / 2 ** n,
        ]
        w5 = [
            (729 - 950 * n + 50 * n * n) / 729,
            245 / 486,
            (265 - 100 * n) / 1458,
            25 / 729,
            0.0,
        ]
        self.w7 = np.repeat(w7, sizes)
        self.w5 = np.repeat(w5, sizes)
        self.dim = n
        self.size = self.offsets.shape[0]

    def points(self, center: np.ndarray, half: np.ndarray) -> np.ndarray:
        return center + self.offsets * half

    def apply(self, values: np.ndarray, volume: float, half: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        """(degree-7 value, |I7 - I5|, split axis) for one region's point values (size, C)."""
        i7 = volume * (self.w7 @ values)
        i5 = volume * (self.w5 @ values)
        n = self.dim
        f0 = values[0]
        f2 = values[1:1 + n] + values[1 + n:1 + 2 * n]
        f3 = values[1 + 2 * n:1 + 3 * n] + values[1 + 3 * n:1 + 4 * n]
        # fourth difference per axis, 7*(f2 - 2 f0) - (f3 - 2 f0)
        diff = np.abs(f3 + 12 * f0 - 7 * f2).max(axis=1)
        top = diff.max()
        candidates = np.flatnonzero(diff >= top * (1 - 1e-10) - 1e-300)
        axis = int(candidates[np.argmax(half[candidates])])
        return i7, np.abs(i7 - i5), axis


def _as_matrix(values: np.ndarray, count: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(count, 1)
    if not np.all(np.isfinite(values)):
        raise NonFiniteLossError(float(values[~np.isfinite(values)][0]))
    return values


@dataclass
class _Region:
    lower: np.ndarray
    upper: np.ndarray
    value: np.ndarray
    error: np.ndarray
    axis: int


def integrate_adaptive(
    f: Integrand,
    lower: Sequence[float],
    upper: Sequence[float],
    reltol: float = 1.0,
    abstol: float = 1e-4,
    maxiters: int = 100,
    rule: str = "auto",
) -> IntegralEstimate:
    """
    Adaptively integrate ``f`` over [lower, upper].

    Stops when the summed error bound is within max(abstol, reltol·|value|)
    componentwise, or after ``maxiters`` region evaluations (converged=False).
    An inf or nan integrand value raises NonFiniteLossError.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    dim = lower.size
    if maxiters < 1:
        raise ValueError("maxiters must be >= 1")
    if dim == 0:
        raw = np.asarray(f(np.zeros((1, 0))))
        values = _as_matrix(raw, 1)
        scalar = raw.ndim == 1
        value = values[0]
        return IntegralEstimate(
            value=float(value[0]) if scalar else value,
            error_bound=0.0 if scalar else np.zeros_like(value),
            evaluations=1,
            converged=True,
            regions=1,
        )
    if rule == "auto":
        rule = "gauss_kronrod_1d" if dim == 1 else "h_cubature_genz_malik"
    if rule == "gauss_kronrod_1d" and dim != 1:
        raise ValueError(f"Gauss-Kronrod rule is one-dimensional, got {dim} dimensions")
    if rule == "h_cubature_genz_malik" and dim < 2:
        raise ValueError("Genz-Malik rule needs at least two dimensions")

    genz_malik = _GenzMalikRule(dim) if rule == "h_cubature_genz_malik" else None
    evaluations = 0
    scalar_output = None

    def evaluate(boxes: list[tuple[np.ndarray, np.ndarray]]) -> list[_Region]:
        nonlocal evaluations, scalar_output
        centers = [(lo + hi) / 2 for lo, hi in boxes]
        halves = [(hi - lo) / 2 for lo, hi in boxes]
        if genz_malik is None:
            pts = [c + _GK_NODES.reshape(-1, 1) * h for c, h in zip(centers, halves)]
        else:
            pts = [genz_malik.points(c, h) for c, h in zip(centers, halves)]
        stacked = np.concatenate(pts)
        raw = np.asarray(f(stacked))
        if scalar_output is None:
            scalar_output = raw.ndim == 1
        values = _as_matrix(raw, stacked.shape[0])
        evaluations += stacked.shape[0]
        regions, start = [], 0
        for (lo, hi), c, h, p in zip(boxes, centers, halves, pts):
            chunk = values[start:start + p.shape[0]]
            start += p.shape[0]
            if genz_malik is None:
                kronrod = h[0] * (_GK_WEIGHTS @ chunk)
                gauss = h[0] * (_G_WEIGHTS @ chunk)
                regions.append(_Region(lo, hi, kronrod, np.abs(kronrod - gauss), 0))
            else:
                value, error, axis = genz_malik.apply(chunk, float(np.prod(hi - lo)), h)
                regions.append(_Region(lo, hi, value, error, axis))
        return regions

    counter = itertools.count()
    heap = []
    for region in evaluate([(lower, upper)]):
        heapq.heappush(heap, (-float(region.error.max()), next(counter), region))
    region_evaluations = 1

    def totals():
        value = sum(r.value for _, _, r in heap)
        error = sum(r.error for _, _, r in heap)
        return value, error

    value, error = totals()
    converged = bool(np.all(error <= np.maximum(abstol, reltol * np.abs(value))))
    while not converged and region_evaluations + 2 <= maxiters:
        _, _, worst = heapq.heappop(heap)
        axis = worst.axis
        mid = (worst.lower[axis] + worst.upper[axis]) / 2
        left_upper = worst.upper.copy()
        left_upper[axis] = mid
        right_lower = worst.lower.copy()
        right_lower[axis] = mid
        for region in evaluate([(worst.lower, left_upper), (right_lower, worst.upper)]):
            heapq.heappush(heap, (-float(region.error.max()), next(counter), region))
        region_evaluations += 2
        value, error = totals()
        converged = bool(np.all(error <= np.maximum(abstol, reltol * np.abs(value))))

    if not converged:
        logger.debug(f"Quadrature stopped at {region_evaluations} regions, error {float(np.max(error)):.3e}")
    if scalar_output:
        return IntegralEstimate(float(value[0]), float(error[0]), evaluations, converged, len(heap))
    return IntegralEstimate(value, error, evaluations, converged, len(heap))
