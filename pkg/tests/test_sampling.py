"""Tests for lattices and low-discrepancy samplers."""
import numpy as np
import pytest

from sampling import (
    EmptyLatticeError,
    SobolDimensionError,
    SobolStream,
    grid_points,
    lhs_points,
    scale_to,
    sobol_points,
    uniform_points,
)


def _star_discrepancy(points: np.ndarray, boxes: int = 64) -> float:
    """Largest |fraction inside - volume| over anchored boxes on a boxes x boxes family."""
    edges = np.arange(1, boxes + 1) / boxes
    worst = 0.0
    for a in edges:
        inside_x = points[:, 0] < a
        for b in edges:
            fraction = np.mean(inside_x & (points[:, 1] < b))
            worst = max(worst, abs(fraction - a * b))
    return worst


def test_interior_lattice_1d():
    """[0, 1] at dx=0.25 keeps the three strict interior points."""
    np.testing.assert_allclose(grid_points([0.0], [1.0], [0.25])[:, 0], [0.25, 0.5, 0.75])


def test_interior_lattice_2d():
    """The unit square at dx=0.25 has a 3 x 3 interior lattice."""
    points = grid_points([0.0, 0.0], [1.0, 1.0], [0.25, 0.25])
    assert points.shape == (9, 2)
    assert np.all((points > 0) & (points < 1))


def test_endpoint_lattice():
    """Boundary faces include the endpoints of their free axes."""
    np.testing.assert_allclose(grid_points([0.0], [1.0], [0.5], include_endpoints=True)[:, 0], [0.0, 0.5, 1.0])


def test_lattice_clips_non_dividing_step():
    """A step that does not divide the extent stops before the upper end."""
    np.testing.assert_allclose(grid_points([0.0], [1.0], [0.3])[:, 0], [0.3, 0.6, 0.9])


def test_empty_lattice():
    """dx at least the extent leaves no interior point."""
    with pytest.raises(EmptyLatticeError):
        grid_points([0.0], [1.0], [1.0])


def test_zero_dimensional_lattice():
    """No free axes gives one empty point."""
    assert grid_points([], [], []).shape == (1, 0)


def test_sobol_first_points():
    """The 1-D sequence after the origin starts 0.5, 0.75, 0.25."""
    np.testing.assert_allclose(sobol_points(3, 1)[:, 0], [0.5, 0.75, 0.25])


def test_sobol_skip_and_stream_agree():
    """Skipping k points equals drawing k and discarding them."""
    stream = SobolStream(3)
    stream.next(8)
    np.testing.assert_array_equal(stream.next(5), sobol_points(5, 3, skip=8))


def test_sobol_range_and_dimension_limit():
    """Points lie in the half-open unit cube; 22 dimensions are too many."""
    points = sobol_points(100, 21)
    assert np.all((points >= 0) & (points < 1))
    with pytest.raises(SobolDimensionError):
        sobol_points(4, 22)


def test_sobol_beats_uniform_discrepancy():
    """At N=256 in 2-D Sobol has lower star discrepancy than a seeded uniform sample."""
    sobol = _star_discrepancy(sobol_points(256, 2))
    uniform = _star_discrepancy(uniform_points(256, 2, np.random.default_rng(0)))
    assert sobol < uniform


def test_sobol_integration_converges_faster():
    """Sobol integration error at N=4096 is 5x below the median Monte Carlo error."""
    truth = (np.e - 1) ** 2

    def f(points):
        return np.exp(points[:, 0] + points[:, 1])

    sobol_error = abs(np.mean(f(sobol_points(4096, 2))) - truth)
    mc_errors = [abs(np.mean(f(uniform_points(4096, 2, np.random.default_rng(s)))) - truth) for s in range(20)]
    assert 5 * sobol_error < np.median(mc_errors)


def test_lhs_one_point_per_quartile():
    """With n=4 each quarter of the axis holds one coordinate."""
    points = lhs_points(4, 1, seed=3)
    np.testing.assert_array_equal(np.sort(np.floor(points[:, 0] * 4)), [0, 1, 2, 3])


def test_lhs_marginals_flat():
    """Every axis histogram with n bins is exactly one per bin."""
    points = lhs_points(10, 3, seed=9)
    for axis in range(3):
        counts, _ = np.histogram(points[:, axis], bins=10, range=(0, 1))
        np.testing.assert_array_equal(counts, np.ones(10))


def test_lhs_deterministic():
    """The same seed gives the same sample."""
    np.testing.assert_array_equal(lhs_points(16, 2, seed=5), lhs_points(16, 2, seed=5))


def test_scale_to():
    """Unit points map affinely onto the box."""
    np.testing.assert_allclose(scale_to(np.array([[0.0, 0.5], [1.0, 0.25]]), [0, -1], [2, 1]), [[0, 0], [2, -0.5]])
