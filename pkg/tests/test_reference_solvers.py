"""Tests for the finite-difference reference solvers and table persistence."""
import math
from unittest.mock import patch

import numpy as np
import pytest

import reference_solvers
from benchmarks import builtin_problem, diffusion_amplitude
from reference_solvers import (
    SPM_FLUX_N,
    SPM_FLUX_P,
    SPM_INITIAL_N,
    SPM_INITIAL_P,
    SPM_RATE_N,
    SPM_RATE_P,
    SPM_T_END,
    load_reference,
    p2d_source,
    read_table,
    reference_solve,
    solve_diffusion,
    solve_reduced_p2d,
    solve_spm,
    table_path,
    write_table,
)


def _diffusion_error(resolution: int) -> float:
    field = solve_diffusion(resolution).fields["u"]
    exact = diffusion_amplitude(field.t[-1]) * np.sin(np.pi * field.s)
    return float(np.max(np.abs(field.values[-1] - exact)))


def test_diffusion_second_order():
    """Halving the grid spacing cuts the final-time error by about four."""
    errors = [_diffusion_error(n) for n in (32, 64, 128)]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert all(order >= 1.8 for order in orders), orders
    assert errors[-1] < 1e-3


def test_diffusion_initial_and_boundary_rows():
    """Row 0 is sin(pi x); the end columns stay zero."""
    field = solve_diffusion(32).fields["u"]
    np.testing.assert_allclose(field.values[0], np.sin(np.pi * field.s), atol=1e-15)
    np.testing.assert_array_equal(field.values[:, 0], 0.0)
    np.testing.assert_array_equal(field.values[:, -1], 0.0)


def test_spm_initial_rows():
    """Both particles start at their uniform initial concentrations."""
    table = solve_spm(32)
    assert set(table.fields) == {"cn", "cp"}
    np.testing.assert_array_equal(table.fields["cn"].values[0], SPM_INITIAL_N)
    np.testing.assert_array_equal(table.fields["cp"].values[0], SPM_INITIAL_P)
    assert table.fields["cn"].axes == ("t", "rn")
    assert table.fields["cp"].t[-1] == pytest.approx(SPM_T_END)


@pytest.mark.parametrize(
    "name, rate, flux, initial",
    [("cn", SPM_RATE_N, SPM_FLUX_N, SPM_INITIAL_N), ("cp", SPM_RATE_P, SPM_FLUX_P, SPM_INITIAL_P)],
)
def test_spm_mass_balance(name, rate, flux, initial):
    """The volume-averaged concentration moves at 3 K times the surface flux."""
    field = solve_spm(64).fields[name]
    r = field.s
    mean = 3 * np.trapz(r**2 * field.values[-1], r)
    assert mean == pytest.approx(initial + 3 * rate * flux * SPM_T_END, abs=1e-2)


def test_p2d_source_intervals():
    """The source is 1, 0 and -1 on [0, 0.4), [0.4, 0.6) and [0.6, 1]."""
    np.testing.assert_array_equal(p2d_source(np.array([0.0, 0.39, 0.4, 0.59, 0.6, 1.0])), [1, 1, 0, 0, -1, -1])


def test_p2d_rows_and_conservation():
    """c_e starts at 1 and keeps unit mean; phi_e is pinned to zero at x = 0."""
    table = solve_reduced_p2d(64)
    ce, phie = table.fields["ce"], table.fields["phie"]
    np.testing.assert_array_equal(ce.values[0], 1.0)
    np.testing.assert_allclose(phie.values[:, 0], 0.0, atol=1e-12)
    for row in ce.values:
        assert np.trapz(row, ce.s) == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.isfinite(phie.values))


def test_interpolation_hits_nodes():
    """Evaluating at grid nodes returns the tabulated values."""
    table = solve_diffusion(32)
    field = table.fields["u"]
    points = np.array([[field.t[5], field.s[7]], [field.t[20], field.s[3]]])
    np.testing.assert_allclose(table.evaluate("u", points), [field.values[5, 7], field.values[20, 3]], atol=1e-12)
    with pytest.raises(KeyError):
        table.evaluate("v", points)


def test_bad_requests():
    """Unknown problems and coarse resolutions are rejected."""
    with pytest.raises(ValueError):
        reference_solve("burgers", 64)
    with pytest.raises(ValueError):
        solve_diffusion(16)


def test_table_round_trip(tmp_path):
    """Written tables read back bit for bit."""
    table = solve_spm(32)
    path = write_table(table, tmp_path / "spm_32.csv")
    restored = read_table(path)
    assert (restored.problem, restored.resolution) == ("spm", 32)
    for name, field in table.fields.items():
        np.testing.assert_array_equal(restored.fields[name].values, field.values)
        np.testing.assert_array_equal(restored.fields[name].s, field.s)
        assert restored.fields[name].axes == field.axes


def test_header_required(tmp_path):
    """Files without the three-line header are not reference tables."""
    path = tmp_path / "bare.csv"
    path.write_text("variable,t_axis,s_axis,t,s,value\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_table(path)


def test_load_reference_caches_on_disk(tmp_path):
    """The first load writes the table; the next one reads it without solving."""
    first = load_reference("reduced_p2d", 32, directory=tmp_path)
    assert table_path("reduced_p2d", 32, tmp_path).exists()
    with patch("reference_solvers.reference_solve") as solve:
        second = load_reference("reduced_p2d", 32, directory=tmp_path)
    solve.assert_not_called()
    np.testing.assert_array_equal(second.fields["phie"].values, first.fields["phie"].values)


def test_stale_table_is_rebuilt(tmp_path):
    """A table from another solver version is solved again."""
    path = write_table(solve_diffusion(32), table_path("diffusion1d", 32, tmp_path))
    path.write_text(path.read_text(encoding="utf-8").replace("# solver_version: 1", "# solver_version: 0"), encoding="utf-8")
    with patch("reference_solvers.reference_solve", wraps=reference_solvers.reference_solve) as solve:
        load_reference("diffusion1d", 32, directory=tmp_path)
    solve.assert_called_once()


def test_non_default_parameters_not_cached(tmp_path):
    """Overridden diffusivities are solved in memory only."""
    table = load_reference("diffusion1d", 32, directory=tmp_path, params={"D": 0.5})
    assert not table_path("diffusion1d", 32, tmp_path).exists()
    default = solve_diffusion(32)
    assert not np.allclose(table.fields["u"].values[-1], default.fields["u"].values[-1])


def test_default_directory_follows_settings(reference_dir):
    """Tables without an explicit directory land in REFERENCE_DIR and stay loaded."""
    first = load_reference("spm", 32)
    assert (reference_dir / "spm_32.csv").exists()
    assert load_reference("spm", 32) is first


def test_benchmark_reference_scores_tables(reference_dir, monkeypatch):
    """Reference-backed problems evaluate through the cached table."""
    monkeypatch.setattr(reference_solvers.settings, "REFERENCE_RESOLUTION", 32)
    problem = builtin_problem("spm")
    values = problem.solution("cn", np.array([[0.0, 0.5], [0.0, 1.0]]))
    np.testing.assert_allclose(values, SPM_INITIAL_N, atol=1e-12)
