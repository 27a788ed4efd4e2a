"""Pytest configuration and fixtures."""
import numpy as np
import pytest

import reference_solvers
from config import settings
from lowering import lower_system
from mlp_jet import MlpSpec
from pde_ir import parse_system


POISSON_SPEC = """
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

HEAT1D_SPEC = """
params k
default k = 1
ivars t, x
dvars u(t, x)
domain t in [0, 1]
domain x in [0, 1]
eq Dt(u(t, x)) = k*Dxx(u(t, x))
bc u(0, x) = sin(pi*x)
bc u(t, 0) = 0
bc u(t, 1) = 0
"""


@pytest.fixture(autouse=True)
def reference_dir(tmp_path, monkeypatch):
    """Keep reference tables out of the working tree."""
    directory = tmp_path / "reference_tables"
    monkeypatch.setattr(settings, "REFERENCE_DIR", str(directory))
    monkeypatch.setattr(reference_solvers, "_loaded", {})
    return directory


@pytest.fixture
def poisson_system():
    """Poisson problem on the unit square."""
    return parse_system(POISSON_SPEC)


@pytest.fixture
def heat_system():
    """1-D heat equation with a physical parameter."""
    return parse_system(HEAT1D_SPEC)


@pytest.fixture
def small_net():
    """2 -> 6 -> 1 sigmoid network."""
    return MlpSpec.dense([2, 6, 1])


@pytest.fixture
def poisson_program(poisson_system, small_net):
    """Lowered Poisson program with a small network."""
    return lower_system(poisson_system, {"u": small_net})


@pytest.fixture
def heat_program(heat_system, small_net):
    """Lowered heat program with k estimated."""
    return lower_system(heat_system, {"u": small_net}, param_estim=True)


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(1234)
