import numpy as np
import pytest

from sqra.mesh import build_uniform_1d
from sqra.meshgen import unit_square_mesh
from sqra.physics import discretize
from sqra.presets import PRESETS, build_spec


@pytest.fixture(scope="session")
def square_mesh_small():
    """~240-triangle admissible mesh of the unit square."""
    return unit_square_mesh(10)


@pytest.fixture(scope="session")
def drift_problem_20():
    """Constant-drift 1D preset discretized on 20 cells."""
    mesh = build_uniform_1d(20)
    spec = build_spec(PRESETS["conv-1d"])
    return mesh, spec, discretize(spec, mesh)


@pytest.fixture(scope="session")
def equilibrium_problem_20():
    """1D equilibrium preset (thermal equilibrium exists) on 20 cells."""
    mesh = build_uniform_1d(20)
    spec = build_spec(PRESETS["eq-1d"])
    return mesh, spec, discretize(spec, mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
