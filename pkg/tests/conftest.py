"""Shared pytest configuration and fixtures for lagfield tests."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lagfield.config.settings import GenConfig, default_mesh
from lagfield.models.density import WaveDensity
from lagfield.models.field_grid import FieldGrid
from lagfield.models.mesh import Mesh
from lagfield.services.datagen_service import generate_dataset

settings.register_profile(
    "lagfield",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
settings.load_profile("lagfield")


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the full-scale training and travelling-wave acceptance tests",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale acceptance run, enabled with --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def mesh():
    """The default mesh: T = 0.5, l = 1, dt = 0.025, dx = 0.05."""
    return default_mesh()


@pytest.fixture
def small_mesh():
    """A coarse mesh for fast solver and training tests."""
    return Mesh(T=0.2, l=1.0, N=4, M=8)


@pytest.fixture
def wave_density(mesh):
    return WaveDensity(mesh.dt, mesh.dx)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_grid(mesh, rng):
    return FieldGrid(mesh, rng.standard_normal((mesh.N + 1, mesh.M)))


@pytest.fixture
def small_dataset(mesh):
    """Three exact discrete-wave trajectories on the default mesh."""
    return generate_dataset(GenConfig(K=3, mesh=mesh, seed=7))
