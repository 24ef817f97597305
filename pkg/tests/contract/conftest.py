"""Fixtures for the command-line contract tests."""

import pytest

from lagfield.config.settings import CONFIG_ENV, THREADS_ENV, GenConfig, default_mesh
from lagfield.models.density import WaveDensity, save_checkpoint
from lagfield.services.datagen_service import generate_dataset, write_dataset


@pytest.fixture(autouse=True)
def isolated_run(tmp_path, monkeypatch):
    """Run every command inside tmp_path without configuration from the environment."""
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    monkeypatch.delenv(THREADS_ENV, raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def dataset_dir(tmp_path):
    directory = str(tmp_path / "data")
    write_dataset(directory, generate_dataset(GenConfig(K=2, seed=1)), {"seed": 1})
    return directory


@pytest.fixture
def wave_checkpoint(tmp_path):
    mesh = default_mesh()
    path = str(tmp_path / "wave.toml")
    save_checkpoint(WaveDensity(mesh.dt, mesh.dx), path)
    return path
