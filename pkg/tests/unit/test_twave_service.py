#!/usr/bin/env python3
"""Unit tests for the travelling-wave loss and search."""

import numpy as np
import pytest
import torch

from lagfield.config.settings import TwConfig
from lagfield.models.density import WaveDensity, neural_density_init
from lagfield.models.travelling_wave import TravellingWaveState, exact_wave_tw
from lagfield.services.del_service import del_field
from lagfield.services.twave_service import (
    TwaveService,
    find_tw,
    perturb_state,
    sample_points,
    tw_functional_residual,
    tw_grid,
    tw_loss,
    tw_loss_gradient,
    tw_residual,
)


class TestTravellingWaveGrid:
    """Test sampling a state onto the mesh."""

    def test_grid_values(self, mesh):
        state, _ = exact_wave_tw(1, 0.3, 1.0, mesh)

        grid = tw_grid(state, mesh)

        for i, j in [(0, 0), (7, 3), (mesh.N, mesh.M - 1)]:
            xi = j * mesh.dx - state.c * i * mesh.dt
            assert grid.values[i, j, 0] == pytest.approx(float(state.profile_eval(xi)[0]), abs=1e-13)

    def test_standing_state(self, mesh, rng):
        """Test that c = 0 repeats row 0."""
        state = TravellingWaveState.from_half(0.0, rng.standard_normal(11), rng.standard_normal(11), mesh.M)

        grid = tw_grid(state, mesh)

        for i in range(1, mesh.N + 1):
            np.testing.assert_array_equal(grid.row(i), grid.row(0))

    def test_shift_by_one_cell(self, mesh, rng):
        """Test that c dt = dx shifts each row one cell to the right."""
        c = mesh.dx / mesh.dt
        state = TravellingWaveState.from_half(c, rng.standard_normal(11), rng.standard_normal(11), mesh.M)

        grid = tw_grid(state, mesh)

        np.testing.assert_allclose(grid.row(1), np.roll(grid.row(0), 1, axis=0), atol=1e-12)

    def test_sample_points(self, mesh):
        points = sample_points(torch.tensor(2.0, dtype=torch.float64), mesh)

        assert points.shape == (mesh.N + 1, mesh.M)
        assert float(points[3, 4]) == pytest.approx(4 * mesh.dx - 2.0 * 3 * mesh.dt)

    def test_mode_count_must_match_mesh(self, mesh):
        with pytest.raises(ValueError, match="modes"):
            tw_grid(TravellingWaveState.zeros(10), mesh)


class TestTravellingWaveLoss:
    """Test the residual and loss of a travelling-wave state."""

    def test_exact_wave_has_no_residual(self, mesh, wave_density):
        state, _ = exact_wave_tw(1, 0.3, 1.0, mesh)

        assert tw_residual(wave_density, state, mesh) <= 1e-18

    def test_wrong_speed_has_residual(self, mesh, wave_density):
        state, _ = exact_wave_tw(1, 0.0, 1.0, mesh)
        slow = TravellingWaveState(0.9 * state.c, state.fhat, state.l)

        assert tw_residual(wave_density, slow, mesh) > 1e-3

    def test_zero_state_regulariser(self, mesh, wave_density):
        """Test that the zero wave costs exactly the regulariser weight."""
        zero = TravellingWaveState.zeros(mesh.M)

        assert tw_loss(wave_density, zero, mesh) == 1.0
        assert tw_loss(wave_density, zero, mesh, reg_weight=0.25) == 0.25
        assert tw_loss(wave_density, zero, mesh, reg_weight=0.0) == 0.0

    def test_regulariser_decays_with_amplitude(self, mesh, wave_density):
        state, _ = exact_wave_tw(1, 0.0, 1e-3, mesh)
        sum_squares = float(np.sum(tw_grid(state, mesh).values ** 2))

        assert tw_loss(wave_density, state, mesh) == pytest.approx(np.exp(-100.0 * sum_squares), rel=1e-9)

    def test_gradient_matches_finite_differences(self, mesh, wave_density):
        exact, _ = exact_wave_tw(1, 0.0, 1.0, mesh)
        state = perturb_state(exact, 0.05, seed=3)
        theta = state.to_parameters().numpy()

        _, gradient = tw_loss_gradient(wave_density, state, mesh, reg_scale=1.0)

        h = 1e-6
        for k in [0, 1, 2, 12, 13, 21]:
            plus, minus = theta.copy(), theta.copy()
            plus[k] += h
            minus[k] -= h
            fd = (
                tw_loss(wave_density, TravellingWaveState.from_parameters(plus, mesh.M), mesh, reg_scale=1.0)
                - tw_loss(wave_density, TravellingWaveState.from_parameters(minus, mesh.M), mesh, reg_scale=1.0)
            ) / (2 * h)
            assert gradient[k] == pytest.approx(fd, rel=1e-5, abs=1e-3)

    def test_functional_residual_matches_grid(self, mesh):
        """Test the shifted-profile residual against the grid residual at mesh points."""
        density = neural_density_init(0)
        exact, _ = exact_wave_tw(2, 0.2, 0.6, mesh)
        state = perturb_state(exact, 0.1, seed=1)
        field = del_field(density, tw_grid(state, mesh))

        for i, j in [(1, 0), (5, 9), (mesh.N - 1, mesh.M - 1)]:
            xi = j * mesh.dx - state.c * i * mesh.dt
            np.testing.assert_allclose(
                tw_functional_residual(density, state, xi, mesh), field.at(i, j), rtol=1e-9, atol=1e-11
            )

    def test_functional_residual_of_exact_wave(self, mesh, wave_density):
        state, _ = exact_wave_tw(3, 0.0, 1.0, mesh)

        for xi in np.linspace(0, 1, 7):
            assert abs(tw_functional_residual(wave_density, state, xi, mesh)[0]) <= 1e-9


class TestPerturbState:
    """Test seeded perturbations."""

    def test_deterministic(self, mesh):
        state, _ = exact_wave_tw(1, 0.0, 1.0, mesh)

        assert perturb_state(state, 0.5, seed=4) == perturb_state(state, 0.5, seed=4)
        assert perturb_state(state, 0.5, seed=4) != perturb_state(state, 0.5, seed=5)

    def test_zero_sigma(self, mesh):
        state, _ = exact_wave_tw(1, 0.0, 1.0, mesh)

        assert perturb_state(state, 0.0, seed=4).to_parameters().tolist() == state.to_parameters().tolist()

    def test_speed_is_perturbed(self, mesh):
        state, _ = exact_wave_tw(1, 0.0, 1.0, mesh)

        assert perturb_state(state, 0.5, seed=0).c != state.c


class TestFindTravellingWave:
    """Test the adam search for travelling waves."""

    def test_exact_wave_is_accepted_immediately(self, mesh, wave_density):
        state, _ = exact_wave_tw(1, 0.0, 1.0, mesh)

        found, history = find_tw(wave_density, state, mesh, TwConfig(steps=100))

        assert len(history) == 1
        assert history[0] < 1e-18
        assert found.c == state.c

    def test_regulariser_escapes_near_zero_wave(self, mesh, wave_density):
        """Test that the regulariser pushes a tiny wave to a visible amplitude."""
        start, _ = exact_wave_tw(1, 0.0, 1e-3, mesh)
        start_norm = np.linalg.norm(tw_grid(start, mesh).values)

        found, history = find_tw(wave_density, start, mesh, TwConfig(steps=500))

        assert np.linalg.norm(tw_grid(found, mesh).values) > 10 * start_norm
        assert tw_loss(wave_density, found, mesh) < 1e-3 * history[0]
        assert abs(found.c - start.c) < 0.1

    def test_without_regulariser_tiny_wave_is_kept(self, mesh, wave_density):
        start, _ = exact_wave_tw(1, 0.0, 1e-3, mesh)

        found, history = find_tw(wave_density, start, mesh, TwConfig(steps=50, reg_weight=0.0))

        assert len(history) == 1
        assert np.linalg.norm(tw_grid(found, mesh).values) < 0.1

    def test_history_length_and_best_state(self, mesh, wave_density):
        exact, _ = exact_wave_tw(1, 0.0, 1.0, mesh)
        start = perturb_state(exact, 0.01, seed=2)

        found, history = TwaveService(TwConfig(steps=20)).find_tw(wave_density, start, mesh)

        assert len(history) == 21
        assert tw_loss(wave_density, found, mesh) == pytest.approx(min(history), rel=1e-9)

    def test_zero_steps(self, mesh, wave_density):
        start = perturb_state(exact_wave_tw(1, 0.0, 1.0, mesh)[0], 0.1, seed=0)

        found, history = find_tw(wave_density, start, mesh, TwConfig(steps=0))

        assert len(history) == 1
        assert found == start

    def test_dimension_mismatch(self, mesh):
        state, _ = exact_wave_tw(1, 0.0, 1.0, mesh, d=2)

        with pytest.raises(ValueError, match="dimension"):
            find_tw(WaveDensity(mesh.dt, mesh.dx), state, mesh)
