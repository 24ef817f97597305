#!/usr/bin/env python3
"""Unit tests for the discrete Euler-Lagrange assembly."""

import numpy as np
import pytest
import torch

from lagfield.models.density import ConstantDensity, WaveDensity, gauge_wrap, neural_density_init
from lagfield.models.field_grid import FieldGrid, MeshMismatchError
from lagfield.services.del_service import (
    assemble,
    del_field,
    del_residual,
    del_sum_squares,
    grid_stencils,
    stack_grids,
)


def explicit_wave_residual(U, i, j):
    """-(second time difference) + (second space difference) - u for the quadratic wave density."""
    u = U.values[..., 0]
    mesh = U.mesh
    M = mesh.M
    dtt = (u[i + 1, j] - 2 * u[i, j] + u[i - 1, j]) / mesh.dt**2
    dxx = (u[i, (j + 1) % M] - 2 * u[i, j] + u[i, j - 1]) / mesh.dx**2
    return -dtt + dxx - u[i, j]


class TestGridStencils:
    """Test the batched stencil layout."""

    def test_slots(self, random_grid):
        values = torch.tensor(random_grid.values)

        a, b, c = grid_stencils(values)

        assert a.shape == (random_grid.mesh.N, random_grid.mesh.M, 1)
        for i, j in [(0, 0), (3, random_grid.mesh.M - 1), (random_grid.mesh.N - 1, 5)]:
            stencil = random_grid.stencil_at(i, j)
            assert a[i, j].tolist() == stencil.a.tolist()
            assert b[i, j].tolist() == stencil.b.tolist()
            assert c[i, j].tolist() == stencil.c.tolist()

    def test_too_few_rows(self, wave_density):
        with pytest.raises(ValueError, match="three time rows"):
            assemble(wave_density, torch.zeros(2, 5, 1, dtype=torch.float64))


class TestDelResidual:
    """Test pointwise and fieldwise DEL residuals."""

    def test_zero_grid(self, mesh, wave_density):
        field = del_field(wave_density, FieldGrid.zeros(mesh))

        assert field.max_abs() == 0.0

    @pytest.mark.parametrize("k", [0.5, -2.0, 3.25])
    def test_constant_grid(self, mesh, wave_density, k):
        """Test that a constant grid k leaves only the potential term, -k."""
        grid = FieldGrid(mesh, np.full((mesh.N + 1, mesh.M), k))

        field = del_field(wave_density, grid)

        np.testing.assert_allclose(field.values, -k, rtol=1e-12)

    def test_matches_explicit_formula(self, random_grid, wave_density):
        """Test the residual against the discretised wave operator."""
        field = del_field(wave_density, random_grid)

        for i in range(1, random_grid.mesh.N):
            for j in range(random_grid.mesh.M):
                expected = explicit_wave_residual(random_grid, i, j)
                assert field.at(i, j)[0] == pytest.approx(expected, rel=1e-10, abs=1e-9)

    def test_pointwise_matches_field(self, random_grid):
        density = neural_density_init(0)
        field = del_field(density, random_grid)

        for i, j in [(1, 0), (7, random_grid.mesh.M - 1), (random_grid.mesh.N - 1, 4)]:
            np.testing.assert_allclose(del_residual(density, random_grid, i, j), field.at(i, j), rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("i", [0, 20])
    def test_boundary_rows_rejected(self, random_grid, wave_density, i):
        with pytest.raises(IndexError):
            del_residual(wave_density, random_grid, i, 0)

    def test_dimension_mismatch(self, mesh, wave_density):
        with pytest.raises(ValueError, match="dimension"):
            del_field(wave_density, FieldGrid.zeros(mesh, d=2))

    def test_constant_density_has_no_residual(self, random_grid):
        assert del_field(ConstantDensity(4.0), random_grid).max_abs() == 0.0


class TestDelStructure:
    """Test structural properties of the DEL operator."""

    def test_space_roll_equivariance(self, random_grid):
        density = neural_density_init(2)

        rolled = del_field(density, random_grid.roll_space(3))
        expected = np.roll(del_field(density, random_grid).values, 3, axis=1)

        np.testing.assert_allclose(rolled.values, expected, rtol=1e-12, atol=1e-14)

    def test_additivity(self, random_grid, wave_density):
        neural = neural_density_init(1)

        total = del_field(wave_density + neural, random_grid).values
        parts = del_field(wave_density, random_grid).values + del_field(neural, random_grid).values

        np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-10)

    def test_gauge_scales_residual(self, random_grid):
        """Test that s * L + gauge terms has s times the residual of L."""
        base = neural_density_init(3)
        gauged = gauge_wrap(base, 3.0, chi1=lambda u: u**3, chi2=lambda u: u * u, chi3=lambda u: u.tanh())

        scaled = del_field(gauged, random_grid).values
        expected = 3.0 * del_field(base, random_grid).values

        np.testing.assert_allclose(scaled, expected, rtol=1e-9, atol=1e-10)

    def test_sum_squares(self, small_dataset):
        density = neural_density_init(0)

        expected = sum(del_field(density, grid).sum_squares() for grid in small_dataset)

        assert del_sum_squares(density, small_dataset) == pytest.approx(expected, rel=1e-12)

    def test_batched_assembly_matches_single(self, small_dataset):
        density = neural_density_init(0)

        residual, _ = assemble(density, stack_grids(small_dataset))

        for k, grid in enumerate(small_dataset):
            np.testing.assert_allclose(
                residual[k].detach().numpy(), del_field(density, grid).values, rtol=1e-12, atol=1e-14
            )

    def test_stack_rejects_mixed_meshes(self, mesh):
        with pytest.raises(MeshMismatchError):
            stack_grids([FieldGrid.zeros(mesh), FieldGrid.zeros(mesh.with_steps(10))])
