#!/usr/bin/env python3
"""Unit tests for Newton solves and time propagation."""

import numpy as np
import pytest

from lagfield.config.settings import SolverConfig
from lagfield.models.density import (
    ConstantDensity,
    DensityModel,
    MidpointWaveDensity,
    QuarticPotential,
    WaveDensity,
)
from lagfield.models.field_grid import FieldGrid, Stencil, sup_norm_diff
from lagfield.services import autodiff
from lagfield.services.datagen_service import reference_solve
from lagfield.services.del_service import del_field
from lagfield.services.solver_service import (
    Neighbours,
    NoConvergenceError,
    SingularJacobianError,
    SolverService,
    newton_step_solve,
    propagate,
    rho_star,
)

QUARTIC_NEIGHBOURS = Neighbours(u_ij=5.0, u_ijp1=5.0, u_im1j=4.0, u_im1jp1=4.0, u_ijm1=5.0, u_ip1jm1=6.0)


class PotentialOnlyDensity(DensityModel):
    """L_d = -a^2/2: nonzero residuals, identically zero d12."""

    def stencil_function(self, x):
        a, _, _ = self.split(x)
        return autodiff.total(a * a * -0.5)


def del_at(density, nb, b):
    """DEL residual at (i, j) as a function of the unknown u^{i+1}_j."""
    return float(
        density.d1(Stencil(nb.u_ij, b, nb.u_ijp1))[0]
        + density.d2(Stencil(nb.u_im1j, nb.u_ij, nb.u_im1jp1))[0]
        + density.d3(Stencil(nb.u_ijm1, nb.u_ip1jm1, nb.u_ij))[0]
    )


def bisect(f, lo, hi, steps=80):
    f_lo = f(lo)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestNewtonStepSolve:
    """Test the pointwise Newton solve."""

    def test_wave_density_closed_form(self, mesh, wave_density):
        """Test the linear solve against the explicit wave update."""
        nb = Neighbours(0.3, -0.2, 0.1, 0.4, 0.7, -0.5)
        ratio = (mesh.dt / mesh.dx) ** 2
        expected = (
            2 * nb.u_ij - nb.u_im1j + ratio * (nb.u_ijp1 - 2 * nb.u_ij + nb.u_ijm1) - mesh.dt**2 * nb.u_ij
        )

        value, report = newton_step_solve(wave_density, nb, guess=nb.u_ij)

        assert value[0] == pytest.approx(expected, rel=1e-12, abs=1e-14)
        assert report.iterations <= 2
        assert report.final_residual_norm <= 1e-12 or report.at_floor

    def test_wave_density_rho_star(self, mesh, wave_density):
        """Test that ||inv(d12)|| = dt^2 for the wave density."""
        _, report = newton_step_solve(wave_density, Neighbours(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), guess=0.0)

        assert report.rho_star == pytest.approx(mesh.dt**2, rel=1e-14)
        assert rho_star(wave_density, [0.1], [0.2], [0.3]) == pytest.approx(mesh.dt**2, rel=1e-14)

    def test_zero_neighbours_give_zero(self, wave_density):
        value, report = newton_step_solve(wave_density, Neighbours(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), guess=0.0)

        assert value[0] == 0.0
        assert report.iterations == 0

    def test_quadratic_convergence(self, mesh):
        """Test the nonlinear midpoint quartic solve converges quadratically to the root."""
        density = MidpointWaveDensity(mesh.dt, mesh.dx, QuarticPotential())

        value, report = newton_step_solve(density, QUARTIC_NEIGHBOURS, guess=5.0)

        root = bisect(lambda b: del_at(density, QUARTIC_NEIGHBOURS, b), 5.0, 7.0)
        assert value[0] == pytest.approx(root, abs=1e-10)
        assert report.convergence_order() >= 1.8
        assert report.per_iteration_errors[0] > report.per_iteration_errors[1] > report.per_iteration_errors[2]

    def test_floor_acceptance_above_tolerance(self, mesh):
        """Test that a solve stalled at rounding level is accepted and flagged instead of failing."""
        density = MidpointWaveDensity(mesh.dt, mesh.dx, QuarticPotential())
        solver = SolverService(SolverConfig(residual_tolerance=1e-300, max_iterations=50))

        value, report = solver.newton_step_solve(density, QUARTIC_NEIGHBOURS, guess=5.0)

        root = bisect(lambda b: del_at(density, QUARTIC_NEIGHBOURS, b), 5.0, 7.0)
        assert value[0] == pytest.approx(root, abs=1e-10)
        assert report.iterations < 50
        assert report.at_floor == (report.final_residual_norm > 1e-300)
        assert report.final_residual_norm < 1e-8

    def test_singular_jacobian(self):
        """Test that a degenerate density cannot be solved."""
        with pytest.raises(SingularJacobianError, match="singular"):
            newton_step_solve(PotentialOnlyDensity(), Neighbours(1.0, 0.0, 0.0, 0.0, 0.0, 0.0), guess=0.0)

    def test_constant_density_already_solved(self):
        """Test that a zero residual is accepted before d12 is needed."""
        value, report = newton_step_solve(ConstantDensity(1.0), Neighbours(0.5, 0.0, 0.0, 0.0, 0.0, 0.0), guess=0.25)

        assert value[0] == 0.25
        assert report.iterations == 0
        assert report.rho_star == float("inf")

    def test_no_convergence(self, mesh):
        density = MidpointWaveDensity(mesh.dt, mesh.dx, QuarticPotential())
        cfg = SolverConfig(max_iterations=1, floor_factor=0.0)

        with pytest.raises(NoConvergenceError, match="after 1 iterations"):
            newton_step_solve(density, QUARTIC_NEIGHBOURS, guess=5.0, cfg=cfg)

    def test_vector_field(self, mesh):
        """Test d = 2 neighbours with the componentwise wave density."""
        density = WaveDensity(mesh.dt, mesh.dx, d=2)
        scalar = WaveDensity(mesh.dt, mesh.dx)
        nb2 = Neighbours(*([v, -v] for v in (0.3, -0.2, 0.1, 0.4, 0.7, -0.5)))
        nb1 = Neighbours(0.3, -0.2, 0.1, 0.4, 0.7, -0.5)

        value, _ = newton_step_solve(density, nb2, guess=[0.0, 0.0])
        single, _ = newton_step_solve(scalar, nb1, guess=0.0)

        assert value[0] == pytest.approx(single[0], rel=1e-12)
        assert value[1] == pytest.approx(-single[0], rel=1e-12)


class TestPropagate:
    """Test row-by-row propagation."""

    def test_reproduces_reference(self, small_dataset, wave_density):
        """Test that the wave density propagates data rows back into the data."""
        grid = small_dataset[0]
        reports = []

        propagated = propagate(wave_density, grid.row(0), grid.row(1), grid.mesh, reports=reports)

        assert sup_norm_diff(propagated, grid) <= 1e-10
        assert len(reports) >= (grid.mesh.N - 1) * grid.mesh.M
        assert all(r.i is not None and r.j is not None for r in reports)

    def test_matches_reference_solver_on_longer_mesh(self, small_dataset, wave_density):
        grid = small_dataset[1]
        mesh = grid.mesh.with_steps(60)

        propagated = propagate(wave_density, grid.row(0), grid.row(1), mesh)
        reference = reference_solve(grid.row(0), grid.row(1), mesh)

        assert sup_norm_diff(propagated, reference) <= 1e-9
        assert del_field(wave_density, propagated).max_abs() <= 1e-9

    def test_zero_rows(self, mesh, wave_density):
        propagated = propagate(wave_density, np.zeros(mesh.M), np.zeros(mesh.M), mesh)

        assert propagated == FieldGrid.zeros(mesh)

    def test_initial_rows_kept_bit_for_bit(self, small_dataset, wave_density):
        grid = small_dataset[2]

        propagated = propagate(wave_density, grid.row(0), grid.row(1), grid.mesh.with_steps(3))

        np.testing.assert_array_equal(propagated.row(0), grid.row(0))
        np.testing.assert_array_equal(propagated.row(1), grid.row(1))

    def test_deterministic(self, small_dataset, wave_density):
        grid = small_dataset[0]

        first = propagate(wave_density, grid.row(0), grid.row(1), grid.mesh)
        second = propagate(wave_density, grid.row(0), grid.row(1), grid.mesh)

        assert first == second

    def test_linear_extrapolation_guess(self, small_dataset, wave_density):
        grid = small_dataset[0]
        service = SolverService(SolverConfig(initial_guess_strategy="linear_extrapolation"))

        propagated = service.propagate(wave_density, grid.row(0), grid.row(1), grid.mesh)

        assert sup_norm_diff(propagated, grid) <= 1e-10

    def test_singular_density_located(self, mesh, rng):
        """Test that a failed solve reports where it happened."""
        row0 = rng.standard_normal(mesh.M)
        row1 = rng.standard_normal(mesh.M)

        with pytest.raises(SingularJacobianError) as excinfo:
            propagate(PotentialOnlyDensity(), row0, row1, mesh)

        assert (excinfo.value.i, excinfo.value.j) == (1, 0)
        assert "at i=1, j=0" in str(excinfo.value)

    def test_row_shape_validated(self, mesh, wave_density):
        with pytest.raises(ValueError, match="initial rows"):
            propagate(wave_density, np.zeros(mesh.M + 1), np.zeros(mesh.M), mesh)
