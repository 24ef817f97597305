"""Newton propagation service for lagfield.

This module solves the DEL equation at (i, j) for the unknown u^{i+1}_j and
sweeps a grid forward in time from two initial rows. The Newton Jacobian is the
mixed block d12 = d^2 L_d / da db of the only density term containing
u^{i+1}_j.
"""

import logging
from typing import Any, List, NamedTuple, Optional, Tuple

import numpy as np
import torch

from ..config.settings import SolverConfig
from ..models.density import DensityModel
from ..models.field_grid import FieldGrid
from ..models.mesh import Mesh
from ..models.newton_report import NewtonReport, summarize_reports
from .autodiff import DTYPE, as_tensor
from .del_service import assemble

logger = logging.getLogger(__name__)

EPS = float(torch.finfo(DTYPE).eps)


class NewtonError(RuntimeError):
    """Raised when a Newton solve fails.

    Attributes:
        i (Optional[int]): Time index of the DEL equation being solved
        j (Optional[int]): Space index of the DEL equation being solved
    """

    def __init__(self, message: str, i: Optional[int] = None, j: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.i = i
        self.j = j

    def locate(self, i: int, j: int) -> "NewtonError":
        self.i, self.j = i, j
        return self

    def __str__(self) -> str:
        if self.i is None:
            return self.message
        return f"{self.message} (at i={self.i}, j={self.j})"


class SingularJacobianError(NewtonError):
    """The d12 block is not invertible: the density is degenerate there."""


class NoConvergenceError(NewtonError):
    """Newton did not reach the residual tolerance within max_iterations."""


class Neighbours(NamedTuple):
    """The six known values the DEL equation at (i, j) reads besides u^{i+1}_j."""

    u_ij: Any
    u_ijp1: Any
    u_im1j: Any
    u_im1jp1: Any
    u_ijm1: Any
    u_ip1jm1: Any


def _spectral_inverse_norm(d12: torch.Tensor) -> float:
    singular_values = torch.linalg.svdvals(d12)
    smallest = float(singular_values.min())
    return float("inf") if smallest == 0.0 else 1.0 / smallest


def rho_star(density: DensityModel, a: Any, b: Any, c: Any) -> float:
    """Spectral norm of inv(d12) at the stencil (a, b, c); inf when singular."""
    with torch.no_grad():
        d12 = density.derivatives(as_tensor(a), as_tensor(b), as_tensor(c)).d12
    return _spectral_inverse_norm(d12)


def _newton_update(jacobian: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    singular_values = torch.linalg.svdvals(jacobian)
    largest = float(singular_values.max())
    smallest = float(singular_values.min())
    if not np.isfinite(largest) or largest == 0.0 or smallest <= EPS * largest:
        raise SingularJacobianError(
            f"d12 block is singular (singular values {singular_values.tolist()})"
        )
    return torch.linalg.solve(jacobian, -residual)


class SolverService:
    """Service for Newton solves and time propagation."""

    def __init__(self, config: Optional[SolverConfig] = None):
        """Initialize the solver.

        Args:
            config: Solver settings (defaults if None)
        """
        self.config = config or SolverConfig()

    def newton_step_solve(
        self, density: DensityModel, neighbours: Neighbours, guess: Any
    ) -> Tuple[np.ndarray, NewtonReport]:
        """Solve the DEL equation at one point for u^{i+1}_j.

        A solve whose update shrinks to rounding level is accepted even if its residual
        is still above tolerance; the report then has at_floor set.

        Args:
            density: Density model
            neighbours: The six known neighbour values
            guess: Starting value for u^{i+1}_j

        Returns:
            Tuple of the solution and its NewtonReport

        Raises:
            SingularJacobianError: If d12 is singular along the iteration
            NoConvergenceError: If the tolerance is not met within max_iterations
        """
        cfg = self.config
        d = density.d
        nb = Neighbours(*(as_tensor(np.atleast_1d(v)).reshape(d) for v in neighbours))

        with torch.no_grad():
            known = density.derivatives(
                torch.stack([nb.u_im1j, nb.u_ijm1]),
                torch.stack([nb.u_ij, nb.u_ip1jm1]),
                torch.stack([nb.u_im1jp1, nb.u_ij]),
            ).grad
            known_terms = known[0, 1] + known[1, 2]

            u = as_tensor(np.atleast_1d(guess)).reshape(d).clone()
            errors: List[float] = []
            at_floor = False
            for iteration in range(cfg.max_iterations + 1):
                derivs = density.derivatives(nb.u_ij, u, nb.u_ijp1)
                residual = derivs.grad[0] + known_terms
                norm = float(torch.linalg.vector_norm(residual))
                errors.append(norm)
                if not np.isfinite(norm):
                    raise NoConvergenceError(f"non-finite residual after {iteration} iterations")
                if norm <= cfg.residual_tolerance or at_floor:
                    report = NewtonReport(
                        iterations=iteration,
                        final_residual_norm=norm,
                        rho_star=_spectral_inverse_norm(derivs.d12),
                        per_iteration_errors=errors,
                        at_floor=at_floor and norm > cfg.residual_tolerance,
                    )
                    logger.debug(report.summary_line())
                    return u.numpy(), report
                if iteration == cfg.max_iterations:
                    break
                delta = _newton_update(derivs.d12, residual)
                u = u + delta
                scale = cfg.floor_factor * EPS * (1.0 + float(torch.linalg.vector_norm(u)))
                at_floor = float(torch.linalg.vector_norm(delta)) <= scale

        raise NoConvergenceError(
            f"residual {errors[-1]:.3e} above tolerance {cfg.residual_tolerance:.1e} "
            f"after {cfg.max_iterations} iterations"
        )

    def initial_guess(self, previous: np.ndarray, current: np.ndarray) -> np.ndarray:
        """Starting row for u^{i+1} from rows i-1 and i."""
        if self.config.initial_guess_strategy == "linear_extrapolation":
            return 2.0 * current - previous
        return current.copy()

    @staticmethod
    def _row_residual(density: DensityModel, rows: np.ndarray) -> float:
        with torch.no_grad():
            residual, _ = assemble(density, torch.from_numpy(rows))
        return float(torch.linalg.vector_norm(residual, dim=-1).max())

    def propagate(
        self,
        density: DensityModel,
        row0: Any,
        row1: Any,
        mesh: Mesh,
        reports: Optional[List[NewtonReport]] = None,
    ) -> FieldGrid:
        """Propagate two initial rows to a full grid on the mesh.

        Each row is swept j = 0..M-1; the solve at j = 0 reads u^{i+1}_{M-1}
        from the previous sweep (the initial guess on the first one). A row is
        re-swept until its residual meets the tolerance or the sweep no longer
        changes it.

        Args:
            density: Density model
            row0: Row u^0, shape (M,) or (M, d)
            row1: Row u^1, shape (M,) or (M, d)
            mesh: Mesh fixing N and M
            reports: If given, receives the NewtonReport of every solve

        Returns:
            FieldGrid whose rows 0 and 1 equal the inputs bit for bit

        Raises:
            NewtonError: Located at the failing (i, j)
        """
        cfg = self.config
        M, d = mesh.M, density.d
        values = np.empty((mesh.N + 1, M, d), dtype=np.float64)
        for k, row in enumerate((row0, row1)):
            array = np.asarray(row, dtype=np.float64)
            if array.ndim == 1 and d == 1:
                array = array[:, np.newaxis]
            if array.shape != (M, d):
                raise ValueError(f"initial rows must have shape ({M}, {d}), got {array.shape}")
            values[k] = array

        collected: List[NewtonReport] = []
        for i in range(1, mesh.N):
            previous, current = values[i - 1], values[i]
            upcoming = self.initial_guess(previous, current)
            for sweep in range(cfg.max_row_sweeps):
                before = upcoming.copy()
                for j in range(M):
                    neighbours = Neighbours(
                        current[j], current[(j + 1) % M],
                        previous[j], previous[(j + 1) % M],
                        current[j - 1], upcoming[j - 1],
                    )
                    try:
                        value, report = self.newton_step_solve(density, neighbours, upcoming[j])
                    except NewtonError as e:
                        e.locate(i, j)
                        logger.error(f"Propagation failed: {e}")
                        raise
                    upcoming[j] = value
                    collected.append(report.located(i, j, sweep))

                change = float(np.max(np.abs(upcoming - before)))
                closed = cfg.floor_factor * EPS * (1.0 + float(np.max(np.abs(upcoming))))
                residual = self._row_residual(density, np.stack([previous, current, upcoming]))
                if residual <= cfg.residual_tolerance or (sweep > 0 and change <= closed):
                    break
            else:
                error = NoConvergenceError(
                    f"row {i + 1} did not close after {cfg.max_row_sweeps} sweeps "
                    f"(residual {residual:.3e})"
                )
                error.locate(i, 0)
                logger.error(f"Propagation failed: {error}")
                raise error
            values[i + 1] = upcoming

        summary = summarize_reports(collected)
        if summary.get("at_floor"):
            logger.warning(
                f"{summary['at_floor']} Newton solves accepted at floating-point resolution "
                f"above tolerance {cfg.residual_tolerance:.1e}"
            )
        logger.info(f"Propagated {mesh.N - 1} rows on {mesh!r}: {summary}")
        if reports is not None:
            reports.extend(collected)
        return FieldGrid(mesh, values)


def newton_step_solve(
    density: DensityModel,
    neighbours: Neighbours,
    guess: Any,
    cfg: Optional[SolverConfig] = None,
) -> Tuple[np.ndarray, NewtonReport]:
    """Solve the DEL equation at one point; see ``SolverService.newton_step_solve``."""
    return SolverService(cfg).newton_step_solve(density, neighbours, guess)


def propagate(
    density: DensityModel,
    row0: Any,
    row1: Any,
    mesh: Mesh,
    cfg: Optional[SolverConfig] = None,
    reports: Optional[List[NewtonReport]] = None,
) -> FieldGrid:
    """Propagate two initial rows; see ``SolverService.propagate``."""
    return SolverService(cfg).propagate(density, row0, row1, mesh, reports)
