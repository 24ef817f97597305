"""Training-data synthesis for lagfield.

Trajectories of the discretised wave equation on a periodic mesh: a smooth
random first row from weighted Fourier sampling, the second row from a
variational discretisation of the semi-discrete wave Lagrangian with a random
initial velocity, and the remaining rows from the explicit update

    u^{i+1} = 2u^i - u^{i-1} + (dt/dx)^2 (u^i_{j-1} - 2u^i_j + u^i_{j+1}) - dt^2 V'(u^i).
"""

import glob
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import toml

from .. import __version__
from ..config.settings import GenConfig
from ..models.density import Potential, WaveDensity, get_potential
from ..models.field_grid import FieldGrid, GridFormatError, read_field_grid, write_grid
from ..models.mesh import Mesh
from .del_service import del_field

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.toml"
RESIDUAL_CHECK = 1e-10


def frequency_weights(M: int, decay: float = 2.0, power: int = 4) -> np.ndarray:
    """m -> M exp(-decay m^power) for the r = M//2 + 1 real-DFT frequencies."""
    m = np.arange(M // 2 + 1, dtype=np.float64)
    return M * np.exp(-decay * m**power)


class SpectralSample:
    """The r = M//2 + 1 complex coefficients of a real DFT of length M.

    Coefficient 0, and the Nyquist coefficient when M is even, are real.
    """

    def __init__(self, M: int, coefficients: Any):
        self.M = int(M)
        self.coefficients = np.asarray(coefficients, dtype=np.complex128)
        if self.coefficients.shape != (self.M // 2 + 1,):
            raise ValueError(f"expected {self.M // 2 + 1} coefficients for M={self.M}")
        if self.coefficients[0].imag != 0.0 or (self.M % 2 == 0 and self.coefficients[-1].imag != 0.0):
            raise ValueError("mean and Nyquist coefficients must be real")

    @classmethod
    def draw(cls, M: int, rng: np.random.Generator) -> "SpectralSample":
        """Standard-normal real and imaginary parts, projected onto the reality constraints."""
        r = M // 2 + 1
        coefficients = rng.standard_normal(r) + 1j * rng.standard_normal(r)
        coefficients[0] = coefficients[0].real
        if M % 2 == 0:
            coefficients[-1] = coefficients[-1].real
        return cls(M, coefficients)

    def to_row(self, weights: Optional[np.ndarray] = None) -> np.ndarray:
        """Inverse real DFT of the (weighted) coefficients."""
        coefficients = self.coefficients if weights is None else self.coefficients * weights
        return np.fft.irfft(coefficients, n=self.M)


def sample_coefficients(M: int, rng: np.random.Generator) -> np.ndarray:
    return SpectralSample.draw(M, rng).coefficients


def sample_initial_row(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Smooth random row u^0 of length M."""
    M = cfg.mesh.M
    return SpectralSample.draw(M, rng).to_row(frequency_weights(M, cfg.weight_decay, cfg.weight_power))


def continuous_lagrangian(u: Any, u_t: Any, u_x: Any, potential: Optional[Potential] = None) -> Any:
    """Wave Lagrangian 1/2 u_t^2 - 1/2 u_x^2 - V(u)."""
    potential = potential or get_potential("quadratic")
    return 0.5 * u_t * u_t - 0.5 * u_x * u_x - potential.value(u)


def semidiscrete_lagrangian(u: np.ndarray, v: np.ndarray, dx: float, potential: Optional[Potential] = None) -> float:
    """L_Sigma(u, v) = sum_j dx L(u_j, v_j) with the periodic forward difference as u_x."""
    u_x = (np.roll(u, -1) - u) / dx
    return float(np.sum(dx * continuous_lagrangian(u, v, u_x, potential)))


def momentum(v: np.ndarray, dx: float) -> np.ndarray:
    """Conjugate momenta p = dL_Sigma/dv = dx v."""
    return dx * np.asarray(v, dtype=np.float64)


def second_row(u0: Any, v0: Any, mesh: Mesh, potential: Optional[Potential] = None) -> np.ndarray:
    """Row u^1 from position u^0 and velocity v^0.

    With the discrete Lagrangian dt * L_Sigma(u^1, (u^1 - u^0)/dt), the discrete
    Legendre condition p^0 = -D1 reads p^0 = dx (u^1 - u^0)/dt, an affine solve.
    The potential and spatial terms sit in the first slot and do not enter it.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    if u0.shape != v0.shape or u0.shape[0] != mesh.M:
        raise ValueError(f"u0 and v0 must both have length {mesh.M}")
    p0 = momentum(v0, mesh.dx)
    return u0 + mesh.dt * p0 / mesh.dx


def reference_solve(
    u0: Any, u1: Any, mesh: Mesh, potential: Optional[Potential] = None, n_steps: Optional[int] = None
) -> FieldGrid:
    """Explicit solve of the discretised wave equation from two rows.

    Args:
        u0: Row 0, shape (M,) or (M, d)
        u1: Row 1, same shape
        mesh: Mesh giving dt, dx and M
        potential: Potential V (quadratic if None)
        n_steps: Number of time steps; defaults to mesh.N

    Returns:
        FieldGrid on ``mesh.with_steps(n_steps)``
    """
    potential = potential or get_potential("quadratic")
    mesh = mesh.with_steps(n_steps) if n_steps is not None and n_steps != mesh.N else mesh
    row0 = np.asarray(u0, dtype=np.float64)
    row1 = np.asarray(u1, dtype=np.float64)
    if row0.ndim == 1:
        row0, row1 = row0[:, np.newaxis], row1[:, np.newaxis]
    if row0.shape != row1.shape or row0.shape[0] != mesh.M:
        raise ValueError(f"rows must share shape ({mesh.M}, d)")

    ratio = (mesh.dt / mesh.dx) ** 2
    dt2 = mesh.dt**2
    values = np.empty((mesh.N + 1,) + row0.shape, dtype=np.float64)
    values[0], values[1] = row0, row1
    for i in range(1, mesh.N):
        u = values[i]
        laplacian = np.roll(u, 1, axis=0) - 2.0 * u + np.roll(u, -1, axis=0)
        gradient = np.asarray(potential.gradient(u))
        values[i + 1] = 2.0 * u - values[i - 1] + ratio * laplacian - dt2 * gradient
    return FieldGrid(mesh, values)


class DatagenService:
    """Service for synthesising wave-equation trajectories."""

    def __init__(self, config: Optional[GenConfig] = None):
        self.config = config or GenConfig()

    @property
    def potential(self) -> Potential:
        return get_potential(self.config.potential)

    def trajectory(self, rng: np.random.Generator) -> FieldGrid:
        """One trajectory from a random stream."""
        mesh = self.config.mesh
        u0 = sample_initial_row(self.config, rng)
        v0 = rng.standard_normal(mesh.M)
        u1 = second_row(u0, v0, mesh, self.potential)
        return reference_solve(u0, u1, mesh, self.potential)

    def generate_dataset(self) -> List[FieldGrid]:
        """K trajectories from per-trajectory streams spawned off the seed."""
        cfg = self.config
        streams = np.random.SeedSequence(cfg.seed).spawn(cfg.K)
        grids = [self.trajectory(np.random.default_rng(stream)) for stream in streams]
        logger.info(f"Generated {len(grids)} trajectories on {cfg.mesh!r} with seed {cfg.seed}")
        return grids

    def residual_check(self, grids: List[FieldGrid]) -> Dict[str, Any]:
        """Max DEL residual of every grid under the generating wave density."""
        density = WaveDensity(self.config.mesh.dt, self.config.mesh.dx, self.potential)
        residuals = [del_field(density, grid).max_abs() for grid in grids]
        worst = max(residuals) if residuals else 0.0
        report = {"max_residual": worst, "threshold": RESIDUAL_CHECK, "passed": worst <= RESIDUAL_CHECK}
        if not report["passed"]:
            logger.warning(f"Dataset residual check failed: {worst:.3e} > {RESIDUAL_CHECK:g}")
        return report


def generate_dataset(cfg: Optional[GenConfig] = None) -> List[FieldGrid]:
    """K independent, seed-determined trajectories."""
    return DatagenService(cfg).generate_dataset()


def trajectory_path(directory: str, k: int) -> str:
    return os.path.join(directory, f"traj_{k}.grid")


def write_dataset(directory: str, grids: List[FieldGrid], manifest: Optional[Dict[str, Any]] = None) -> str:
    """Write traj_<k>.grid files and manifest.toml, replacing any earlier trajectories.

    Returns:
        Path of the manifest
    """
    os.makedirs(directory, exist_ok=True)
    for stale in glob.glob(os.path.join(directory, "traj_*.grid")):
        os.remove(stale)
    for k, grid in enumerate(grids):
        write_grid(grid, trajectory_path(directory, k))
    data = dict(manifest or {})
    data["trajectories"] = len(grids)
    data.setdefault("version", __version__)
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        toml.dump(data, f)
    logger.info(f"Wrote {len(grids)} trajectories to {directory}")
    return path


def read_dataset(directory: str) -> Tuple[List[FieldGrid], Dict[str, Any]]:
    """Read a dataset directory written by ``write_dataset``.

    Raises:
        FileNotFoundError: If the directory or manifest is missing
        GridFormatError: If a trajectory listed in the manifest is missing
    """
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = toml.load(f)

    count = int(manifest.get("trajectories", -1))
    if count < 0:
        raise GridFormatError(f"{directory}: manifest has no trajectory count")
    missing = [k for k in range(count) if not os.path.exists(trajectory_path(directory, k))]
    if missing:
        raise GridFormatError(f"{directory}: manifest lists {count} trajectories, traj_{missing[0]}.grid is missing")
    grids = [read_field_grid(trajectory_path(directory, k)) for k in range(count)]
    logger.info(f"Read {len(grids)} trajectories from {directory}")
    return grids, manifest
