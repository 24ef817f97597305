"""Discrete Euler-Lagrange assembly for lagfield.

The residual at an interior point (i, j) is the derivative of the three density
terms containing u^i_j:

    d2 L(u^{i-1}_j, u^i_j, u^{i-1}_{j+1})
  + d1 L(u^i_j, u^{i+1}_j, u^i_{j+1})
  + d3 L(u^i_{j-1}, u^{i+1}_{j-1}, u^i_j)

with spatial indices taken mod M. No mesh prefactor is applied.
"""

import logging
from typing import Sequence, Tuple

import numpy as np
import torch

from ..models.density import DensityModel, StencilDerivatives
from ..models.field_grid import FieldGrid, MeshMismatchError, ResidualField
from .autodiff import as_tensor

logger = logging.getLogger(__name__)


def grid_stencils(values: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """All stencils of a batch of grids.

    Args:
        values: Tensor of shape (..., R, M, d)

    Returns:
        (a, b, c), each of shape (..., R-1, M, d); entry [.., i, j] is the stencil at (i, j)
    """
    a = values[..., :-1, :, :]
    b = values[..., 1:, :, :]
    c = torch.roll(a, shifts=-1, dims=-2)
    return a, b, c


def assemble(density: DensityModel, values: torch.Tensor) -> Tuple[torch.Tensor, StencilDerivatives]:
    """DEL residuals of every interior point of a batch of grids.

    Differentiable with respect to density parameters. The residual is the plain sum of
    slot derivatives, so under WaveDensity a constant grid k gives -k, not +k.

    Args:
        density: Density model
        values: Tensor of shape (..., R, M, d) with R >= 3

    Returns:
        Residuals of shape (..., R-2, M, d) for rows 1..R-2, and the stencil
        derivatives of shape (..., R-1, M, ...) they were built from
    """
    if values.shape[-3] < 3:
        raise ValueError("at least three time rows are needed for a DEL residual")
    derivs = density.derivatives(*grid_stencils(values))
    g1 = derivs.grad[..., 1:, :, 0, :]
    g2 = derivs.grad[..., :-1, :, 1, :]
    g3 = torch.roll(derivs.grad[..., 1:, :, 2, :], shifts=1, dims=-2)
    return g1 + g2 + g3, derivs


def stack_grids(grids: Sequence[FieldGrid]) -> torch.Tensor:
    """Stack grids sharing mesh and d into a (K, N+1, M, d) tensor.

    Raises:
        MeshMismatchError: If the grids differ in mesh or field dimension
    """
    if not grids:
        raise ValueError("at least one grid is required")
    first = grids[0]
    for grid in grids[1:]:
        if grid.mesh != first.mesh or grid.d != first.d:
            raise MeshMismatchError(f"{grid!r} does not match {first!r}")
    return torch.from_numpy(np.stack([g.values for g in grids]))


def del_residual(density: DensityModel, U: FieldGrid, i: int, j: int) -> np.ndarray:
    """DEL residual vector at interior point (i, j).

    Same sign as ``assemble``: a constant grid k under WaveDensity gives -k.

    Raises:
        IndexError: If i is outside 1..N-1
    """
    if not 1 <= i <= U.mesh.N - 1:
        raise IndexError(f"time index {i} outside 1..{U.mesh.N - 1}")
    if density.d != U.d:
        raise ValueError(f"density dimension {density.d} does not match grid dimension {U.d}")
    stencils = [U.stencil_at(i, j), U.stencil_at(i - 1, j), U.stencil_at(i, j - 1)]
    a = as_tensor(np.stack([s.a for s in stencils]))
    b = as_tensor(np.stack([s.b for s in stencils]))
    c = as_tensor(np.stack([s.c for s in stencils]))
    with torch.no_grad():
        grad = density.derivatives(a, b, c).grad
    return (grad[0, 0] + grad[1, 1] + grad[2, 2]).numpy()


def del_field(density: DensityModel, U: FieldGrid) -> ResidualField:
    """DEL residuals at every interior point of U."""
    if density.d != U.d:
        raise ValueError(f"density dimension {density.d} does not match grid dimension {U.d}")
    with torch.no_grad():
        residual, _ = assemble(density, torch.tensor(U.values))
    field = ResidualField(U.mesh, residual.numpy())
    logger.debug(f"Assembled {field!r}")
    return field


def del_sum_squares(density: DensityModel, grids: Sequence[FieldGrid]) -> float:
    """Sum of squared residual norms over a list of grids."""
    values = stack_grids(grids)
    with torch.no_grad():
        residual, _ = assemble(density, values)
    return float(torch.sum(residual**2))
