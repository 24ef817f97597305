"""Travelling-wave search for lagfield.

A state (c, fhat) is sampled onto the mesh as u^i_j = f(j dx - c i dt). Its loss
is the sum of squared DEL residuals of that grid plus reg_weight times
exp(-reg_scale * sum U^2), which keeps the search away from the zero wave.
Optimisation runs adam over (c, Re fhat_m, Im fhat_m) of the non-negative
modes, so conjugate symmetry holds exactly.
"""

import logging
import math
from typing import Any, List, Optional, Tuple

import numpy as np
import torch

from ..config.settings import TwConfig
from ..models.density import DensityModel
from ..models.field_grid import FieldGrid
from ..models.mesh import Mesh
from ..models.travelling_wave import TravellingWaveState, profile_tensor
from .autodiff import DTYPE, NonFiniteError, as_tensor, value_and_param_grad
from .del_service import assemble
from .train_service import AdamState, adam_step

logger = logging.getLogger(__name__)


class TwSearchAbortedError(RuntimeError):
    """Raised when the travelling-wave search hits a non-finite loss.

    Attributes:
        state (TravellingWaveState): Last state with a finite loss
        history (List[float]): Loss history up to the failure
    """

    def __init__(self, message: str, state: TravellingWaveState, history: List[float]):
        super().__init__(message)
        self.state = state
        self.history = history


def sample_points(c: torch.Tensor, mesh: Mesh) -> torch.Tensor:
    """xi^i_j = j dx - c i dt, shape (N+1, M)."""
    i = torch.arange(mesh.N + 1, dtype=DTYPE).unsqueeze(-1)
    j = torch.arange(mesh.M, dtype=DTYPE)
    return j * mesh.dx - c * (i * mesh.dt)


def tw_values(theta: torch.Tensor, M: int, d: int, l: float, mesh: Mesh) -> torch.Tensor:  # noqa: E741
    """Differentiable travelling-wave grid, shape (N+1, M, d)."""
    c, re, im = TravellingWaveState.unpack(theta, M, d)
    return profile_tensor(re, im, sample_points(c, mesh), l, M)


def _check_mesh(state: TravellingWaveState, mesh: Mesh) -> None:
    if state.M != mesh.M:
        raise ValueError(f"state has {state.M} modes but the mesh has M={mesh.M}")


def tw_grid(state: TravellingWaveState, mesh: Mesh) -> FieldGrid:
    """Grid u^i_j = f(j dx - c i dt) of a travelling-wave state."""
    _check_mesh(state, mesh)
    with torch.no_grad():
        values = tw_values(state.to_parameters(), state.M, state.d, state.l, mesh)
    return FieldGrid(mesh, values.numpy())


def _residual_tensor(density: DensityModel, values: torch.Tensor) -> torch.Tensor:
    residual, _ = assemble(density, values)
    return torch.sum(residual**2)


def tw_residual(density: DensityModel, state: TravellingWaveState, mesh: Mesh) -> float:
    """Sum of squared DEL residuals of the travelling-wave grid."""
    _check_mesh(state, mesh)
    with torch.no_grad():
        values = tw_values(state.to_parameters(), state.M, state.d, state.l, mesh)
        return float(_residual_tensor(density, values))


def tw_functional_residual(density: DensityModel, state: TravellingWaveState, xi: float, mesh: Mesh) -> np.ndarray:
    """DEL residual of the profile shifted by the mesh steps, evaluated at xi.

    d2 L(f(xi + c dt), f(xi), f(xi + dx + c dt))
      + d1 L(f(xi), f(xi - c dt), f(xi + dx))
      + d3 L(f(xi - dx), f(xi - dx - c dt), f(xi))
    """
    shift_t, shift_x = state.c * mesh.dt, mesh.dx
    f = state.profile_eval
    a = as_tensor(np.stack([f(xi), f(xi + shift_t), f(xi - shift_x)]))
    b = as_tensor(np.stack([f(xi - shift_t), f(xi), f(xi - shift_x - shift_t)]))
    c = as_tensor(np.stack([f(xi + shift_x), f(xi + shift_x + shift_t), f(xi)]))
    with torch.no_grad():
        grad = density.derivatives(a, b, c).grad
    return (grad[0, 0] + grad[1, 1] + grad[2, 2]).numpy()


def _loss_tensor(
    density: DensityModel,
    theta: torch.Tensor,
    template: TravellingWaveState,
    mesh: Mesh,
    reg_weight: float,
    reg_scale: float,
) -> torch.Tensor:
    values = tw_values(theta, template.M, template.d, template.l, mesh)
    loss = _residual_tensor(density, values)
    if reg_weight:
        loss = loss + reg_weight * torch.exp(-reg_scale * torch.sum(values**2))
    return loss


def tw_loss(
    density: DensityModel,
    state: TravellingWaveState,
    mesh: Mesh,
    reg_weight: float = 1.0,
    reg_scale: float = 100.0,
) -> float:
    """Travelling-wave residual plus the anti-trivial regulariser."""
    _check_mesh(state, mesh)
    with torch.no_grad():
        return float(_loss_tensor(density, state.to_parameters(), state, mesh, reg_weight, reg_scale))


def tw_loss_gradient(
    density: DensityModel,
    state: TravellingWaveState,
    mesh: Mesh,
    reg_weight: float = 1.0,
    reg_scale: float = 100.0,
) -> Tuple[float, np.ndarray]:
    """Loss and its gradient with respect to ``state.to_parameters()``."""
    _check_mesh(state, mesh)
    value, gradient = value_and_param_grad(
        lambda theta: _loss_tensor(density, theta, state, mesh, reg_weight, reg_scale),
        state.to_parameters(),
    )
    return float(value), gradient.numpy()


def perturb_state(state: TravellingWaveState, sigma: float, seed: int) -> TravellingWaveState:
    """Add N(0, sigma^2) noise to c and to every independent coefficient."""
    theta = state.to_parameters()
    generator = torch.Generator().manual_seed(int(seed))
    noise = torch.randn(theta.shape, generator=generator, dtype=DTYPE) * sigma
    return TravellingWaveState.from_parameters(theta + noise, state.M, state.d, state.l)


class TwaveService:
    """Service for locating travelling waves of a density."""

    def __init__(self, config: Optional[TwConfig] = None):
        self.config = config or TwConfig()

    def find_tw(
        self, density: DensityModel, init: TravellingWaveState, mesh: Mesh
    ) -> Tuple[TravellingWaveState, List[float]]:
        """Minimise the travelling-wave loss from an initial state with adam.

        Stops after ``steps`` updates or once the loss falls below ``tolerance``.

        Returns:
            The lowest-loss state seen and the loss history (one entry per evaluation)

        Raises:
            TwSearchAbortedError: On a non-finite loss or gradient
        """
        cfg = self.config
        _check_mesh(init, mesh)
        if density.d != init.d:
            raise ValueError(f"density dimension {density.d} does not match state dimension {init.d}")

        def loss(theta: torch.Tensor) -> torch.Tensor:
            return _loss_tensor(density, theta, init, mesh, cfg.reg_weight, cfg.reg_scale)

        theta = init.to_parameters()
        state = AdamState.zeros(theta)
        history: List[float] = []
        best_loss, best_theta = math.inf, theta.clone()
        logger.info(f"Travelling-wave search from c={init.c:.6g}: up to {cfg.steps} steps")

        for step in range(cfg.steps + 1):
            try:
                value, gradient = value_and_param_grad(loss, theta)
            except NonFiniteError as e:
                last = TravellingWaveState.from_parameters(best_theta, init.M, init.d, init.l)
                logger.error(f"Travelling-wave search aborted at step {step}: {e}")
                raise TwSearchAbortedError(f"search aborted at step {step}: {e}", last, history) from e
            current = float(value)
            history.append(current)
            if current < best_loss:
                best_loss, best_theta = current, theta.clone()
            if current < cfg.tolerance or step == cfg.steps:
                break
            theta, state = adam_step(theta, gradient, state, cfg)
            if step % cfg.log_every == 0:
                logger.debug(f"step {step}: loss {current:.6e} c={float(theta[0]):.9f}")

        result = TravellingWaveState.from_parameters(best_theta, init.M, init.d, init.l)
        logger.info(
            f"Travelling-wave search finished after {len(history)} evaluations: "
            f"loss {best_loss:.3e}, c={result.c:.9f}"
        )
        return result, history


def find_tw(
    density: DensityModel,
    init: TravellingWaveState,
    mesh: Mesh,
    cfg: Optional[TwConfig] = None,
) -> Tuple[TravellingWaveState, List[float]]:
    """Locate a travelling wave; see ``TwaveService.find_tw``."""
    return TwaveService(cfg).find_tw(density, init, mesh)
