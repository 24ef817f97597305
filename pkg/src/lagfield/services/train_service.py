"""Training service for lagfield.

The training loss is l = l_DEL + reg_weight * l_reg:

* l_DEL sums squared DEL residuals over all grids and interior points.
* l_reg sums ||inv(d12)||^2 (spectral norm) over the same points, i.e.
  1 / sigma_min(d12)^2, with sigma_min^2 floored at lambda_floor.

Both are differentiable in the density parameters; the d12 block comes from
the forward second-order pass, so l_reg needs third-order derivatives overall.
"""

import logging
import time
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple, Union

import torch

from ..config.settings import TrainConfig
from ..models.density import DensityModel, NeuralDensity
from ..models.field_grid import FieldGrid
from ..models.train_record import TrainRecord
from .autodiff import DTYPE, NonFiniteError, as_tensor, value_and_param_grad
from .del_service import assemble, stack_grids

logger = logging.getLogger(__name__)

Batch = Union[Sequence[FieldGrid], torch.Tensor]


class TrainingAbortedError(RuntimeError):
    """Raised when training hits a numerical failure.

    Attributes:
        density (DensityModel): Best density recorded before the failure
        record (TrainRecord): Loss history up to the failure
    """

    def __init__(self, message: str, density: DensityModel, record: TrainRecord):
        super().__init__(message)
        self.density = density
        self.record = record


def _batch_values(batch: Batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch
    return stack_grids(list(batch))


def smallest_singular_value_squared(A: torch.Tensor, tol: float = 1e-10, max_iterations: int = 100) -> torch.Tensor:
    """Smallest eigenvalue of A^T A for a batch of square matrices.

    Closed forms for d <= 2; inverse iteration followed by a Rayleigh quotient
    with a detached eigenvector for d >= 3, which keeps the gradient exact for
    simple eigenvalues.

    Args:
        A: Tensor of shape (..., d, d)
        tol: Convergence tolerance of the inverse iteration
        max_iterations: Iteration cap of the inverse iteration

    Returns:
        Tensor of shape (...)
    """
    d = A.shape[-1]
    if d == 1:
        return A[..., 0, 0] ** 2
    if d == 2:
        G = A.transpose(-1, -2) @ A
        half_trace = 0.5 * (G[..., 0, 0] + G[..., 1, 1])
        discriminant = (0.5 * (G[..., 0, 0] - G[..., 1, 1])) ** 2 + G[..., 0, 1] ** 2
        positive = discriminant > 0
        safe = torch.where(positive, discriminant, torch.ones_like(discriminant))
        largest = half_trace + torch.where(positive, torch.sqrt(safe), torch.zeros_like(safe))
        determinant = torch.linalg.det(A) ** 2
        safe_largest = torch.where(largest > 0, largest, torch.ones_like(largest))
        return torch.where(largest > 0, determinant / safe_largest, torch.zeros_like(largest))

    G = A.transpose(-1, -2) @ A
    with torch.no_grad():
        G0 = G.detach()
        v = torch.ones(G0.shape[:-1], dtype=DTYPE) / d**0.5
        singular = torch.zeros(G0.shape[:-2], dtype=torch.bool)
        for _ in range(max_iterations):
            w, info = torch.linalg.solve_ex(G0, v.unsqueeze(-1))
            w = w.squeeze(-1)
            singular |= info != 0
            norm = torch.linalg.vector_norm(w, dim=-1, keepdim=True)
            bad = ~torch.isfinite(norm[..., 0]) | (norm[..., 0] == 0)
            singular |= bad
            w = torch.where((singular | bad).unsqueeze(-1), v, w / torch.where(norm > 0, norm, torch.ones_like(norm)))
            converged = torch.linalg.vector_norm(w - v, dim=-1).max() <= tol
            v = w
            if converged:
                break
    rayleigh = torch.einsum("...i,...ij,...j->...", v, G, v)
    return torch.where(singular, torch.zeros_like(rayleigh), rayleigh)


def _regulariser_terms(d12: torch.Tensor, lambda_floor: float) -> Tuple[torch.Tensor, torch.Tensor]:
    sigma2 = smallest_singular_value_squared(d12[..., 1:, :, :, :])
    floored = sigma2 < lambda_floor
    return 1.0 / torch.clamp(sigma2, min=lambda_floor), floored


def _losses(
    density: DensityModel, values: torch.Tensor, lambda_floor: float
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    residual, derivs = assemble(density, values)
    summands, floored = _regulariser_terms(derivs.d12, lambda_floor)
    return torch.sum(residual**2), torch.sum(summands), floored


def loss_del(density: DensityModel, batch: Batch) -> torch.Tensor:
    """Sum of squared DEL residual norms over the batch.

    Raises:
        MeshMismatchError: If the grids differ in mesh or d
    """
    residual, _ = assemble(density, _batch_values(batch))
    return torch.sum(residual**2)


def reg_summands(density: DensityModel, batch: Batch, lambda_floor: float = 1e-8) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-point regulariser terms and the mask of floored points.

    Returns:
        Summands of shape (K, N-1, M) and a boolean mask of the same shape
    """
    values = _batch_values(batch)
    a = values[..., :-1, :, :]
    b = values[..., 1:, :, :]
    c = torch.roll(a, shifts=-1, dims=-2)
    return _regulariser_terms(density.derivatives(a, b, c).d12, lambda_floor)


def loss_reg(density: DensityModel, batch: Batch, lambda_floor: float = 1e-8) -> torch.Tensor:
    """Solvability regulariser: sum of ||inv(d12)||^2 over the batch."""
    summands, floored = reg_summands(density, batch, lambda_floor)
    count = int(floored.sum())
    if count:
        logger.warning(f"{count} regulariser summands floored at lambda_floor={lambda_floor:g}")
    return torch.sum(summands)


@dataclass
class AdamState:
    """First and second moment estimates of adam."""

    m: torch.Tensor
    v: torch.Tensor
    step: int = 0

    @classmethod
    def zeros(cls, theta: torch.Tensor) -> "AdamState":
        return cls(torch.zeros_like(theta), torch.zeros_like(theta), 0)


def adam_step(theta: Any, gradient: Any, state: AdamState, cfg: Any) -> Tuple[torch.Tensor, AdamState]:
    """One adam update with bias correction.

    Args:
        theta: Parameters
        gradient: d(loss)/d(theta), same shape
        state: Moment estimates
        cfg: Settings with learning_rate, beta1, beta2 and eps

    Returns:
        Updated parameters and state

    Raises:
        ValueError: If shapes differ
        NonFiniteError: If the gradient holds NaN or Inf
    """
    theta, gradient = as_tensor(theta), as_tensor(gradient)
    if theta.shape != gradient.shape or state.m.shape != theta.shape:
        raise ValueError(f"shape mismatch: theta {tuple(theta.shape)}, gradient {tuple(gradient.shape)}")
    if not torch.isfinite(gradient).all():
        raise NonFiniteError("non-finite gradient passed to adam")
    step = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * gradient
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * gradient * gradient
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    theta = theta - cfg.learning_rate * m_hat / (torch.sqrt(v_hat) + cfg.eps)
    return theta, AdamState(m, v, step)


class TrainService:
    """Service for fitting a neural density to trajectory data."""

    def __init__(self, config: Optional[TrainConfig] = None):
        self.config = config or TrainConfig()

    def evaluate(self, density: DensityModel, values: torch.Tensor) -> Tuple[float, float, int]:
        """Full-data (l_del, l_reg, floored count) without recording gradients."""
        with torch.no_grad():
            l_del, l_reg, floored = _losses(density, values, self.config.lambda_floor)
        return float(l_del), float(l_reg), int(floored.sum())

    def _batch_loss(self, density: NeuralDensity, values: torch.Tensor) -> Any:
        cfg = self.config

        def loss(theta: torch.Tensor) -> torch.Tensor:
            model = density.with_parameters(theta)
            if cfg.reg_weight == 0:
                return loss_del(model, values)
            l_del, l_reg, _ = _losses(model, values, cfg.lambda_floor)
            return l_del + cfg.reg_weight * l_reg

        return loss

    def train(
        self, data: Sequence[FieldGrid], density: Optional[NeuralDensity] = None
    ) -> Tuple[NeuralDensity, TrainRecord]:
        """Train a neural density on trajectory grids.

        Batches are whole trajectories, reshuffled every epoch from the seed.

        Args:
            data: Trajectory grids sharing mesh and d
            density: Starting density (seeded initialisation if None)

        Returns:
            The density with the lowest recorded total loss and the TrainRecord

        Raises:
            TrainingAbortedError: On a non-finite loss or gradient
        """
        cfg = self.config
        values = stack_grids(list(data))
        K, d = values.shape[0], values.shape[-1]
        if density is None:
            density = NeuralDensity.init(cfg.seed, d=d, hidden=cfg.hidden)
        elif density.d != d:
            raise ValueError(f"density dimension {density.d} does not match data dimension {d}")

        theta = density.params().detach().clone()
        state = AdamState.zeros(theta)
        generator = torch.Generator().manual_seed(cfg.seed)
        record = TrainRecord(reg_weight=cfg.reg_weight, config=cfg.to_dict())

        logger.info(
            f"Training {density!r} on {K} trajectories: {cfg.epochs} epochs, "
            f"batch size {cfg.batch_size}, reg_weight {cfg.reg_weight}"
        )
        start = time.perf_counter()
        try:
            l_del, l_reg, floored = self.evaluate(density, values)
        except NonFiniteError as e:
            record.aborted = True
            logger.error(f"Training aborted before the first epoch: {e}")
            raise TrainingAbortedError(f"initial density is not finite on the data: {e}", density, record) from e
        record.add_epoch(0, l_del, l_reg, time.perf_counter() - start, floored)
        best_total, best_theta = l_del + cfg.reg_weight * l_reg, theta.clone()

        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            order = torch.randperm(K, generator=generator) if cfg.shuffle else torch.arange(K)
            try:
                for batch_index in torch.split(order, cfg.batch_size):
                    loss = self._batch_loss(density, values[batch_index])
                    value, gradient = value_and_param_grad(loss, theta)
                    theta, state = adam_step(theta, gradient, state, cfg)
                    logger.debug(f"epoch {epoch} batch {batch_index.tolist()}: loss {float(value):.6e}")
                l_del, l_reg, floored = self.evaluate(density.with_parameters(theta), values)
            except NonFiniteError as e:
                record.adam_steps = state.step
                record.aborted = True
                logger.error(f"Training aborted in epoch {epoch}: {e}")
                raise TrainingAbortedError(
                    f"training aborted in epoch {epoch}: {e}",
                    density.with_parameters(best_theta),
                    record,
                ) from e

            record.add_epoch(epoch, l_del, l_reg, time.perf_counter() - start, floored)
            total = l_del + cfg.reg_weight * l_reg
            if total < best_total:
                best_total, best_theta = total, theta.clone()
            if floored:
                logger.warning(f"epoch {epoch}: {floored} regulariser summands floored")
            if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
                logger.info(f"epoch {epoch}/{cfg.epochs}: l_del={l_del:.3e} l_reg={l_reg:.3e}")

        record.adam_steps = state.step
        logger.info(f"Training finished: best epoch {record.best_epoch}, {record.adam_steps} adam steps")
        return density.with_parameters(best_theta), record


def train(
    data: Sequence[FieldGrid], cfg: Optional[TrainConfig] = None, density: Optional[NeuralDensity] = None
) -> Tuple[NeuralDensity, TrainRecord]:
    """Train a neural density; see ``TrainService.train``."""
    return TrainService(cfg).train(data, density)
