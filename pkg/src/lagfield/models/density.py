"""Discrete Lagrangian density models for lagfield.

A discrete Lagrangian density L_d(a, b, c) is evaluated on stencils
(u^i_j, u^{i+1}_j, u^i_{j+1}). Every model works on batches: a, b and c are
tensors of shape S + (d,), results have shape S. Derivatives are exact; the
generic path pushes a Dual2 through ``stencil_function``, analytic models
override ``derivatives``.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
import toml
import torch

from ..services import autodiff
from ..services.autodiff import DTYPE, Dual2, as_tensor, grad_hess
from .field_grid import Stencil

logger = logging.getLogger(__name__)

GaugeFunction = Callable[[Any], Any]


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be written or does not match expectations."""


class StencilDerivatives(NamedTuple):
    """Value and derivatives of a density on a batch of stencils.

    value has shape S, grad has shape S + (3, d) with slots (a, b, c), and d12
    has shape S + (d, d) holding d^2 L_d / da_p db_q at row p, column q.
    """

    value: torch.Tensor
    grad: torch.Tensor
    d12: torch.Tensor


class Potential(ABC):
    """Separable potential V(u) = sum_k v(u_k), evaluated componentwise."""

    name = "potential"

    @abstractmethod
    def value(self, u: Any) -> Any:
        """Componentwise v(u_k) on a tensor or Dual2."""

    @abstractmethod
    def gradient(self, u: torch.Tensor) -> torch.Tensor:
        """Componentwise v'(u_k)."""

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class QuadraticPotential(Potential):
    """V(u) = u^2 / 2."""

    name = "quadratic"

    def value(self, u: Any) -> Any:
        return u * u * 0.5

    def gradient(self, u: torch.Tensor) -> torch.Tensor:
        return u


class QuarticPotential(Potential):
    """V(u) = u^4 / 4."""

    name = "quartic"

    def value(self, u: Any) -> Any:
        return u**4 * 0.25

    def gradient(self, u: torch.Tensor) -> torch.Tensor:
        return u**3


POTENTIALS: Dict[str, Callable[[], Potential]] = {
    "quadratic": QuadraticPotential,
    "quartic": QuarticPotential,
}


def get_potential(name: str) -> Potential:
    """Look up a potential by name.

    Raises:
        ValueError: If the name is unknown
    """
    try:
        return POTENTIALS[name]()
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}")


class DensityModel(ABC):
    """A discrete Lagrangian density L_d : (R^d)^3 -> R.

    Attributes:
        d (int): Field dimension
    """

    kind = "abstract"

    def __init__(self, d: int = 1):
        if isinstance(d, bool) or int(d) != d or d < 1:
            raise ValueError("field dimension d must be an integer >= 1")
        self.d = int(d)

    @abstractmethod
    def stencil_function(self, x: Any) -> Any:
        """L_d on packed stencils.

        Args:
            x: Tensor or Dual2 with last axis of length 3d holding (a, b, c)

        Returns:
            Density values with the batch shape of x
        """

    def split(self, x: Any) -> Tuple[Any, Any, Any]:
        """Unpack (a, b, c) from the last axis of x."""
        d = self.d
        return x[..., 0:d], x[..., d : 2 * d], x[..., 2 * d : 3 * d]

    def _pack(self, a: Any, b: Any, c: Any) -> torch.Tensor:
        a, b, c = as_tensor(a), as_tensor(b), as_tensor(c)
        if not (a.shape == b.shape == c.shape) or a.shape[-1] != self.d:
            raise ValueError(
                f"stencil slots must share shape (..., {self.d}), got "
                f"{tuple(a.shape)}, {tuple(b.shape)}, {tuple(c.shape)}"
            )
        return torch.cat([a, b, c], dim=-1)

    def evaluate(self, a: Any, b: Any, c: Any) -> torch.Tensor:
        """L_d on a batch of stencils, shape S."""
        return self.stencil_function(self._pack(a, b, c))

    def derivatives(self, a: Any, b: Any, c: Any) -> StencilDerivatives:
        """Value, partial gradients and the mixed block d12 on a batch of stencils."""
        x = self._pack(a, b, c)
        value, grad, hess = grad_hess(self.stencil_function, x)
        d = self.d
        return StencilDerivatives(
            value=value,
            grad=grad.unflatten(-1, (3, d)),
            d12=hess[..., 0:d, d : 2 * d],
        )

    # -- single-stencil convenience --------------------------------------

    def _stencil_derivatives(self, stencil: Stencil) -> StencilDerivatives:
        if stencil.d != self.d:
            raise ValueError(f"stencil dimension {stencil.d} does not match density dimension {self.d}")
        with torch.no_grad():
            return self.derivatives(stencil.a, stencil.b, stencil.c)

    def eval(self, stencil: Stencil) -> float:
        """L_d at one stencil."""
        if stencil.d != self.d:
            raise ValueError(f"stencil dimension {stencil.d} does not match density dimension {self.d}")
        with torch.no_grad():
            return float(self.evaluate(stencil.a, stencil.b, stencil.c))

    def d1(self, stencil: Stencil) -> np.ndarray:
        """Partial gradient with respect to the first slot."""
        return self._stencil_derivatives(stencil).grad[0].numpy()

    def d2(self, stencil: Stencil) -> np.ndarray:
        """Partial gradient with respect to the second slot."""
        return self._stencil_derivatives(stencil).grad[1].numpy()

    def d3(self, stencil: Stencil) -> np.ndarray:
        """Partial gradient with respect to the third slot."""
        return self._stencil_derivatives(stencil).grad[2].numpy()

    def d12(self, stencil: Stencil) -> np.ndarray:
        """Mixed block d^2 L_d / da db."""
        return self._stencil_derivatives(stencil).d12.numpy()

    def params(self) -> torch.Tensor:
        """Trainable parameters; empty for analytic densities."""
        return torch.zeros(0, dtype=DTYPE)

    def descriptor(self) -> Dict[str, Any]:
        """Checkpoint descriptor of the density."""
        raise CheckpointError(f"{type(self).__name__} cannot be checkpointed")

    def __add__(self, other: "DensityModel") -> "SumDensity":
        return SumDensity(self, other)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self.d})"


class WaveDensity(DensityModel):
    """L_d = 1/2 ((b-a)/dt)^2 - 1/2 ((c-a)/dx)^2 - V(a), summed over components.

    Its discrete Euler-Lagrange equations are the discretised wave equation.

    Attributes:
        dt (float): Time step
        dx (float): Spatial width
        potential (Potential): Separable potential V
    """

    kind = "wave"

    def __init__(self, dt: float, dx: float, potential: Optional[Potential] = None, d: int = 1):
        super().__init__(d)
        if not math.isfinite(dt) or dt <= 0:
            raise ValueError("dt must be positive")
        if not math.isfinite(dx) or dx <= 0:
            raise ValueError("dx must be positive")
        self.dt = float(dt)
        self.dx = float(dx)
        self.potential = potential or QuadraticPotential()

    def stencil_function(self, x: Any) -> Any:
        a, b, c = self.split(x)
        vt = (b - a) / self.dt
        vx = (c - a) / self.dx
        return autodiff.total(vt * vt * 0.5 - vx * vx * 0.5 - self.potential.value(a))

    def derivatives(self, a: Any, b: Any, c: Any) -> StencilDerivatives:
        x = self._pack(a, b, c)
        a, b, c = self.split(x)
        inv_dt2 = 1.0 / self.dt**2
        inv_dx2 = 1.0 / self.dx**2
        gb = (b - a) * inv_dt2
        gc = -(c - a) * inv_dx2
        ga = -gb - gc - self.potential.gradient(a)
        eye = torch.eye(self.d, dtype=DTYPE).expand(a.shape[:-1] + (self.d, self.d))
        return StencilDerivatives(
            value=self.stencil_function(x),
            grad=torch.stack([ga, gb, gc], dim=-2),
            d12=-inv_dt2 * eye,
        )

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "d": self.d,
            "dt": self.dt,
            "dx": self.dx,
            "potential": self.potential.name,
        }

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dt={self.dt!r}, dx={self.dx!r}, potential={self.potential!r}, d={self.d})"


def wave_density_eval(stencil: Stencil, dt: float, dx: float, potential: Optional[Potential] = None) -> float:
    """Wave density value at one stencil, summed componentwise."""
    return WaveDensity(dt, dx, potential, d=stencil.d).eval(stencil)


class MidpointWaveDensity(WaveDensity):
    """Wave density with the potential sampled at the time midpoint (a+b)/2.

    The Newton problem for u^{i+1}_j is nonlinear whenever V is not quadratic.
    """

    kind = "midpoint_wave"

    def stencil_function(self, x: Any) -> Any:
        a, b, c = self.split(x)
        vt = (b - a) / self.dt
        vx = (c - a) / self.dx
        return autodiff.total(vt * vt * 0.5 - vx * vx * 0.5 - self.potential.value((a + b) * 0.5))

    def derivatives(self, a: Any, b: Any, c: Any) -> StencilDerivatives:
        return DensityModel.derivatives(self, a, b, c)


class NeuralDensity(DensityModel):
    """Feed-forward density 3d -> 10 -> 10 -> 1 with tanh activations.

    Both hidden layers carry biases, the output layer does not; for d = 1 this
    gives 40 + 110 + 10 = 160 parameters.

    Attributes:
        theta (torch.Tensor): Flat parameter vector
        hidden (int): Width of both hidden layers
    """

    kind = "neural"
    activation = "tanh"

    def __init__(self, theta: Any, d: int = 1, hidden: int = 10):
        super().__init__(d)
        if isinstance(hidden, bool) or int(hidden) != hidden or hidden < 1:
            raise ValueError("hidden must be an integer >= 1")
        self.hidden = int(hidden)
        theta = as_tensor(theta)
        if theta.ndim != 1 or theta.shape[0] != self.parameter_count(d, self.hidden):
            raise ValueError(
                f"theta must be a flat vector of {self.parameter_count(d, self.hidden)} parameters, "
                f"got shape {tuple(theta.shape)}"
            )
        self.theta = theta

    @staticmethod
    def parameter_count(d: int = 1, hidden: int = 10) -> int:
        return (3 * d + 1) * hidden + (hidden + 1) * hidden + hidden

    @property
    def layer_sizes(self) -> list[int]:
        return [3 * self.d, self.hidden, self.hidden, 1]

    @classmethod
    def init(cls, seed: int, d: int = 1, hidden: int = 10) -> "NeuralDensity":
        """Seeded initialisation, uniform in +-sqrt(1/fan_in) per layer."""
        generator = torch.Generator().manual_seed(int(seed))
        chunks = []
        for fan_in, fan_out, bias in ((3 * d, hidden, True), (hidden, hidden, True), (hidden, 1, False)):
            bound = math.sqrt(1.0 / fan_in)
            count = fan_out * fan_in + (fan_out if bias else 0)
            chunks.append((torch.rand(count, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound)
        theta = torch.cat(chunks)
        logger.debug(f"Initialised neural density with seed {seed}: {theta.numel()} parameters")
        return cls(theta, d=d, hidden=hidden)

    def with_parameters(self, theta: Any) -> "NeuralDensity":
        """Same architecture, new parameter tensor (not copied)."""
        return NeuralDensity(theta, d=self.d, hidden=self.hidden)

    def layers(self) -> Tuple[torch.Tensor, ...]:
        """Unpack (W1, b1, W2, b2, w3) views of theta."""
        n_in, h = 3 * self.d, self.hidden
        sizes = [h * n_in, h, h * h, h, h]
        W1, b1, W2, b2, w3 = torch.split(self.theta, sizes)
        return W1.view(h, n_in), b1, W2.view(h, h), b2, w3.view(1, h)

    def stencil_function(self, x: Any) -> Any:
        W1, b1, W2, b2, w3 = self.layers()
        hidden = autodiff.tanh(autodiff.linear(x, W1, b1))
        hidden = autodiff.tanh(autodiff.linear(hidden, W2, b2))
        return autodiff.linear(hidden, w3)[..., 0]

    def params(self) -> torch.Tensor:
        return self.theta

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "d": self.d,
            "layers": self.layer_sizes,
            "activation": self.activation,
            "bias": [True, True, False],
        }

    def __repr__(self) -> str:
        return f"NeuralDensity(layers={self.layer_sizes}, parameters={self.theta.numel()})"


def neural_density_init(seed: int, d: int = 1) -> NeuralDensity:
    """Reproducible NeuralDensity from a seed."""
    return NeuralDensity.init(seed, d=d)


def _total_gradient(chi: Optional[GaugeFunction], u: torch.Tensor) -> torch.Tensor:
    if chi is None:
        return torch.zeros_like(u)
    _, grad, _ = grad_hess(lambda v: autodiff.total(chi(v)), u)
    return grad


def _total_value(chi: Optional[GaugeFunction], u: Any) -> Any:
    if chi is None:
        return 0.0
    return autodiff.total(chi(u))


class GaugedDensity(DensityModel):
    """s * base + chi1(a) - chi1(b) + chi2(a) - chi2(c) + chi3(b) - chi3(c).

    The chi functions act componentwise and are summed over components; they
    must be built from the autodiff primitive set. The discrete Euler-Lagrange
    residuals of the result are s times those of the base.

    Attributes:
        base (DensityModel): Wrapped density
        s (float): Nonzero scale
    """

    kind = "gauged"

    def __init__(
        self,
        base: DensityModel,
        s: float = 1.0,
        chi1: Optional[GaugeFunction] = None,
        chi2: Optional[GaugeFunction] = None,
        chi3: Optional[GaugeFunction] = None,
    ):
        super().__init__(base.d)
        if s == 0 or not math.isfinite(s):
            raise ValueError("gauge scale s must be finite and nonzero")
        self.base = base
        self.s = float(s)
        self.chi1, self.chi2, self.chi3 = chi1, chi2, chi3

    def stencil_function(self, x: Any) -> Any:
        a, b, c = self.split(x)
        gauge = (
            _total_value(self.chi1, a) - _total_value(self.chi1, b)
            + _total_value(self.chi2, a) - _total_value(self.chi2, c)
            + _total_value(self.chi3, b) - _total_value(self.chi3, c)
        )
        return self.base.stencil_function(x) * self.s + gauge

    def derivatives(self, a: Any, b: Any, c: Any) -> StencilDerivatives:
        x = self._pack(a, b, c)
        a, b, c = self.split(x)
        base = self.base.derivatives(a, b, c)
        ga = self.s * base.grad[..., 0, :] + _total_gradient(self.chi1, a) + _total_gradient(self.chi2, a)
        gb = self.s * base.grad[..., 1, :] - _total_gradient(self.chi1, b) + _total_gradient(self.chi3, b)
        gc = self.s * base.grad[..., 2, :] - _total_gradient(self.chi2, c) - _total_gradient(self.chi3, c)
        gauge = (
            _total_value(self.chi1, a) - _total_value(self.chi1, b)
            + _total_value(self.chi2, a) - _total_value(self.chi2, c)
            + _total_value(self.chi3, b) - _total_value(self.chi3, c)
        )
        return StencilDerivatives(
            value=self.s * base.value + gauge,
            grad=torch.stack([ga, gb, gc], dim=-2),
            d12=self.s * base.d12,
        )

    def params(self) -> torch.Tensor:
        return self.base.params()

    def __repr__(self) -> str:
        return f"GaugedDensity(base={self.base!r}, s={self.s!r})"


def gauge_wrap(
    base: DensityModel,
    s: float,
    chi1: Optional[GaugeFunction] = None,
    chi2: Optional[GaugeFunction] = None,
    chi3: Optional[GaugeFunction] = None,
) -> GaugedDensity:
    """Wrap a density in a gauge transformation with the same DEL zero set."""
    return GaugedDensity(base, s, chi1, chi2, chi3)


class ConstantDensity(DensityModel):
    """L_d = k: consistent with any data, useless for propagation."""

    kind = "constant"

    def __init__(self, value: float = 0.0, d: int = 1):
        super().__init__(d)
        self.value = float(value)

    def stencil_function(self, x: Any) -> Any:
        if isinstance(x, Dual2):
            return Dual2.constant(torch.full(x.shape[:-1], self.value, dtype=DTYPE), x.n)
        return torch.full(x.shape[:-1], self.value, dtype=DTYPE)

    def derivatives(self, a: Any, b: Any, c: Any) -> StencilDerivatives:
        x = self._pack(a, b, c)
        batch = x.shape[:-1]
        return StencilDerivatives(
            value=torch.full(batch, self.value, dtype=DTYPE),
            grad=torch.zeros(batch + (3, self.d), dtype=DTYPE),
            d12=torch.zeros(batch + (self.d, self.d), dtype=DTYPE),
        )

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "d": self.d, "value": self.value}


class SumDensity(DensityModel):
    """L_1 + L_2."""

    kind = "sum"

    def __init__(self, first: DensityModel, second: DensityModel):
        if first.d != second.d:
            raise ValueError("summed densities must share the field dimension")
        super().__init__(first.d)
        self.first = first
        self.second = second

    def stencil_function(self, x: Any) -> Any:
        return self.first.stencil_function(x) + self.second.stencil_function(x)

    def derivatives(self, a: Any, b: Any, c: Any) -> StencilDerivatives:
        p = self.first.derivatives(a, b, c)
        q = self.second.derivatives(a, b, c)
        return StencilDerivatives(p.value + q.value, p.grad + q.grad, p.d12 + q.d12)


def save_checkpoint(density: DensityModel, path: str) -> None:
    """Write a density checkpoint (architecture descriptor plus flat parameters).

    Raises:
        CheckpointError: If the density kind cannot be checkpointed
    """
    data: Dict[str, Any] = {"architecture": density.descriptor()}
    params = density.params().detach()
    data["parameters"] = {
        "count": int(params.numel()),
        "values": [format(float(v), ".17g") for v in params],
    }
    with open(path, "w", encoding="utf-8") as f:
        toml.dump(data, f)
    logger.info(f"Saved {density!r} checkpoint to {path}")


def density_from_descriptor(architecture: Dict[str, Any], values: list[float]) -> DensityModel:
    """Rebuild a density from a checkpoint descriptor and parameter list.

    Raises:
        CheckpointError: If the descriptor is unknown or inconsistent
    """
    kind = architecture.get("kind")
    d = int(architecture.get("d", 1))
    try:
        if kind == "neural":
            layers = list(architecture.get("layers", []))
            if len(layers) != 4 or layers[0] != 3 * d or layers[1] != layers[2] or layers[3] != 1:
                raise CheckpointError(f"unsupported neural layer sizes {layers}")
            if architecture.get("activation") != NeuralDensity.activation:
                raise CheckpointError(f"unsupported activation {architecture.get('activation')!r}")
            return NeuralDensity(torch.tensor(values, dtype=DTYPE), d=d, hidden=layers[1])
        if kind in (WaveDensity.kind, MidpointWaveDensity.kind):
            cls = WaveDensity if kind == WaveDensity.kind else MidpointWaveDensity
            return cls(
                dt=float(architecture["dt"]),
                dx=float(architecture["dx"]),
                potential=get_potential(architecture.get("potential", "quadratic")),
                d=d,
            )
        if kind == ConstantDensity.kind:
            return ConstantDensity(float(architecture.get("value", 0.0)), d=d)
    except (KeyError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"invalid {kind} checkpoint: {e}") from e
    raise CheckpointError(f"unknown density kind {kind!r}")


def load_checkpoint(path: str, expected: Optional[Dict[str, Any]] = None) -> DensityModel:
    """Load a density checkpoint.

    Args:
        path: Checkpoint path
        expected: Descriptor entries the checkpoint must match

    Raises:
        FileNotFoundError: If the checkpoint does not exist
        CheckpointError: If the checkpoint is malformed or mismatches ``expected``
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = toml.load(f)
        except toml.TomlDecodeError as e:
            raise CheckpointError(f"{path}: {e}") from e

    architecture = data.get("architecture")
    if not isinstance(architecture, dict):
        raise CheckpointError(f"{path}: missing [architecture] table")
    for key, value in (expected or {}).items():
        if architecture.get(key) != value:
            raise CheckpointError(
                f"{path}: architecture {key}={architecture.get(key)!r} does not match expected {value!r}"
            )

    parameters = data.get("parameters", {})
    values = [float(v) for v in parameters.get("values", [])]
    if int(parameters.get("count", len(values))) != len(values):
        raise CheckpointError(f"{path}: parameter count does not match the stored values")
    density = density_from_descriptor(architecture, values)
    if density.params().numel() != len(values):
        raise CheckpointError(f"{path}: {len(values)} parameters stored for {density!r}")
    logger.info(f"Loaded {density!r} from {path}")
    return density
