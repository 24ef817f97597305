"""Exact differentiation for lagfield.

Two mechanisms are combined here:

* ``Dual2`` carries a value together with its gradient and Hessian over a
  small seed basis (the 3d stencil inputs of a density). Arithmetic on Dual2
  propagates second-order sensitivities forward.
* ``ParamTape`` accumulates d(loss)/d(parameters) in reverse. The slots of a
  Dual2 are torch tensors, so the tape sees every primitive the forward-mode
  pass performs and a loss built from Dual2 Hessians can be differentiated
  with respect to the parameters (third order overall).

The primitive set is {+, -, *, /, integer powers, tanh, exp}.
"""

import logging
from typing import Any, Callable, Tuple, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)

DTYPE = torch.float64

Scalar = Union[float, int, torch.Tensor]


class NonFiniteError(ArithmeticError):
    """Raised when a derivative computation produces NaN or Inf."""


class UnsupportedPrimitiveError(TypeError):
    """Raised when a function uses an operation outside the primitive set."""


def as_tensor(x: Any) -> torch.Tensor:
    """Convert to a float64 tensor without copying tensors that already are."""
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    if isinstance(x, np.ndarray) and not x.flags.writeable:
        x = x.copy()
    return torch.as_tensor(x, dtype=DTYPE)


def _outer(g: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    return g.unsqueeze(-1) * h.unsqueeze(-2)


class Dual2:
    """A batch of numbers with exact first and second derivatives.

    For a batch shape S and n seed directions:

    Attributes:
        value (torch.Tensor): shape S
        grad (torch.Tensor): shape S + (n,)
        hess (torch.Tensor): shape S + (n, n), symmetric in the last two axes
    """

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value: torch.Tensor, grad: torch.Tensor, hess: torch.Tensor):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def variables(cls, x: Any) -> "Dual2":
        """Seed the last axis of x as the independent variables.

        Args:
            x: Tensor of shape S + (n,)

        Returns:
            Dual2 with value x, grad the identity and zero Hessian
        """
        x = as_tensor(x)
        n = x.shape[-1]
        eye = torch.eye(n, dtype=DTYPE).expand(x.shape + (n,))
        hess = torch.zeros(x.shape + (n, n), dtype=DTYPE)
        return cls(x, eye, hess)

    @classmethod
    def constant(cls, value: Any, n: int) -> "Dual2":
        """A Dual2 with zero derivatives over n seed directions."""
        value = as_tensor(value)
        return cls(
            value,
            torch.zeros(value.shape + (n,), dtype=DTYPE),
            torch.zeros(value.shape + (n, n), dtype=DTYPE),
        )

    @property
    def n(self) -> int:
        return int(self.grad.shape[-1])

    @property
    def shape(self) -> torch.Size:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Dual2(shape={tuple(self.value.shape)}, n={self.n})"

    # -- arithmetic ---------------------------------------------------------

    def _broadcast(self, value: torch.Tensor) -> "Dual2":
        """Broadcast derivative slots to a (possibly larger) value shape."""
        zeros = torch.zeros_like(value)
        return Dual2(value, self.grad + zeros[..., None], self.hess + zeros[..., None, None])

    def chain(self, f0: torch.Tensor, f1: torch.Tensor, f2: torch.Tensor) -> "Dual2":
        """Apply a scalar function with value f0 and derivatives f1, f2."""
        return Dual2(
            f0,
            f1[..., None] * self.grad,
            f1[..., None, None] * self.hess + f2[..., None, None] * _outer(self.grad, self.grad),
        )

    def __add__(self, other: Any) -> "Dual2":
        if isinstance(other, Dual2):
            return Dual2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)
        return self._broadcast(self.value + as_tensor(other))

    __radd__ = __add__

    def __neg__(self) -> "Dual2":
        return Dual2(-self.value, -self.grad, -self.hess)

    def __sub__(self, other: Any) -> "Dual2":
        if isinstance(other, Dual2):
            return Dual2(self.value - other.value, self.grad - other.grad, self.hess - other.hess)
        return self._broadcast(self.value - as_tensor(other))

    def __rsub__(self, other: Any) -> "Dual2":
        return (-self) + other

    def __mul__(self, other: Any) -> "Dual2":
        if isinstance(other, Dual2):
            x, y = self, other
            return Dual2(
                x.value * y.value,
                x.grad * y.value[..., None] + y.grad * x.value[..., None],
                x.hess * y.value[..., None, None]
                + y.hess * x.value[..., None, None]
                + _outer(x.grad, y.grad)
                + _outer(y.grad, x.grad),
            )
        c = as_tensor(other)
        return Dual2(self.value * c, self.grad * c[..., None], self.hess * c[..., None, None])

    __rmul__ = __mul__

    def reciprocal(self) -> "Dual2":
        r = 1.0 / self.value
        return self.chain(r, -(r * r), 2.0 * r * r * r)

    def __truediv__(self, other: Any) -> "Dual2":
        if isinstance(other, Dual2):
            return self * other.reciprocal()
        c = as_tensor(other)
        return Dual2(self.value / c, self.grad / c[..., None], self.hess / c[..., None, None])

    def __rtruediv__(self, other: Any) -> "Dual2":
        return self.reciprocal() * other

    def __pow__(self, k: Any) -> "Dual2":
        if isinstance(k, bool) or not isinstance(k, int):
            raise UnsupportedPrimitiveError(f"only integer powers are supported, got {k!r}")
        v = self.value
        if k == 0:
            return Dual2.constant(torch.ones_like(v), self.n)
        if k == 1:
            return self
        f1 = k * v ** (k - 1)
        f2 = (k * (k - 1)) * v ** (k - 2) if k != 2 else torch.full_like(v, 2.0)
        return self.chain(v**k, f1, f2)

    def tanh(self) -> "Dual2":
        t = torch.tanh(self.value)
        s = 1.0 - t * t
        return self.chain(t, s, -2.0 * t * s)

    def exp(self) -> "Dual2":
        e = torch.exp(self.value)
        return self.chain(e, e, e)

    # -- structure ----------------------------------------------------------

    def __getitem__(self, key: Any) -> "Dual2":
        """Index the last batch axis; ``x[..., k]`` and ``x[k]`` are the same."""
        if isinstance(key, tuple):
            if len(key) != 2 or key[0] is not Ellipsis:
                raise UnsupportedPrimitiveError(f"Dual2 supports indexing of the last axis only, got {key!r}")
            key = key[1]
        return Dual2(self.value[..., key], self.grad[..., key, :], self.hess[..., key, :, :])

    def sum(self) -> "Dual2":
        """Sum over the last batch axis."""
        return Dual2(self.value.sum(-1), self.grad.sum(-2), self.hess.sum(-3))

    def linear(self, weight: torch.Tensor, bias: Any = None) -> "Dual2":
        """Affine map of the last batch axis: x -> weight @ x + bias."""
        value = self.value @ weight.T
        if bias is not None:
            value = value + bias
        return Dual2(
            value,
            torch.einsum("...in,oi->...on", self.grad, weight),
            torch.einsum("...inm,oi->...onm", self.hess, weight),
        )

    @staticmethod
    def cat(parts: Tuple["Dual2", ...]) -> "Dual2":
        """Concatenate along the last batch axis."""
        return Dual2(
            torch.cat([p.value for p in parts], dim=-1),
            torch.cat([p.grad for p in parts], dim=-2),
            torch.cat([p.hess for p in parts], dim=-3),
        )

    def is_finite(self) -> bool:
        return bool(
            torch.isfinite(self.value).all()
            and torch.isfinite(self.grad).all()
            and torch.isfinite(self.hess).all()
        )


Numeric = Union[Dual2, torch.Tensor]


def tanh(x: Any) -> Any:
    """tanh on tensors or Dual2."""
    if isinstance(x, Dual2):
        return x.tanh()
    return torch.tanh(as_tensor(x))


def exp(x: Any) -> Any:
    """exp on tensors or Dual2."""
    if isinstance(x, Dual2):
        return x.exp()
    return torch.exp(as_tensor(x))


def linear(x: Any, weight: torch.Tensor, bias: Any = None) -> Any:
    """Affine map of the last axis on tensors or Dual2."""
    if isinstance(x, Dual2):
        return x.linear(weight, bias)
    out = as_tensor(x) @ weight.T
    return out if bias is None else out + bias


def total(x: Any) -> Any:
    """Sum over the last axis on tensors or Dual2."""
    if isinstance(x, Dual2):
        return x.sum()
    return x.sum(-1)


def grad_hess(
    f: Callable[[Dual2], Any], x: Any
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Value, gradient and Hessian of a scalar function at x.

    Args:
        f: Function of a Dual2 with batch shape S + (n,) returning a Dual2 of shape S
        x: Point of shape (n,) or a batch of points S + (n,)

    Returns:
        Tuple of value (S), gradient (S + (n,)) and Hessian (S + (n, n))

    Raises:
        UnsupportedPrimitiveError: If f applies an operation outside the primitive set
        NonFiniteError: If any derivative is NaN or Inf
    """
    seeds = Dual2.variables(x)
    try:
        out = f(seeds)
    except UnsupportedPrimitiveError:
        raise
    except TypeError as e:
        raise UnsupportedPrimitiveError(f"unsupported operation on Dual2: {e}") from e

    if not isinstance(out, Dual2):
        out = Dual2.constant(torch.broadcast_to(as_tensor(out), seeds.value.shape[:-1]), seeds.n)
    if not out.is_finite():
        raise NonFiniteError("non-finite value or derivative in grad_hess")
    return out.value, out.grad, out.hess


class ParamTape:
    """Reverse accumulation of d(loss)/d(theta).

    The operations of ``loss_fn`` are recorded by torch autograd when the tape
    is recorded; ``gradient`` walks that record backwards. Replaying evaluates
    the same operations again without recording.

    Attributes:
        theta (torch.Tensor): Leaf parameter tensor the loss is recorded against
        value (Optional[torch.Tensor]): Recorded loss value
    """

    def __init__(self, loss_fn: Callable[[torch.Tensor], torch.Tensor], theta: Any):
        self.loss_fn = loss_fn
        self.theta = as_tensor(theta).detach().clone().requires_grad_(True)
        self.value: Any = None

    def record(self) -> torch.Tensor:
        """Evaluate the loss while recording.

        Raises:
            NonFiniteError: If the loss is not finite
        """
        self.value = self.loss_fn(self.theta)
        if not torch.isfinite(self.value).all():
            raise NonFiniteError(f"non-finite loss {self.value.item()}")
        return self.value.detach()

    def gradient(self) -> torch.Tensor:
        """Accumulate d(loss)/d(theta) over the recorded operations.

        Raises:
            NonFiniteError: If the gradient is not finite
        """
        if self.value is None:
            self.record()
        (grad,) = torch.autograd.grad(self.value, self.theta, allow_unused=True)
        if grad is None:
            grad = torch.zeros_like(self.theta)
        if not torch.isfinite(grad).all():
            raise NonFiniteError("non-finite parameter gradient")
        return grad.detach()

    def replay(self) -> torch.Tensor:
        """Re-evaluate the loss without recording."""
        with torch.no_grad():
            return self.loss_fn(self.theta.detach())


def value_and_param_grad(
    loss: Callable[[torch.Tensor], torch.Tensor], theta: Any
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Loss value and exact d(loss)/d(theta)."""
    tape = ParamTape(loss, theta)
    value = tape.record()
    return value, tape.gradient()


def param_grad(loss: Callable[[torch.Tensor], torch.Tensor], theta: Any) -> torch.Tensor:
    """Exact gradient of a scalar loss with respect to the parameter vector theta.

    Raises:
        NonFiniteError: If the loss or its gradient is not finite
    """
    return value_and_param_grad(loss, theta)[1]
