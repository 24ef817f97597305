"""Travelling-wave models for lagfield.

A travelling wave is a speed c and an l-periodic profile f with
u^i_j = f(j dx - c i dt). The profile is a discrete Fourier series with M
summands, modes m = -(M-1)//2 .. M//2, and conjugate-symmetric coefficients.
Only the non-negative half is stored independently:

    f(xi) = Re sum_m fhat_m exp(2 pi i m xi / l)
          = re_0 + sum_{0<m<M/2} 2 (re_m cos - im_m sin) + [M even] (re_h cos - im_h sin)
"""

import logging
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import toml
import torch

from ..services.autodiff import DTYPE, as_tensor
from .mesh import Mesh

logger = logging.getLogger(__name__)


class ResonantModeError(ValueError):
    """Raised when a mode has no real dispersion speed."""

    def __init__(self, root: "DispersionRoot"):
        super().__init__(
            f"mode n={root.n} is resonant: dispersion right-hand side {root.rhs:.12g} admits no real speed"
        )
        self.root = root


def modes(M: int) -> np.ndarray:
    """Mode numbers -(M-1)//2 .. M//2 (M entries)."""
    return np.arange(-((M - 1) // 2), M // 2 + 1)


def half_count(M: int) -> int:
    """Number of non-negative modes, M//2 + 1."""
    return M // 2 + 1


def mode_weights(M: int) -> torch.Tensor:
    """Multiplicity of each non-negative mode in the real profile sum."""
    weights = torch.full((half_count(M),), 2.0, dtype=DTYPE)
    weights[0] = 1.0
    if M % 2 == 0:
        weights[-1] = 1.0
    return weights


def profile_tensor(
    re: torch.Tensor, im: torch.Tensor, xi: torch.Tensor, l: float, M: int  # noqa: E741
) -> torch.Tensor:
    """Differentiable profile evaluation.

    Args:
        re: Real parts of the non-negative modes, shape (M//2 + 1, d)
        im: Imaginary parts, same shape (row 0 is ignored)
        xi: Evaluation points, shape S
        l: Period
        M: Number of summands

    Returns:
        Profile values of shape S + (d,)
    """
    m = torch.arange(half_count(M), dtype=DTYPE)
    phase = (2.0 * math.pi / l) * xi.unsqueeze(-1) * m
    weights = mode_weights(M)
    cos = weights * torch.cos(phase)
    sin = weights * torch.sin(phase)
    return cos @ re - sin[..., 1:] @ im[1:]


class DispersionRoot:
    """Wave speed of one Fourier mode of the discretised wave equation.

    cos(kappa_n c_n dt) = 1 - dt^2/2 + (dt/dx)^2 (cos(kappa_n dx) - 1), kappa_n = 2 pi n / l.

    Attributes:
        n (int): Mode number
        c_n (float): Principal non-negative speed, NaN when resonant
        resonant (bool): No real speed exists
        rhs (float): Right-hand side of the dispersion relation
    """

    def __init__(self, n: int, c_n: float, resonant: bool, rhs: float):
        self.n = int(n)
        self.c_n = float(c_n)
        self.resonant = bool(resonant)
        self.rhs = float(rhs)

    @classmethod
    def solve(cls, n: int, mesh: Mesh) -> "DispersionRoot":
        """Principal root for mode n on the mesh (n = 0 is degenerate and flagged resonant)."""
        kappa = 2.0 * math.pi * abs(n) / mesh.l
        ratio = (mesh.dt / mesh.dx) ** 2
        rhs = 1.0 - mesh.dt**2 / 2.0 + ratio * (math.cos(kappa * mesh.dx) - 1.0)
        if n == 0 or abs(rhs) > 1.0:
            return cls(n, math.nan, True, rhs)
        return cls(n, math.acos(rhs) / (kappa * mesh.dt), False, rhs)

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "c_n": self.c_n, "resonant": self.resonant, "rhs": self.rhs}

    def __repr__(self) -> str:
        if self.resonant:
            return f"DispersionRoot(n={self.n}, resonant, rhs={self.rhs:.6g})"
        return f"DispersionRoot(n={self.n}, c_n={self.c_n:.12g})"


def dispersion_root(n: int, mesh: Mesh) -> DispersionRoot:
    """Dispersion root of mode n."""
    return DispersionRoot.solve(n, mesh)


def dispersion_table(mesh: Mesh) -> List[DispersionRoot]:
    """Roots of every mode 0..M//2 (speeds are even in n)."""
    return [DispersionRoot.solve(n, mesh) for n in range(half_count(mesh.M))]


class TravellingWaveState:
    """Speed and Fourier profile of a travelling wave.

    Attributes:
        c (float): Wave speed
        fhat (np.ndarray): Complex coefficients, shape (M, d), ordered by ``modes(M)``
        l (float): Profile period
    """

    def __init__(self, c: float, fhat: Any, l: float = 1.0):  # noqa: E741
        fhat = np.array(fhat, dtype=np.complex128)
        if fhat.ndim == 1:
            fhat = fhat[:, np.newaxis]
        if fhat.ndim != 2 or fhat.shape[0] < 2:
            raise ValueError(f"fhat must have shape (M, d) with M >= 2, got {fhat.shape}")
        if not math.isfinite(c):
            raise ValueError("c must be finite")
        if not math.isfinite(l) or l <= 0:
            raise ValueError("l must be positive")
        if not np.all(np.isfinite(fhat)):
            raise ValueError("fhat must be finite")

        M = fhat.shape[0]
        m = modes(M)
        scale = max(1.0, float(np.max(np.abs(fhat))))
        for k in range(1, (M - 1) // 2 + 1):
            if np.max(np.abs(fhat[m == -k] - np.conj(fhat[m == k]))) > 1e-12 * scale:
                raise ValueError(f"coefficients of modes -{k} and {k} are not conjugate")
        if np.max(np.abs(fhat[m == 0].imag)) > 1e-12 * scale:
            raise ValueError("the mode-0 coefficient must be real")

        self.c = float(c)
        self.fhat = fhat
        self.l = float(l)  # noqa: E741

    @property
    def M(self) -> int:
        return int(self.fhat.shape[0])

    @property
    def d(self) -> int:
        return int(self.fhat.shape[1])

    @classmethod
    def zeros(cls, M: int, d: int = 1, c: float = 0.0, l: float = 1.0) -> "TravellingWaveState":  # noqa: E741
        return cls(c, np.zeros((M, d), dtype=np.complex128), l)

    @classmethod
    def from_half(cls, c: float, re: Any, im: Any, M: int, l: float = 1.0) -> "TravellingWaveState":  # noqa: E741
        """Build from the non-negative half spectrum, shapes (M//2 + 1, d)."""
        re = np.atleast_2d(np.asarray(re, dtype=np.float64).reshape(half_count(M), -1))
        im = np.atleast_2d(np.asarray(im, dtype=np.float64).reshape(half_count(M), -1))
        half = re + 1j * im
        half[0] = re[0]
        m = modes(M)
        fhat = np.empty((M, half.shape[1]), dtype=np.complex128)
        for k, mode in enumerate(m):
            fhat[k] = half[mode] if mode >= 0 else np.conj(half[-mode])
        return cls(c, fhat, l)

    def half_spectrum(self) -> Tuple[np.ndarray, np.ndarray]:
        """Real and imaginary parts of the modes 0..M//2, each (M//2 + 1, d)."""
        m = modes(self.M)
        half = np.stack([self.fhat[m == k][0] for k in range(half_count(self.M))])
        im = half.imag.copy()
        im[0] = 0.0
        return half.real.copy(), im

    def to_parameters(self) -> torch.Tensor:
        """Flat real vector (c, re_0..re_h, im_1..im_h) per component."""
        re, im = self.half_spectrum()
        return torch.cat(
            [torch.tensor([self.c], dtype=DTYPE), as_tensor(re).flatten(), as_tensor(im[1:]).flatten()]
        )

    @staticmethod
    def unpack(theta: torch.Tensor, M: int, d: int) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Split a parameter vector into (c, re, im) tensors; im row 0 is zero."""
        h = half_count(M)
        c = theta[0]
        re = theta[1 : 1 + h * d].reshape(h, d)
        im = torch.cat([torch.zeros(1, d, dtype=DTYPE), theta[1 + h * d :].reshape(h - 1, d)])
        return c, re, im

    @classmethod
    def from_parameters(cls, theta: Any, M: int, d: int = 1, l: float = 1.0) -> "TravellingWaveState":  # noqa: E741
        theta = as_tensor(theta).detach()
        c, re, im = cls.unpack(theta, M, d)
        return cls.from_half(float(c), re.numpy(), im.numpy(), M, l)

    def profile_eval(self, xi: Any) -> np.ndarray:
        """Profile value(s) f(xi); shape of xi plus (d,)."""
        re, im = self.half_spectrum()
        with torch.no_grad():
            values = profile_tensor(as_tensor(re), as_tensor(im), as_tensor(xi), self.l, self.M)
        return values.numpy()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TravellingWaveState):
            return False
        return self.c == other.c and self.l == other.l and bool(np.array_equal(self.fhat, other.fhat))

    def __repr__(self) -> str:
        return f"TravellingWaveState(c={self.c!r}, M={self.M}, d={self.d}, l={self.l!r})"

    def to_dict(self) -> Dict[str, Any]:
        re, im = self.half_spectrum()
        return {
            "c": self.c,
            "l": self.l,
            "M": self.M,
            "d": self.d,
            "coefficients": [
                {"m": m, "re": [float(v) for v in re[m]], "im": [float(v) for v in im[m]]}
                for m in range(half_count(self.M))
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TravellingWaveState":
        M = int(data["M"])
        rows = sorted(data["coefficients"], key=lambda row: int(row["m"]))
        if [int(row["m"]) for row in rows] != list(range(half_count(M))):
            raise ValueError(f"coefficient table must list modes 0..{M // 2}")
        re = np.array([row["re"] for row in rows], dtype=np.float64)
        im = np.array([row["im"] for row in rows], dtype=np.float64)
        return cls.from_half(float(data["c"]), re, im, M, float(data["l"]))


def profile_eval(state: TravellingWaveState, xi: Any) -> np.ndarray:
    """Real profile value f(xi) of a travelling-wave state."""
    return state.profile_eval(xi)


def exact_wave_tw(
    n: int, alpha: float, beta: float, mesh: Mesh, d: int = 1
) -> Tuple[TravellingWaveState, DispersionRoot]:
    """Exact travelling wave f = alpha sin(kappa_n xi) + beta cos(kappa_n xi) of the discretised wave equation.

    Every field component carries the same sinusoid.

    Raises:
        ValueError: If |n| exceeds M//2
        ResonantModeError: If the mode has no real speed
    """
    if abs(n) > mesh.M // 2:
        raise ValueError(f"mode {n} is not representable on a mesh with M={mesh.M}")
    root = dispersion_root(n, mesh)
    if root.resonant:
        logger.warning(f"Resonant mode requested: {root!r}")
        raise ResonantModeError(root)

    m = abs(n)
    sign = 1.0 if n > 0 else -1.0
    weight = float(mode_weights(mesh.M)[m])
    re = np.zeros((half_count(mesh.M), d))
    im = np.zeros((half_count(mesh.M), d))
    re[m] = beta / weight
    im[m] = -sign * alpha / weight
    return TravellingWaveState.from_half(root.c_n, re, im, mesh.M, mesh.l), root


def write_tw_result(
    path: str,
    state: TravellingWaveState,
    mesh: Mesh,
    loss: float,
    history: Optional[List[float]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> None:
    """Write a travelling-wave result: speed, mode table, final loss and mesh echo."""
    data: Dict[str, Any] = {
        "wave": state.to_dict(),
        "loss": {"final": float(loss), "steps": len(history or [])},
        "mesh": mesh.to_dict(),
    }
    if extra:
        data["run"] = extra
    with open(path, "w", encoding="utf-8") as f:
        toml.dump(data, f)
    logger.info(f"Wrote travelling wave c={state.c:.12g} to {path}")


def read_tw_result(path: str) -> Tuple[TravellingWaveState, Mesh, float]:
    """Read a travelling-wave result written by ``write_tw_result``.

    Raises:
        ValueError: If the file is malformed
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = toml.load(f)
        except toml.TomlDecodeError as e:
            raise ValueError(f"{path}: {e}") from e
    try:
        return (
            TravellingWaveState.from_dict(data["wave"]),
            Mesh.from_dict(data["mesh"]),
            float(data["loss"]["final"]),
        )
    except KeyError as e:
        raise ValueError(f"{path}: missing entry {e}") from e
