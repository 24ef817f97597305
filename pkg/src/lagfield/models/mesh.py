"""Mesh model for lagfield.

This module provides the uniform rectangular space-time mesh with a periodic
spatial direction on which all field grids live.
"""

import math
from typing import Any, Dict


class Mesh:
    """Uniform space-time mesh on [0, T] x [0, l) with periodic space.

    Attributes:
        T (float): Final time
        l (float): Spatial period
        N (int): Number of time steps (rows 0..N)
        M (int): Number of spatial cells (columns 0..M-1)
        dt (float): Time step T/N
        dx (float): Spatial width l/M
    """

    def __init__(self, T: float, l: float, N: int, M: int):  # noqa: E741
        """Initialize a Mesh.

        Args:
            T: Final time
            l: Spatial period
            N: Number of time steps
            M: Number of spatial cells

        Raises:
            ValueError: If any field is out of range
        """
        if isinstance(N, bool) or int(N) != N or N < 2:
            raise ValueError("N must be an integer >= 2")
        if isinstance(M, bool) or int(M) != M or M < 2:
            raise ValueError("M must be an integer >= 2")
        if not math.isfinite(T) or T <= 0:
            raise ValueError("T must be positive")
        if not math.isfinite(l) or l <= 0:
            raise ValueError("l must be positive")

        self.T = float(T)
        self.l = float(l)  # noqa: E741
        self.N = int(N)
        self.M = int(M)
        self.dt = self.T / self.N
        self.dx = self.l / self.M

    @classmethod
    def from_widths(cls, T: float, l: float, dt: float, dx: float) -> "Mesh":  # noqa: E741
        """Create a mesh from mesh widths.

        Args:
            T: Final time
            l: Spatial period
            dt: Time step, must divide T
            dx: Spatial width, must divide l

        Returns:
            Mesh instance

        Raises:
            ValueError: If the widths do not divide the domain
        """
        N = round(T / dt)
        M = round(l / dx)
        if N < 1 or not math.isclose(N * dt, T, rel_tol=1e-9):
            raise ValueError(f"dt={dt} does not divide T={T}")
        if M < 1 or not math.isclose(M * dx, l, rel_tol=1e-9):
            raise ValueError(f"dx={dx} does not divide l={l}")
        return cls(T=T, l=l, N=N, M=M)

    def with_steps(self, N: int) -> "Mesh":
        """Return a mesh with the same widths and N time steps."""
        return Mesh(T=self.dt * N, l=self.l, N=N, M=self.M)

    def times(self) -> list[float]:
        """Time coordinates of the rows 0..N."""
        return [i * self.dt for i in range(self.N + 1)]

    def positions(self) -> list[float]:
        """Spatial coordinates of the columns 0..M-1."""
        return [j * self.dx for j in range(self.M)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mesh):
            return False
        return (
            self.T == other.T
            and self.l == other.l
            and self.N == other.N
            and self.M == other.M
        )

    def __hash__(self) -> int:
        return hash((self.T, self.l, self.N, self.M))

    def __repr__(self) -> str:
        return (
            f"Mesh(T={self.T!r}, l={self.l!r}, N={self.N}, M={self.M}, "
            f"dt={self.dt!r}, dx={self.dx!r})"
        )

    def to_dict(self) -> Dict[str, Any]:
        """Convert mesh to dictionary."""
        return {"T": self.T, "l": self.l, "N": self.N, "M": self.M}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Mesh":
        """Create mesh from dictionary.

        Accepts either ``N``/``M`` or the widths ``dt``/``dx``.
        """
        if "N" in data and "M" in data:
            return cls(T=data["T"], l=data["l"], N=data["N"], M=data["M"])
        return cls.from_widths(T=data["T"], l=data["l"], dt=data["dt"], dx=data["dx"])
