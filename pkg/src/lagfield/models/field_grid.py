"""FieldGrid model for lagfield.

This module provides the field grid U = (u^i_j) on a Mesh, the three-point
Stencil a discrete Lagrangian density reads, the ResidualField produced by the
discrete Euler-Lagrange assembly, and the plain-text grid file format.
"""

import csv
import logging
import os
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from .mesh import Mesh

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".17g"
HEADER_KEYS = ("T", "l", "N", "M", "d")


class MeshMismatchError(ValueError):
    """Raised when two grids that must share a mesh do not."""


class GridFormatError(ValueError):
    """Raised when a grid file cannot be parsed."""


def _as_field_array(values: Any, rows: int, M: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim == 2:
        array = array[:, :, np.newaxis]
    if array.ndim != 3:
        raise ValueError(f"values must have shape (rows, M) or (rows, M, d), got {array.shape}")
    if array.shape[0] != rows or array.shape[1] != M:
        raise ValueError(f"values must have shape ({rows}, {M}, d), got {array.shape}")
    if array.shape[2] < 1:
        raise ValueError("field dimension d must be >= 1")
    if not np.all(np.isfinite(array)):
        raise ValueError("values must be finite")
    array.setflags(write=False)
    return array


class Stencil:
    """The triple (u^i_j, u^{i+1}_j, u^i_{j+1}) a density is evaluated on.

    Attributes:
        a (np.ndarray): u^i_j
        b (np.ndarray): u^{i+1}_j
        c (np.ndarray): u^i_{j+1}
    """

    def __init__(self, a: Any, b: Any, c: Any):
        self.a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        self.c = np.atleast_1d(np.asarray(c, dtype=np.float64))
        if not (self.a.shape == self.b.shape == self.c.shape) or self.a.ndim != 1:
            raise ValueError("stencil vectors must share dimension d")

    @property
    def d(self) -> int:
        return int(self.a.shape[0])

    def __iter__(self):  # type: ignore[no-untyped-def]
        return iter((self.a, self.b, self.c))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Stencil):
            return False
        return bool(
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    def __repr__(self) -> str:
        return f"Stencil(a={self.a.tolist()}, b={self.b.tolist()}, c={self.c.tolist()})"


class FieldGrid:
    """Field values u^i_j in R^d on every mesh point.

    Storage is row-major by time index: ``values[i, j]`` is u^i_j, shape
    (N+1, M, d). The array is read-only once the grid is constructed.

    Attributes:
        mesh (Mesh): Mesh the values live on
        values (np.ndarray): Field values, shape (N+1, M, d)
    """

    def __init__(self, mesh: Mesh, values: Any):
        """Initialize a FieldGrid.

        Args:
            mesh: Mesh of the grid
            values: Array of shape (N+1, M) or (N+1, M, d)

        Raises:
            ValueError: If shape does not match the mesh or entries are not finite
        """
        if not isinstance(mesh, Mesh):
            raise ValueError("mesh must be a Mesh")
        self.mesh = mesh
        self.values = _as_field_array(values, mesh.N + 1, mesh.M)

    @property
    def d(self) -> int:
        return int(self.values.shape[2])

    @classmethod
    def zeros(cls, mesh: Mesh, d: int = 1) -> "FieldGrid":
        """Create the all-zero grid."""
        return cls(mesh, np.zeros((mesh.N + 1, mesh.M, d)))

    @classmethod
    def from_rows(cls, mesh: Mesh, rows: Sequence[Any]) -> "FieldGrid":
        """Create a grid from a sequence of N+1 rows."""
        return cls(mesh, np.stack([np.asarray(row, dtype=np.float64) for row in rows]))

    def stencil_at(self, i: int, j: int) -> Stencil:
        """Return (u^i_j, u^{i+1}_j, u^i_{(j+1) mod M}).

        Raises:
            IndexError: If i is outside 0..N-1
        """
        if not 0 <= i <= self.mesh.N - 1:
            raise IndexError(f"time index {i} outside 0..{self.mesh.N - 1}")
        M = self.mesh.M
        j = j % M
        return Stencil(self.values[i, j], self.values[i + 1, j], self.values[i, (j + 1) % M])

    def roll_space(self, shift: int) -> "FieldGrid":
        """Periodic shift in j: the result has u^i_j = self.u^i_{j-shift}."""
        return FieldGrid(self.mesh, np.roll(self.values, shift, axis=1))

    def row(self, i: int) -> np.ndarray:
        """Row i as an (M, d) array."""
        return self.values[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldGrid):
            return False
        return self.mesh == other.mesh and bool(np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"FieldGrid(mesh={self.mesh!r}, d={self.d})"

    def to_dict(self) -> Dict[str, Any]:
        """Convert grid to dictionary."""
        return {"mesh": self.mesh.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FieldGrid":
        """Create grid from dictionary."""
        return cls(Mesh.from_dict(data["mesh"]), data["values"])


class ResidualField:
    """DEL(L_d)^i_j(U) on the interior rows i = 1..N-1.

    Attributes:
        mesh (Mesh): Mesh of the source grid
        values (np.ndarray): Residuals, shape (N-1, M, d); ``values[k]`` is row i = k+1
    """

    def __init__(self, mesh: Mesh, values: Any):
        if not isinstance(mesh, Mesh):
            raise ValueError("mesh must be a Mesh")
        self.mesh = mesh
        self.values = _as_field_array(values, mesh.N - 1, mesh.M)

    @property
    def d(self) -> int:
        return int(self.values.shape[2])

    def at(self, i: int, j: int) -> np.ndarray:
        """Residual at interior point (i, j)."""
        if not 1 <= i <= self.mesh.N - 1:
            raise IndexError(f"time index {i} outside 1..{self.mesh.N - 1}")
        return self.values[i - 1, j % self.mesh.M]

    def max_abs(self) -> float:
        """Largest absolute residual component."""
        return float(np.max(np.abs(self.values)))

    def max_norm(self) -> float:
        """Largest Euclidean norm of a residual vector."""
        return float(np.max(np.linalg.norm(self.values, axis=2)))

    def sum_squares(self) -> float:
        """Sum of squared residual norms (the data-consistency loss of one grid)."""
        return float(np.sum(self.values**2))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResidualField):
            return False
        return self.mesh == other.mesh and bool(np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"ResidualField(mesh={self.mesh!r}, max_abs={self.max_abs():.3e})"


def stencil_at(U: FieldGrid, i: int, j: int) -> Stencil:
    """Return the stencil (u^i_j, u^{i+1}_j, u^i_{j+1}) of U."""
    return U.stencil_at(i, j)


def sup_norm_diff(U: FieldGrid, V: FieldGrid) -> float:
    """Max over all points and components of |U - V|.

    Raises:
        MeshMismatchError: If the grids differ in mesh or field dimension
    """
    if U.mesh != V.mesh or U.d != V.d:
        raise MeshMismatchError(f"cannot compare {U!r} with {V!r}")
    return float(np.max(np.abs(U.values - V.values)))


def write_grid(grid: Union[FieldGrid, ResidualField], path: str) -> None:
    """Write a grid in the lagfield text format.

    The header holds ``key = value`` lines for T, l, N, M, d (plus RESIDUAL = 1
    for residual fields), followed by one line of d comma-separated values per
    point, row i then column j.
    """
    mesh = grid.mesh
    lines = [
        f"T = {format(mesh.T, FLOAT_FORMAT)}",
        f"l = {format(mesh.l, FLOAT_FORMAT)}",
        f"N = {mesh.N}",
        f"M = {mesh.M}",
        f"d = {grid.d}",
    ]
    if isinstance(grid, ResidualField):
        lines.append("RESIDUAL = 1")
    for row in grid.values:
        for point in row:
            lines.append(",".join(format(float(v), FLOAT_FORMAT) for v in point))

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.debug(f"Wrote {grid!r} to {path}")


def read_grid(path: str) -> Union[FieldGrid, ResidualField]:
    """Read a grid written by ``write_grid``.

    Returns:
        FieldGrid, or ResidualField when the header carries RESIDUAL = 1

    Raises:
        FileNotFoundError: If the file does not exist
        GridFormatError: If the header or body is malformed
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]

    header: Dict[str, str] = {}
    body_start = 0
    for body_start, line in enumerate(lines):
        if "=" not in line:
            break
        key, value = (part.strip() for part in line.split("=", 1))
        header[key] = value
    else:
        body_start = len(lines)

    missing = [key for key in HEADER_KEYS if key not in header]
    if missing:
        raise GridFormatError(f"{path}: missing header keys {missing}")
    unknown = set(header) - set(HEADER_KEYS) - {"RESIDUAL"}
    if unknown:
        raise GridFormatError(f"{path}: unknown header keys {sorted(unknown)}")

    try:
        mesh = Mesh(T=float(header["T"]), l=float(header["l"]), N=int(header["N"]), M=int(header["M"]))
        d = int(header["d"])
        residual = header.get("RESIDUAL", "0") == "1"
        rows = mesh.N - 1 if residual else mesh.N + 1
        body = [[float(v) for v in line.split(",")] for line in lines[body_start:]]
    except ValueError as e:
        raise GridFormatError(f"{path}: {e}") from e

    if len(body) != rows * mesh.M or any(len(point) != d for point in body):
        raise GridFormatError(
            f"{path}: expected {rows * mesh.M} lines of {d} values, got {len(body)}"
        )
    values = np.array(body, dtype=np.float64).reshape(rows, mesh.M, d)
    if residual:
        return ResidualField(mesh, values)
    return FieldGrid(mesh, values)


def read_field_grid(path: str) -> FieldGrid:
    """Read a grid file that must hold a FieldGrid (not a residual field)."""
    grid = read_grid(path)
    if not isinstance(grid, FieldGrid):
        raise GridFormatError(f"{path}: expected a field grid, found a residual field")
    return grid


def write_grid_csv(grid: FieldGrid, path: str, reference: Optional[FieldGrid] = None) -> None:
    """Write a plot-ready CSV with columns i, j, t, x, u_0.. (and ref_0.. if given)."""
    mesh = grid.mesh
    header = ["i", "j", "t", "x"] + [f"u_{k}" for k in range(grid.d)]
    if reference is not None:
        header += [f"ref_{k}" for k in range(reference.d)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(mesh.N + 1):
            for j in range(mesh.M):
                row = [i, j, format(i * mesh.dt, FLOAT_FORMAT), format(j * mesh.dx, FLOAT_FORMAT)]
                row += [format(float(v), FLOAT_FORMAT) for v in grid.values[i, j]]
                if reference is not None:
                    row += [format(float(v), FLOAT_FORMAT) for v in reference.values[i, j]]
                writer.writerow(row)
