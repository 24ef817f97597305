"""NewtonReport model for lagfield.

This module provides the record of one Newton solve for u^{i+1}_j.
"""

import math
import sys
from typing import Any, Dict, List, Optional

import numpy as np


class NewtonReport:
    """Outcome of one Newton solve.

    final_residual_norm is at most the solver tolerance, except for solves with at_floor
    set: those stalled at rounding level and were accepted with a residual above it.

    Attributes:
        iterations (int): Newton updates performed
        final_residual_norm (float): Residual norm at the accepted value
        rho_star (float): Spectral norm of inv(d12) at the accepted value
        per_iteration_errors (List[float]): Residual norm before each update and at acceptance
        at_floor (bool): Accepted above tolerance because the update reached floating-point resolution
        i (Optional[int]): Time index of the DEL equation solved, once located
        j (Optional[int]): Space index of the DEL equation solved, once located
        sweep (int): Row sweep the solve belongs to
    """

    def __init__(
        self,
        iterations: int,
        final_residual_norm: float,
        rho_star: float,
        per_iteration_errors: Optional[List[float]] = None,
        at_floor: bool = False,
        i: Optional[int] = None,
        j: Optional[int] = None,
        sweep: int = 0,
    ):
        if iterations < 0:
            raise ValueError("iterations cannot be negative")
        if final_residual_norm < 0 or math.isnan(final_residual_norm):
            raise ValueError("final_residual_norm must be a non-negative number")
        self.iterations = int(iterations)
        self.final_residual_norm = float(final_residual_norm)
        self.rho_star = float(rho_star)
        self.per_iteration_errors = [float(e) for e in (per_iteration_errors or [])]
        self.at_floor = bool(at_floor)
        self.i = i
        self.j = j
        self.sweep = int(sweep)

    def located(self, i: int, j: int, sweep: int = 0) -> "NewtonReport":
        """Attach the grid location of the solve."""
        self.i, self.j, self.sweep = i, j, sweep
        return self

    def convergence_order(self, floor: Optional[float] = None) -> float:
        """Fitted slope of log e_{n+1} against log e_n.

        Args:
            floor: Errors at or below this value are ignored; defaults to
                1e4 * eps times the largest recorded error

        Returns:
            Slope of the least-squares fit, or NaN with fewer than two usable pairs
        """
        errors = self.per_iteration_errors
        if not errors:
            return math.nan
        if floor is None:
            floor = 1e4 * sys.float_info.epsilon * max(errors)
        pairs = [
            (math.log(e0), math.log(e1))
            for e0, e1 in zip(errors, errors[1:])
            if e0 > floor and e1 > floor
        ]
        if len(pairs) < 2:
            return math.nan
        x, y = np.array(pairs).T
        slope, _ = np.polyfit(x, y, 1)
        return float(slope)

    def summary_line(self) -> str:
        """One structured text line: i, j, iterations, residual, rho_star."""
        return (
            f"i={self.i} j={self.j} iterations={self.iterations} "
            f"residual={self.final_residual_norm:.3e} rho_star={self.rho_star:.6e}"
            + (" at_floor" if self.at_floor else "")
        )

    def __repr__(self) -> str:
        return f"NewtonReport({self.summary_line()})"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "i": self.i,
            "j": self.j,
            "sweep": self.sweep,
            "iterations": self.iterations,
            "final_residual_norm": self.final_residual_norm,
            "rho_star": self.rho_star,
            "per_iteration_errors": list(self.per_iteration_errors),
            "at_floor": self.at_floor,
        }


def summarize_reports(reports: List[NewtonReport]) -> Dict[str, Any]:
    """Aggregate a propagation's reports for manifests and logs."""
    if not reports:
        return {"solves": 0}
    residuals = [r.final_residual_norm for r in reports]
    rho = [r.rho_star for r in reports]
    return {
        "solves": len(reports),
        "max_iterations": max(r.iterations for r in reports),
        "total_iterations": sum(r.iterations for r in reports),
        "max_residual": max(residuals),
        "max_rho_star": max(rho),
        "min_rho_star": min(rho),
        "at_floor": sum(1 for r in reports if r.at_floor),
    }
