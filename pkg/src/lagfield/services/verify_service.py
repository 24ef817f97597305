"""Verification service for lagfield.

Runs the acceptance checks of a density against data: residual size, data
consistency, Newton solvability, compatibility with the exact travelling wave
of the discretised wave equation and prediction from the first grid's rows.
Failures are report content, not exceptions.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

import torch

from ..config.settings import SolverConfig, VerifyConfig
from ..models.density import DensityModel
from ..models.field_grid import FieldGrid, sup_norm_diff
from ..models.travelling_wave import ResonantModeError, exact_wave_tw
from .del_service import del_field
from .solver_service import NewtonError, SolverService
from .train_service import loss_del, reg_summands
from .twave_service import tw_grid

logger = logging.getLogger(__name__)


class CheckResult:
    """Outcome of one verification check.

    Attributes:
        name (str): Check name
        passed (bool): Whether the measured value met the threshold
        value (float): Measured value
        threshold (float): Threshold the value is compared against
        detail (str): Extra information, e.g. a failure reason
    """

    def __init__(self, name: str, passed: bool, value: float, threshold: float, detail: str = ""):
        self.name = name
        self.passed = bool(passed)
        self.value = float(value)
        self.threshold = float(threshold)
        self.detail = detail

    def format_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} {self.name}: {self.value:.6e} (threshold {self.threshold:.3e})"
        return f"{line} {self.detail}" if self.detail else line

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }


class VerificationReport:
    """Ordered collection of check results."""

    def __init__(self, checks: Optional[List[CheckResult]] = None):
        self.checks: List[CheckResult] = list(checks or [])

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def names(self) -> List[str]:
        return [check.name for check in self.checks]

    def to_lines(self) -> List[str]:
        return [check.format_line() for check in self.checks]

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "checks": [check.to_dict() for check in self.checks]}


class VerifyService:
    """Service for verifying a density against trajectory data."""

    def __init__(self, config: Optional[VerifyConfig] = None, solver_config: Optional[SolverConfig] = None):
        self.config = config or VerifyConfig()
        self.solver = SolverService(solver_config)

    def check_max_residual(self, density: DensityModel, grids: Sequence[FieldGrid]) -> CheckResult:
        value = max(del_field(density, grid).max_norm() for grid in grids)
        threshold = self.config.residual_threshold
        return CheckResult("max_residual", value <= threshold, value, threshold)

    def check_loss_del(self, density: DensityModel, grids: Sequence[FieldGrid]) -> CheckResult:
        with torch.no_grad():
            value = float(loss_del(density, list(grids)))
        threshold = self.config.loss_del_threshold
        return CheckResult("loss_del", value <= threshold, value, threshold)

    def check_solvability(self, density: DensityModel, grids: Sequence[FieldGrid]) -> CheckResult:
        with torch.no_grad():
            summands, floored = reg_summands(density, list(grids), self.config.lambda_floor)
        value = float(summands.max())
        count = int(floored.sum())
        threshold = self.config.max_rho_squared
        detail = f"({count} floored summands)" if count else ""
        return CheckResult("solvability", count == 0 and value <= threshold, value, threshold, detail)

    def check_tw_compatibility(self, density: DensityModel, grid: FieldGrid) -> CheckResult:
        threshold = self.config.tw_threshold
        try:
            state, root = exact_wave_tw(self.config.tw_mode, 0.0, 1.0, grid.mesh, d=density.d)
        except ResonantModeError as e:
            return CheckResult("tw_compatibility", False, float("nan"), threshold, str(e))
        value = del_field(density, tw_grid(state, grid.mesh)).max_norm()
        return CheckResult("tw_compatibility", value <= threshold, value, threshold, f"(c={root.c_n:.9f})")

    def check_prediction(self, density: DensityModel, grid: FieldGrid) -> CheckResult:
        threshold = self.config.prediction_threshold
        try:
            predicted = self.solver.propagate(density, grid.values[0], grid.values[1], grid.mesh)
        except NewtonError as e:
            return CheckResult("prediction", False, float("inf"), threshold, str(e))
        value = sup_norm_diff(predicted, grid)
        return CheckResult("prediction", value <= threshold, value, threshold)

    def verify(self, density: DensityModel, grids: Sequence[FieldGrid]) -> VerificationReport:
        """Run every check against the grids.

        Raises:
            ValueError: If no grids are given
        """
        if not grids:
            raise ValueError("at least one grid is required for verification")
        report = VerificationReport(
            [
                self.check_max_residual(density, grids),
                self.check_loss_del(density, grids),
                self.check_solvability(density, grids),
                self.check_tw_compatibility(density, grids[0]),
                self.check_prediction(density, grids[0]),
            ]
        )
        for check in report.checks:
            log = logger.info if check.passed else logger.warning
            log(check.format_line())
        return report
