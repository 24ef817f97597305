#!/usr/bin/env python3
"""Unit tests for the NewtonReport model."""

import math

import pytest

from lagfield.models.newton_report import NewtonReport, summarize_reports


class TestNewtonReportModel:
    """Test NewtonReport construction and formatting."""

    def test_create_report(self):
        report = NewtonReport(
            iterations=3, final_residual_norm=1e-13, rho_star=6.25e-4, per_iteration_errors=[1.0, 1e-3, 1e-9, 1e-13]
        )

        assert report.iterations == 3
        assert report.i is None
        assert not report.at_floor

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"iterations": -1, "final_residual_norm": 0.0, "rho_star": 1.0},
            {"iterations": 0, "final_residual_norm": -1.0, "rho_star": 1.0},
            {"iterations": 0, "final_residual_norm": math.nan, "rho_star": 1.0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            NewtonReport(**kwargs)

    def test_located(self):
        report = NewtonReport(1, 0.0, 1.0).located(4, 7, sweep=1)

        assert (report.i, report.j, report.sweep) == (4, 7, 1)
        assert report.summary_line().startswith("i=4 j=7 iterations=1 ")

    def test_summary_line_marks_floor(self):
        report = NewtonReport(2, 3e-12, 1.0, at_floor=True)

        assert report.summary_line().endswith(" at_floor")

    def test_to_dict(self):
        report = NewtonReport(2, 1e-14, 0.5, [1.0, 1e-7, 1e-14]).located(1, 2)

        data = report.to_dict()

        assert data["per_iteration_errors"] == [1.0, 1e-7, 1e-14]
        assert data["rho_star"] == 0.5
        assert (data["i"], data["j"], data["sweep"]) == (1, 2, 0)


class TestConvergenceOrder:
    """Test the fitted convergence order."""

    def test_quadratic_sequence(self):
        """Test e_{n+1} = e_n^2 gives order 2."""
        report = NewtonReport(3, 1e-16, 1.0, [1e-1, 1e-2, 1e-4, 1e-8, 1e-16])

        assert report.convergence_order(floor=0.0) == pytest.approx(2.0, rel=1e-10)

    def test_linear_sequence(self):
        report = NewtonReport(4, 1e-4, 1.0, [1.0, 0.1, 0.01, 1e-3, 1e-4])

        assert report.convergence_order(floor=0.0) == pytest.approx(1.0, rel=1e-10)

    def test_default_floor_drops_rounding_level(self):
        """Test that errors near machine precision are left out of the fit."""
        report = NewtonReport(4, 1e-15, 1.0, [1e2, 1.0, 1e-4, 1e-15])

        assert report.convergence_order() == pytest.approx(2.0, rel=1e-10)

    def test_too_few_pairs(self):
        assert math.isnan(NewtonReport(1, 0.0, 1.0, [1.0, 0.0]).convergence_order())
        assert math.isnan(NewtonReport(0, 0.0, 1.0).convergence_order())


class TestSummarizeReports:
    """Test aggregation of propagation reports."""

    def test_empty(self):
        assert summarize_reports([]) == {"solves": 0}

    def test_aggregates(self):
        reports = [
            NewtonReport(1, 1e-13, 0.5),
            NewtonReport(3, 2e-12, 0.25, at_floor=True),
        ]

        summary = summarize_reports(reports)

        assert summary == {
            "solves": 2,
            "max_iterations": 3,
            "total_iterations": 4,
            "max_residual": 2e-12,
            "max_rho_star": 0.5,
            "min_rho_star": 0.25,
            "at_floor": 1,
        }
