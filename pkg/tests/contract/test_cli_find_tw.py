#!/usr/bin/env python3
"""Contract test for the CLI find-tw command."""

import csv

import pytest
import toml

from lagfield.cli.main import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from lagfield.config.settings import default_mesh
from lagfield.models.travelling_wave import dispersion_root, read_tw_result


class TestFindTwCommandContract:
    """Test find-tw command contract compliance."""

    def test_exact_start_is_kept(self, tmp_path, wave_checkpoint):
        out = str(tmp_path / "tw.toml")

        result = main(["--out", out, "find-tw", wave_checkpoint, "--sigma", "0", "--steps", "5"])

        assert result == EXIT_OK
        state, mesh, loss = read_tw_result(out)
        assert mesh == default_mesh()
        assert state.c == dispersion_root(1, mesh).c_n
        assert loss < 1e-18

    def test_history_and_manifest(self, tmp_path, wave_checkpoint):
        out = str(tmp_path / "tw.toml")

        main(["--seed", "1", "--out", out, "find-tw", wave_checkpoint, "--sigma", "0.01", "--steps", "3"])

        with open(tmp_path / "tw.history.csv", newline="") as f:
            lines = list(csv.reader(f))
        assert lines[0] == ["step", "loss"]
        assert [int(row[0]) for row in lines[1:]] == [0, 1, 2, 3]

        manifest = toml.load(out + ".manifest.toml")
        assert manifest["command"] == "find-tw"
        assert manifest["seed"] == 1
        assert manifest["results"]["steps"] == 3
        assert manifest["results"]["c_reference"] == pytest.approx(dispersion_root(1, default_mesh()).c_n)
        assert manifest["outputs"]["history"].endswith("tw.history.csv")

    def test_result_file_layout(self, tmp_path, wave_checkpoint):
        out = str(tmp_path / "tw.toml")
        main(["--out", out, "find-tw", wave_checkpoint, "--sigma", "0", "--mode", "2"])

        data = toml.load(out)

        assert sorted(data) == ["loss", "mesh", "run", "wave"]
        assert len(data["wave"]["coefficients"]) == 11
        assert data["run"]["c_reference"] == data["wave"]["c"]
        assert data["run"]["speed_error"] == 0.0

    def test_dispersion_csv(self, tmp_path, wave_checkpoint):
        table = str(tmp_path / "dispersion.csv")

        argv = ["--out", str(tmp_path / "tw.toml"), "find-tw", wave_checkpoint, "--sigma", "0"]
        main(argv + ["--dispersion-csv", table])

        with open(table, newline="") as f:
            lines = list(csv.reader(f))
        assert lines[0] == ["n", "c_n", "resonant", "rhs"]
        assert len(lines) == 12
        assert lines[1][2] == "1"
        assert float(lines[2][1]) == pytest.approx(dispersion_root(1, default_mesh()).c_n, rel=1e-15)

    def test_resonant_mode_is_a_numerical_failure(self, tmp_path, wave_checkpoint, capsys):
        config = tmp_path / "coarse.toml"
        config.write_text("[mesh]\nT = 6.0\nN = 2\nM = 4\n")

        result = main(["--config", str(config), "find-tw", wave_checkpoint, "--sigma", "0"])

        assert result == EXIT_NUMERICAL
        assert "resonant" in capsys.readouterr().err

    def test_unrepresentable_mode(self, wave_checkpoint):
        assert main(["find-tw", wave_checkpoint, "--mode", "11"]) != EXIT_OK

    def test_invalid_overrides(self, tmp_path, wave_checkpoint, capsys):
        out = str(tmp_path / "tw.toml")

        assert main(["--out", out, "find-tw", wave_checkpoint, "--sigma", "-0.1"]) == EXIT_CONFIG
        assert "twave.noise_sigma must be >= 0" in capsys.readouterr().err

    def test_overrides_reach_manifest(self, tmp_path, wave_checkpoint):
        out = str(tmp_path / "tw.toml")
        main(["--out", out, "find-tw", wave_checkpoint, "--sigma", "0.02", "--steps", "2", "--mode", "2"])

        twave = toml.load(out + ".manifest.toml")["config"]["twave"]

        assert twave["noise_sigma"] == 0.02
        assert twave["steps"] == 2
        assert twave["mode"] == 2
