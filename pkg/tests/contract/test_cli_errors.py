#!/usr/bin/env python3
"""Contract test for the CLI exit codes shared by every command."""

import pytest

from lagfield import __version__
from lagfield.cli.main import EXIT_CONFIG, EXIT_FAILURE, EXIT_IO, EXIT_USAGE, create_parser, main
from lagfield.config.settings import THREADS_ENV


class TestCliContract:
    """Test the command-line surface."""

    def test_no_command_prints_help(self, capsys):
        assert main([]) == EXIT_FAILURE
        assert "usage: lagfield" in capsys.readouterr().out

    @pytest.mark.parametrize(
        "argv",
        [
            ["simulate"],
            ["train"],
            ["propagate", "density.toml"],
            ["verify", "density.toml"],
            ["--log-level", "TRACE", "generate"],
            ["find-tw", "density.toml", "--steps", "many"],
        ],
    )
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as exc_info:
            main(argv)
        assert exc_info.value.code == EXIT_USAGE

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["--version"])

        assert exc_info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_commands(self):
        parser = create_parser()
        subparsers = next(a for a in parser._actions if a.dest == "command")

        assert sorted(subparsers.choices) == ["find-tw", "generate", "propagate", "train", "verify"]

    def test_unknown_config_key(self, tmp_path, capsys):
        config = tmp_path / "lagfield.toml"
        config.write_text("[train]\nepoch = 3\n")

        assert main(["--config", str(config), "generate", "--K", "1"]) == EXIT_CONFIG
        assert "unknown keys" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.toml"), "generate", "--K", "1"]) == EXIT_IO

    def test_config_from_environment(self, tmp_path, monkeypatch):
        config = tmp_path / "lagfield.toml"
        config.write_text("[verify]\nresidual_threshold = -1.0\n")
        monkeypatch.setenv("LAGFIELD_CONFIG", str(config))

        assert main(["generate", "--K", "1"]) == EXIT_CONFIG

    def test_invalid_thread_count(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "lots")

        assert main(["generate", "--K", "1"]) == EXIT_CONFIG

    def test_thread_flag(self, tmp_path):
        assert main(["--threads", "1", "--out", str(tmp_path / "d"), "generate", "--K", "1"]) == 0
