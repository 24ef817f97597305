"""Main CLI module for lagfield.

This module provides the command-line interface: data generation, training,
propagation, travelling-wave search and verification. Every command writes a
run manifest next to its primary output.
"""

import argparse
import dataclasses
import csv
import logging
import os
import sys
import time
from typing import Any, Dict, List, Optional

import torch

from .. import __version__
from ..config.settings import ConfigError, LagfieldConfig, load_config, thread_count
from ..models.density import CheckpointError, get_potential, load_checkpoint, save_checkpoint
from ..models.field_grid import FieldGrid, GridFormatError, read_field_grid, sup_norm_diff, write_grid, write_grid_csv
from ..models.newton_report import NewtonReport, summarize_reports
from ..models.run_manifest import MANIFEST_SUFFIX, RunManifest
from ..models.travelling_wave import ResonantModeError, dispersion_table, exact_wave_tw, write_tw_result
from ..services.autodiff import NonFiniteError
from ..services.datagen_service import DatagenService, read_dataset, reference_solve, write_dataset
from ..services.del_service import del_field
from ..services.solver_service import NewtonError, SolverService
from ..services.train_service import TrainingAbortedError, TrainService
from ..services.twave_service import TwaveService, TwSearchAbortedError, perturb_state, tw_grid
from ..services.verify_service import VerifyService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_NUMERICAL = 5
EXIT_INTERRUPT = 130

DEFAULT_OUTPUTS = {
    "generate": "dataset",
    "train": "density.toml",
    "propagate": "propagated.grid",
    "find-tw": "tw.toml",
    "verify": "verify.toml",
}


def setup_logging(level: str = "INFO") -> None:
    """Set up logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        force=True,
    )


def output_path(args: argparse.Namespace) -> str:
    return args.out or DEFAULT_OUTPUTS[args.command]


def write_manifest(
    args: argparse.Namespace,
    config: LagfieldConfig,
    started: float,
    inputs: Dict[str, str],
    outputs: Dict[str, str],
    results: Dict[str, Any],
    seed: Optional[int] = None,
) -> str:
    """Write the run manifest beside the primary output."""
    manifest = RunManifest(
        command=args.command,
        config=config.to_dict(),
        inputs=inputs,
        outputs=outputs,
        seed=seed,
        wall_time=time.perf_counter() - started,
        results=results,
    )
    path = manifest.write(output_path(args).rstrip("/\\") + MANIFEST_SUFFIX)
    logger.info(f"Wrote run manifest {path}")
    return path


def overrides(**values: Any) -> Dict[str, Any]:
    """Command-line values that were given, by config field name."""
    return {name: value for name, value in values.items() if value is not None}


def read_grids(path: str) -> List[FieldGrid]:
    """Grids of a dataset directory or a single grid file."""
    if os.path.isdir(path):
        grids, _ = read_dataset(path)
        return grids
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    return [read_field_grid(path)]


def generate_command(args: argparse.Namespace, config: LagfieldConfig) -> int:
    """Handle the 'generate' command."""
    started = time.perf_counter()
    if args.K is not None:
        config.generate = dataclasses.replace(config.generate, K=args.K)
    cfg = config.generate
    service = DatagenService(cfg)
    grids = service.generate_dataset()
    check = service.residual_check(grids)

    out = output_path(args)
    write_dataset(out, grids, {"seed": cfg.seed, "generate": cfg.to_dict(), "residual_check": check})
    print(f"Generated {len(grids)} trajectories in {out} (max residual {check['max_residual']:.3e})")
    write_manifest(args, config, started, {}, {"dataset": out}, {"residual_check": check}, seed=cfg.seed)
    return EXIT_OK if check["passed"] else EXIT_FAILURE


def train_command(args: argparse.Namespace, config: LagfieldConfig) -> int:
    """Handle the 'train' command."""
    started = time.perf_counter()
    config.train = dataclasses.replace(
        config.train, **overrides(epochs=args.epochs, reg_weight=args.reg_weight)
    )
    cfg = config.train

    grids = read_grids(args.dataset)
    out = output_path(args)
    log_path = os.path.splitext(out)[0] + ".epochs.log"
    outputs = {"checkpoint": out, "epoch_log": log_path}
    try:
        density, record = TrainService(cfg).train(grids)
    except TrainingAbortedError as e:
        save_checkpoint(e.density, out)
        e.record.checkpoint = out
        e.record.write_log(log_path)
        results = {"train": e.record.to_dict()}
        write_manifest(args, config, started, {"dataset": args.dataset}, outputs, results, cfg.seed)
        raise

    save_checkpoint(density, out)
    record.checkpoint = out
    record.write_log(log_path)
    final = record.final
    print(f"Trained {density!r}: l_del={final.l_del:.3e} l_reg={final.l_reg:.3e} (best epoch {record.best_epoch})")
    print(f"Checkpoint: {out}")
    write_manifest(args, config, started, {"dataset": args.dataset}, outputs, {"train": record.to_dict()}, cfg.seed)
    return EXIT_OK


def propagate_command(args: argparse.Namespace, config: LagfieldConfig) -> int:
    """Handle the 'propagate' command."""
    started = time.perf_counter()
    density = load_checkpoint(args.checkpoint)
    source = read_field_grid(args.rows)
    mesh = source.mesh.with_steps(args.steps) if args.steps else source.mesh

    reports: List[NewtonReport] = []
    grid = SolverService(config.solver).propagate(density, source.values[0], source.values[1], mesh, reports)
    if args.verbose:
        for report in reports:
            print(report.summary_line())

    out = output_path(args)
    write_grid(grid, out)
    outputs = {"grid": out}
    results: Dict[str, Any] = {
        "newton": summarize_reports(reports),
        "max_residual": del_field(density, grid).max_norm(),
    }
    reference: Optional[FieldGrid] = None
    if args.reference:
        reference = reference_solve(
            source.values[0], source.values[1], source.mesh, get_potential(config.generate.potential), mesh.N
        )
        results["sup_error_vs_reference"] = sup_norm_diff(grid, reference)
        print(f"Sup-norm error against the reference solver: {results['sup_error_vs_reference']:.6e}")
    if args.csv:
        write_grid_csv(grid, args.csv, reference)
        outputs["csv"] = args.csv

    print(f"Propagated {mesh.N} steps to {out} (max residual {results['max_residual']:.3e})")
    write_manifest(args, config, started, {"checkpoint": args.checkpoint, "rows": args.rows}, outputs, results)
    return EXIT_OK


def find_tw_command(args: argparse.Namespace, config: LagfieldConfig) -> int:
    """Handle the 'find-tw' command."""
    started = time.perf_counter()
    config.twave = dataclasses.replace(
        config.twave, **overrides(mode=args.mode, noise_sigma=args.sigma, steps=args.steps)
    )
    cfg = config.twave

    density = load_checkpoint(args.checkpoint)
    mesh = config.mesh
    out = output_path(args)
    outputs = {"result": out}
    if args.dispersion_csv:
        write_dispersion_csv(mesh, args.dispersion_csv)
        outputs["dispersion"] = args.dispersion_csv

    reference, root = exact_wave_tw(cfg.mode, cfg.alpha, cfg.beta, mesh, d=density.d)
    init = perturb_state(reference, cfg.noise_sigma, cfg.seed) if cfg.noise_sigma else reference
    try:
        state, history = TwaveService(cfg).find_tw(density, init, mesh)
    except TwSearchAbortedError as e:
        write_tw_result(out, e.state, mesh, float("nan"), e.history, {"aborted": True})
        raise

    results = {
        "loss": min(history),
        "steps": len(history) - 1,
        "c": state.c,
        "c_reference": root.c_n,
        "speed_error": abs(state.c - root.c_n),
        "sup_error_vs_reference": sup_norm_diff(tw_grid(state, mesh), tw_grid(reference, mesh)),
    }
    write_tw_result(out, state, mesh, results["loss"], history, {k: v for k, v in results.items() if k != "loss"})
    history_path = os.path.splitext(out)[0] + ".history.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows((k, format(v, ".17g")) for k, v in enumerate(history))
    outputs["history"] = history_path

    print(
        f"Travelling wave c={state.c:.9f} (reference {root.c_n:.9f}), loss {results['loss']:.3e}, "
        f"sup error {results['sup_error_vs_reference']:.3e}"
    )
    write_manifest(args, config, started, {"checkpoint": args.checkpoint}, outputs, results, seed=cfg.seed)
    return EXIT_OK


def write_dispersion_csv(mesh: Any, path: str) -> None:
    """Plot-ready dispersion table: n, c_n, resonant, rhs."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["n", "c_n", "resonant", "rhs"])
        for root in dispersion_table(mesh):
            writer.writerow([root.n, format(root.c_n, ".17g"), int(root.resonant), format(root.rhs, ".17g")])


def verify_command(args: argparse.Namespace, config: LagfieldConfig) -> int:
    """Handle the 'verify' command."""
    started = time.perf_counter()
    density = load_checkpoint(args.checkpoint)
    grids = read_grids(args.data)
    report = VerifyService(config.verify, config.solver).verify(density, grids)
    for line in report.to_lines():
        print(line)

    out = output_path(args)
    RunManifest(command="verify-report", results=report.to_dict()).write(out)
    print(f"Verification {'passed' if report.passed else 'FAILED'}; report in {out}")
    write_manifest(
        args, config, started, {"checkpoint": args.checkpoint, "data": args.data}, {"report": out}, report.to_dict()
    )
    return EXIT_OK if report.passed else EXIT_FAILURE


COMMANDS = {
    "generate": generate_command,
    "train": train_command,
    "propagate": propagate_command,
    "find-tw": find_tw_command,
    "verify": verify_command,
}


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="lagfield",
        description="lagfield: learn discrete Lagrangian densities, propagate them and find their travelling waves",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="TOML configuration file (default: $LAGFIELD_CONFIG)")
    parser.add_argument("--seed", type=int, help="Override the seed of every configuration section")
    parser.add_argument("--out", help="Primary output path of the command")
    parser.add_argument("--verbose", action="store_true", help="Debug logging and per-solve reports")
    parser.add_argument("--threads", type=int, help="Intra-op threads (default: $LAGFIELD_THREADS)")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Set logging level",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    generate_parser = subparsers.add_parser("generate", help="Generate a wave-equation training dataset")
    generate_parser.add_argument("--K", type=int, help="Override the number of trajectories")

    train_parser = subparsers.add_parser("train", help="Train a neural density on a dataset")
    train_parser.add_argument("dataset", help="Dataset directory (or a single grid file)")
    train_parser.add_argument("--epochs", type=int, help="Override the number of epochs")
    train_parser.add_argument("--reg-weight", type=float, help="Override the regulariser weight")

    propagate_parser = subparsers.add_parser("propagate", help="Propagate initial rows with a density")
    propagate_parser.add_argument("checkpoint", help="Density checkpoint")
    propagate_parser.add_argument("rows", help="Grid file whose rows 0 and 1 are the initial data")
    propagate_parser.add_argument("--steps", type=int, help="Number of time steps (default: that of the rows file)")
    propagate_parser.add_argument(
        "--reference", action="store_true", help="Compare against the explicit wave-equation solver"
    )
    propagate_parser.add_argument("--csv", help="Also write a plot-ready CSV")

    tw_parser = subparsers.add_parser("find-tw", help="Search a travelling wave of a density")
    tw_parser.add_argument("checkpoint", help="Density checkpoint")
    tw_parser.add_argument("--mode", type=int, help="Fourier mode of the initial exact wave")
    tw_parser.add_argument("--sigma", type=float, help="Noise added to the initial state")
    tw_parser.add_argument("--steps", type=int, help="Maximum optimiser steps")
    tw_parser.add_argument("--dispersion-csv", help="Also write the dispersion table as CSV")

    verify_parser = subparsers.add_parser("verify", help="Verify a density against data")
    verify_parser.add_argument("checkpoint", help="Density checkpoint")
    verify_parser.add_argument("data", help="Dataset directory or grid file")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    if argv is None:
        argv = sys.argv[1:]

    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging("DEBUG" if args.verbose else args.log_level)

    if not args.command:
        parser.print_help()
        return EXIT_FAILURE

    try:
        config = load_config(args.config).with_seed(args.seed)
        threads = thread_count(args.threads)
        if threads:
            torch.set_num_threads(threads)
        return COMMANDS[args.command](args, config)

    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        return EXIT_INTERRUPT
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, GridFormatError, CheckpointError, OSError) as e:
        print(f"Input/output error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NewtonError, TrainingAbortedError, TwSearchAbortedError, NonFiniteError, ResonantModeError) as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
