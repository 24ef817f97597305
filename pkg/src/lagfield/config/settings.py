"""Configuration management for lagfield.

This module loads the TOML experiment configuration. Each section maps onto a
dataclass that validates its fields; unknown sections and keys are rejected so
typos in experiment files fail loudly.
"""

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Type, TypeVar

import toml

from ..models.mesh import Mesh

logger = logging.getLogger(__name__)

CONFIG_ENV = "LAGFIELD_CONFIG"
THREADS_ENV = "LAGFIELD_THREADS"

INITIAL_GUESS_STRATEGIES = ("previous_value", "linear_extrapolation")


class ConfigError(ValueError):
    """Raised when a configuration file or value is invalid."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def default_mesh() -> Mesh:
    """T = 0.5, l = 1, dt = 0.025, dx = 0.05 (N = 20, M = 20)."""
    return Mesh.from_widths(T=0.5, l=1.0, dt=0.025, dx=0.05)


@dataclass
class GenConfig:
    """Training-data synthesis settings.

    The initial-row frequency weight is m -> M * exp(-weight_decay * m**weight_power).
    """

    K: int = 80
    mesh: Mesh = field(default_factory=default_mesh)
    seed: int = 0
    weight_decay: float = 2.0
    weight_power: int = 4
    potential: str = "quadratic"

    def __post_init__(self) -> None:
        _require(isinstance(self.K, int) and self.K >= 1, "generate.K must be an integer >= 1")
        _require(isinstance(self.mesh, Mesh), "generate.mesh must be a Mesh")
        _require(self.weight_decay >= 0, "generate.weight_decay must be >= 0")
        _require(self.weight_power >= 1, "generate.weight_power must be >= 1")
        _require(self.potential in ("quadratic", "quartic"), f"unknown potential {self.potential!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "mesh": self.mesh.to_dict(),
            "seed": self.seed,
            "weight_decay": self.weight_decay,
            "weight_power": self.weight_power,
            "potential": self.potential,
        }


@dataclass
class TrainConfig:
    """Batch-training settings for the neural density."""

    epochs: int = 1320
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reg_weight: float = 1.0
    lambda_floor: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    hidden: int = 10
    log_every: int = 10

    def __post_init__(self) -> None:
        _require(isinstance(self.epochs, int) and self.epochs >= 0, "train.epochs must be an integer >= 0")
        _require(isinstance(self.batch_size, int) and self.batch_size >= 1, "train.batch_size must be >= 1")
        _require(self.learning_rate > 0, "train.learning_rate must be positive")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "train.beta1 and train.beta2 must lie in [0, 1)")
        _require(self.eps > 0, "train.eps must be positive")
        _require(self.reg_weight >= 0, "train.reg_weight must be >= 0")
        _require(self.lambda_floor > 0, "train.lambda_floor must be positive")
        _require(self.hidden >= 1, "train.hidden must be >= 1")
        _require(self.log_every >= 1, "train.log_every must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class SolverConfig:
    """Newton propagation settings."""

    residual_tolerance: float = 1e-12
    max_iterations: int = 50
    initial_guess_strategy: str = "previous_value"
    max_row_sweeps: int = 50
    floor_factor: float = 8.0

    def __post_init__(self) -> None:
        _require(self.residual_tolerance > 0, "solver.residual_tolerance must be positive")
        _require(self.max_iterations >= 1, "solver.max_iterations must be >= 1")
        _require(
            self.initial_guess_strategy in INITIAL_GUESS_STRATEGIES,
            f"solver.initial_guess_strategy must be one of {INITIAL_GUESS_STRATEGIES}",
        )
        _require(self.max_row_sweeps >= 1, "solver.max_row_sweeps must be >= 1")
        _require(self.floor_factor >= 0, "solver.floor_factor must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class TwConfig:
    """Travelling-wave search settings."""

    steps: int = 10000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    noise_sigma: float = 0.5
    seed: int = 0
    reg_weight: float = 1.0
    reg_scale: float = 100.0
    tolerance: float = 1e-18
    mode: int = 1
    alpha: float = 0.0
    beta: float = 1.0
    log_every: int = 500

    def __post_init__(self) -> None:
        _require(isinstance(self.steps, int) and self.steps >= 0, "twave.steps must be an integer >= 0")
        _require(self.learning_rate > 0, "twave.learning_rate must be positive")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "twave.beta1 and twave.beta2 must lie in [0, 1)")
        _require(self.eps > 0, "twave.eps must be positive")
        _require(self.noise_sigma >= 0, "twave.noise_sigma must be >= 0")
        _require(self.reg_weight >= 0, "twave.reg_weight must be >= 0")
        _require(self.reg_scale >= 0, "twave.reg_scale must be >= 0")
        _require(self.tolerance >= 0, "twave.tolerance must be >= 0")
        _require(self.log_every >= 1, "twave.log_every must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class VerifyConfig:
    """Thresholds of the verification report."""

    residual_threshold: float = 0.004
    loss_del_threshold: float = 1e-6
    max_rho_squared: float = 1.0
    tw_threshold: float = 0.004
    prediction_threshold: float = 0.012
    lambda_floor: float = 1e-8
    tw_mode: int = 1

    def __post_init__(self) -> None:
        for name in ("residual_threshold", "loss_del_threshold", "max_rho_squared",
                     "tw_threshold", "prediction_threshold", "lambda_floor"):
            value = getattr(self, name)
            _require(math.isfinite(value) and value > 0, f"verify.{name} must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


ConfigT = TypeVar("ConfigT", TrainConfig, SolverConfig, TwConfig, VerifyConfig)


def _build(cls: Type[ConfigT], section: str, values: Dict[str, Any]) -> ConfigT:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    _require(not unknown, f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"[{section}]: {e}") from e


class LagfieldConfig:
    """All configuration sections of a lagfield run.

    Attributes:
        mesh (Mesh): Shared mesh of generated data
        generate (GenConfig): Data synthesis settings
        train (TrainConfig): Training settings
        solver (SolverConfig): Propagation settings
        twave (TwConfig): Travelling-wave search settings
        verify (VerifyConfig): Verification thresholds
        source (Optional[str]): File the configuration was read from
    """

    SECTIONS = ("mesh", "generate", "train", "solver", "twave", "verify")

    def __init__(self, config_path: Optional[str] = None):
        """Initialize the configuration.

        Args:
            config_path: TOML file. If None, ``LAGFIELD_CONFIG`` is consulted and
                built-in defaults are used when neither is set.

        Raises:
            ConfigError: If the file is malformed or holds unknown keys
            FileNotFoundError: If an explicit path does not exist
        """
        self.source = config_path or os.getenv(CONFIG_ENV) or None
        raw = self._load_config(self.source)

        self.mesh = self._load_mesh(raw.get("mesh", {}))
        generate = dict(raw.get("generate", {}))
        generate_names = {f.name for f in dataclasses.fields(GenConfig)} - {"mesh"}
        unknown = set(generate) - generate_names
        _require(not unknown, f"unknown keys in [generate]: {sorted(unknown)}")
        self.generate = GenConfig(mesh=self.mesh, **generate)
        self.train = _build(TrainConfig, "train", raw.get("train", {}))
        self.solver = _build(SolverConfig, "solver", raw.get("solver", {}))
        self.twave = _build(TwConfig, "twave", raw.get("twave", {}))
        self.verify = _build(VerifyConfig, "verify", raw.get("verify", {}))

    def _load_config(self, config_path: Optional[str]) -> Dict[str, Any]:
        """Load the raw TOML tables."""
        if not config_path:
            return {}
        if not os.path.exists(config_path):
            raise FileNotFoundError(f"config file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                raw = toml.load(f)
        except toml.TomlDecodeError as e:
            raise ConfigError(f"{config_path}: {e}") from e

        unknown = set(raw) - set(self.SECTIONS)
        _require(not unknown, f"unknown config sections: {sorted(unknown)}")
        for section in raw:
            _require(isinstance(raw[section], dict), f"[{section}] must be a table")
        logger.debug(f"Loaded configuration from {config_path}")
        return raw

    @staticmethod
    def _load_mesh(values: Dict[str, Any]) -> Mesh:
        if not values:
            return default_mesh()
        allowed = {"T", "l", "N", "M", "dt", "dx"}
        unknown = set(values) - allowed
        _require(not unknown, f"unknown keys in [mesh]: {sorted(unknown)}")
        data = {"T": 0.5, "l": 1.0}
        data.update(values)
        if not ("N" in data and "M" in data):
            data.setdefault("dt", 0.025)
            data.setdefault("dx", 0.05)
        try:
            return Mesh.from_dict(data)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"[mesh]: {e}") from e

    def with_seed(self, seed: Optional[int]) -> "LagfieldConfig":
        """Override the seed of every section in place."""
        if seed is not None:
            self.generate.seed = seed
            self.train.seed = seed
            self.twave.seed = seed
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mesh": self.mesh.to_dict(),
            "generate": {k: v for k, v in self.generate.to_dict().items() if k != "mesh"},
            "train": self.train.to_dict(),
            "solver": self.solver.to_dict(),
            "twave": self.twave.to_dict(),
            "verify": self.verify.to_dict(),
        }


def load_config(config_path: Optional[str] = None) -> LagfieldConfig:
    """Load the lagfield configuration (file, then ``LAGFIELD_CONFIG``, then defaults)."""
    return LagfieldConfig(config_path)


def thread_count(explicit: Optional[int] = None) -> Optional[int]:
    """Intra-op thread count from the flag or ``LAGFIELD_THREADS``.

    Raises:
        ConfigError: If the environment value is not a positive integer
    """
    if explicit is not None:
        _require(explicit >= 1, "--threads must be >= 1")
        return explicit
    value = os.getenv(THREADS_ENV)
    if not value:
        return None
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}")
    _require(threads >= 1, f"{THREADS_ENV} must be >= 1")
    return threads
