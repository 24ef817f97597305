"""RunManifest model for lagfield.

Every CLI command writes one manifest describing what ran: the command, the
full configuration echo, input and output paths, the seed, the library version
and the wall time.
"""

import math
import os
from typing import Any, Dict, Optional

import toml

from .. import __version__

MANIFEST_SUFFIX = ".manifest.toml"


def _plain(value: Any) -> Any:
    """TOML-safe copy: non-finite floats become strings, None entries are dropped."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value if v is not None]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class RunManifest:
    """Record of one command run.

    Attributes:
        command (str): CLI command name
        config (Dict[str, Any]): Full configuration echo
        inputs (Dict[str, str]): Named input paths
        outputs (Dict[str, str]): Named output paths
        seed (Optional[int]): Seed the run used
        version (str): lagfield version
        wall_time (float): Seconds the command took
        results (Dict[str, Any]): Command-specific summary values
    """

    def __init__(
        self,
        command: str,
        config: Optional[Dict[str, Any]] = None,
        inputs: Optional[Dict[str, str]] = None,
        outputs: Optional[Dict[str, str]] = None,
        seed: Optional[int] = None,
        version: str = __version__,
        wall_time: float = 0.0,
        results: Optional[Dict[str, Any]] = None,
    ):
        if not command or not command.strip():
            raise ValueError("command cannot be empty")
        if wall_time < 0:
            raise ValueError("wall_time cannot be negative")
        self.command = command.strip()
        self.config = dict(config or {})
        self.inputs = dict(inputs or {})
        self.outputs = dict(outputs or {})
        self.seed = seed
        self.version = version
        self.wall_time = float(wall_time)
        self.results = dict(results or {})

    def add_output(self, name: str, path: str) -> None:
        self.outputs[name] = path

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "command": self.command,
            "version": self.version,
            "wall_time": self.wall_time,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "config": self.config,
            "results": self.results,
        }
        if self.seed is not None:
            data["seed"] = self.seed
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(
            command=data["command"],
            config=data.get("config"),
            inputs=data.get("inputs"),
            outputs=data.get("outputs"),
            seed=data.get("seed"),
            version=data.get("version", __version__),
            wall_time=data.get("wall_time", 0.0),
            results=data.get("results"),
        )

    def write(self, path: str) -> str:
        """Write the manifest as TOML and return the path."""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            toml.dump(_plain(self.to_dict()), f)
        return path

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(toml.load(f))

    def __repr__(self) -> str:
        return f"RunManifest(command={self.command!r}, outputs={sorted(self.outputs)})"
