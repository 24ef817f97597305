"""TrainRecord model for lagfield.

This module provides the per-epoch loss history of a training run and its
plain-text log format (one line per epoch: epoch, l_del, l_reg, seconds).
"""

import math
from typing import Any, Dict, List, Optional

LOG_HEADER = "# epoch, l_del, l_reg, seconds"


class EpochEntry:
    """Losses of the full dataset after one epoch.

    Attributes:
        epoch (int): Epoch number; 0 is the evaluation before training
        l_del (float): Data-consistency loss
        l_reg (float): Solvability regulariser
        seconds (float): Wall time of the epoch
        floored (int): Regulariser summands that hit the lambda floor
    """

    def __init__(self, epoch: int, l_del: float, l_reg: float, seconds: float = 0.0, floored: int = 0):
        if epoch < 0:
            raise ValueError("epoch cannot be negative")
        if seconds < 0:
            raise ValueError("seconds cannot be negative")
        if floored < 0:
            raise ValueError("floored cannot be negative")
        self.epoch = int(epoch)
        self.l_del = float(l_del)
        self.l_reg = float(l_reg)
        self.seconds = float(seconds)
        self.floored = int(floored)

    def total(self, reg_weight: float = 1.0) -> float:
        return self.l_del + reg_weight * self.l_reg

    def format_line(self) -> str:
        return f"{self.epoch}, {self.l_del:.17g}, {self.l_reg:.17g}, {self.seconds:.6f}"

    @classmethod
    def parse_line(cls, line: str) -> "EpochEntry":
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated fields, got {line!r}")
        return cls(epoch=int(parts[0]), l_del=float(parts[1]), l_reg=float(parts[2]), seconds=float(parts[3]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EpochEntry):
            return False
        return (self.epoch, self.l_del, self.l_reg) == (other.epoch, other.l_del, other.l_reg)

    def __repr__(self) -> str:
        return f"EpochEntry(epoch={self.epoch}, l_del={self.l_del:.3e}, l_reg={self.l_reg:.3e})"


class TrainRecord:
    """Loss history of one training run.

    Attributes:
        entries (List[EpochEntry]): Per-epoch evaluations, epoch 0 first
        adam_steps (int): Optimiser steps taken
        reg_weight (float): Weight of l_reg in the training loss
        config (Dict[str, Any]): Echo of the training configuration
        checkpoint (Optional[str]): Path of the saved final checkpoint
        aborted (bool): Training stopped on a numerical failure
    """

    def __init__(
        self,
        reg_weight: float = 1.0,
        config: Optional[Dict[str, Any]] = None,
        checkpoint: Optional[str] = None,
    ):
        if reg_weight < 0:
            raise ValueError("reg_weight cannot be negative")
        self.entries: List[EpochEntry] = []
        self.adam_steps = 0
        self.reg_weight = float(reg_weight)
        self.config = dict(config or {})
        self.checkpoint = checkpoint
        self.aborted = False

    def add_epoch(self, epoch: int, l_del: float, l_reg: float, seconds: float = 0.0, floored: int = 0) -> EpochEntry:
        """Append an epoch evaluation.

        Raises:
            ValueError: If epochs are not appended in increasing order
        """
        if self.entries and epoch <= self.entries[-1].epoch:
            raise ValueError(f"epoch {epoch} does not follow epoch {self.entries[-1].epoch}")
        entry = EpochEntry(epoch, l_del, l_reg, seconds, floored)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def final(self) -> EpochEntry:
        if not self.entries:
            raise ValueError("record holds no epochs")
        return self.entries[-1]

    @property
    def best_epoch(self) -> int:
        """Epoch with the lowest total loss (first one on ties)."""
        if not self.entries:
            raise ValueError("record holds no epochs")
        finite = [e for e in self.entries if math.isfinite(e.total(self.reg_weight))]
        best = min(finite or self.entries, key=lambda e: e.total(self.reg_weight))
        return best.epoch

    def best(self) -> EpochEntry:
        best_epoch = self.best_epoch
        return next(e for e in self.entries if e.epoch == best_epoch)

    def l_del_history(self) -> List[float]:
        return [e.l_del for e in self.entries]

    def l_reg_history(self) -> List[float]:
        return [e.l_reg for e in self.entries]

    def is_complete(self, epochs: int) -> bool:
        """Every epoch 0..epochs is present exactly once."""
        return [e.epoch for e in self.entries] == list(range(epochs + 1))

    def to_lines(self) -> List[str]:
        return [LOG_HEADER] + [e.format_line() for e in self.entries]

    def write_log(self, path: str) -> None:
        """Write the plain-text epoch log."""
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def read_log(cls, path: str, reg_weight: float = 1.0) -> "TrainRecord":
        """Read an epoch log written by ``write_log``."""
        record = cls(reg_weight=reg_weight)
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                entry = EpochEntry.parse_line(line)
                record.add_epoch(entry.epoch, entry.l_del, entry.l_reg, entry.seconds)
        return record

    def to_dict(self) -> Dict[str, Any]:
        """Summary for run manifests."""
        data: Dict[str, Any] = {
            "epochs": len(self.entries) - 1 if self.entries else 0,
            "adam_steps": self.adam_steps,
            "reg_weight": self.reg_weight,
            "aborted": self.aborted,
            "floored_summands": [e.floored for e in self.entries],
            "config": self.config,
        }
        if self.entries:
            data["best_epoch"] = self.best_epoch
            data["final_l_del"] = self.final.l_del
            data["final_l_reg"] = self.final.l_reg
        if self.checkpoint:
            data["checkpoint"] = self.checkpoint
        return data

    def __repr__(self) -> str:
        if not self.entries:
            return "TrainRecord(empty)"
        return f"TrainRecord(epochs={len(self.entries) - 1}, final={self.final!r}, adam_steps={self.adam_steps})"
