"""Per-iteration trace records shared by the centralized and distributed runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class IterationRecord:
    iteration: int
    log_joint: float
    num_clusters: int
    seconds: float
    ari: float | None = None

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "log_joint": self.log_joint,
            "num_clusters": self.num_clusters,
            "seconds": self.seconds,
            "ari": self.ari,
        }


@dataclass
class RunTrace:
    """Sequence of per-iteration records plus run-level metadata."""

    records: list[IterationRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def log_joints(self):
        return np.array([r.log_joint for r in self.records])

    @property
    def num_clusters(self):
        return np.array([r.num_clusters for r in self.records], dtype=np.int64)

    @property
    def aris(self):
        return [r.ari for r in self.records]

    @property
    def seconds(self):
        return np.array([r.seconds for r in self.records])

    def to_payload(self):
        """JSON-ready array of per-iteration records."""
        return [r.to_dict() for r in self.records]
