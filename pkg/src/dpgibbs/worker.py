"""Shard-local sampling, summarization, and application of master labels.

A worker owns a contiguous shard of the data and runs the same collapsed
Gibbs sweep as the centralized sampler, with the same concentration alpha and
base measure.  After each sweep it ships per-cluster sufficient statistics to
the master; the master's reply (a batch label map) is applied by renaming and
merging local clusters, never by splitting them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalDegeneracyError
from .gibbs import PartitionState, cgs_sweep
from .niw import SufficientStats, stats_merge


@dataclass
class WorkerState:
    """worker_id, the local shard, its global start index, local partition."""

    worker_id: int
    data: np.ndarray
    start: int
    local: PartitionState

    @classmethod
    def single_cluster(cls, worker_id, data, start, hyper):
        data = np.asarray(data, dtype=np.float64)
        return cls(
            worker_id=int(worker_id),
            data=data,
            start=int(start),
            local=PartitionState.single_cluster(data, hyper),
        )


@dataclass(frozen=True)
class ClusterSummary:
    local_label: int
    size: int
    stats: SufficientStats


@dataclass(frozen=True)
class WorkerSummary:
    """Per-cluster sufficient statistics of one worker, ordered by local label."""

    worker_id: int
    clusters: tuple[ClusterSummary, ...]

    @property
    def total_size(self):
        return sum(entry.size for entry in self.clusters)


def worker_sweep(w, rng):
    """One local collapsed Gibbs sweep over the shard."""
    try:
        swept = cgs_sweep(w.local, w.data, rng)
    except NumericalDegeneracyError as err:
        err.add_context(worker_id=w.worker_id)
        raise
    return replace(w, local=swept)


def summarize(w):
    """WorkerSummary with one entry per non-empty local cluster."""
    entries = tuple(
        ClusterSummary(local_label=lab, size=w.local.clusters[lab].n, stats=w.local.clusters[lab])
        for lab in sorted(w.local.clusters)
    )
    return WorkerSummary(worker_id=w.worker_id, clusters=entries)


def _local_to_global_lut(w, label_map):
    """Dense lookup table from this worker's local labels to global labels.

    The map must contain exactly the worker's current local labels (0..K-1);
    a missing or unknown local label is an error.
    """
    k = w.local.num_clusters
    mine = {h: g for (j, h), g in label_map.entries.items() if j == w.worker_id}
    if set(mine) != set(range(k)):
        missing = sorted(set(range(k)) - set(mine))
        unknown = sorted(set(mine) - set(range(k)))
        raise ValueError(
            "label map does not match worker %d clusters: missing %r, unknown %r"
            % (w.worker_id, missing, unknown)
        )
    lut = np.empty(k, dtype=np.int64)
    for h, g in mine.items():
        lut[h] = g
    return lut


def global_label_vector(w, label_map):
    """Per-point global labels of this shard under the map (state unchanged)."""
    return _local_to_global_lut(w, label_map)[w.local.labels]


def apply_global_labels(w, label_map):
    """Rename local clusters to their global ids and merge collisions.

    The resulting local partition is re-compacted to dense labels ordered by
    ascending global id; merged cluster statistics are field-wise sums.
    """
    lut = _local_to_global_lut(w, label_map)
    globals_present = np.unique(lut)
    dense = {int(g): i for i, g in enumerate(globals_present)}
    new_labels = np.array([dense[int(g)] for g in lut], dtype=np.int64)[w.local.labels]
    clusters = {}
    for new_lab, g in ((dense[int(g)], int(g)) for g in globals_present):
        parts = [w.local.clusters[h] for h in range(lut.shape[0]) if lut[h] == g]
        clusters[new_lab] = parts[0] if len(parts) == 1 else stats_merge(parts)
    return replace(
        w, local=PartitionState(labels=new_labels, clusters=clusters, hyper=w.local.hyper)
    )
