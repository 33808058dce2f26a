"""Centralized collapsed Gibbs sampler for the DP Gaussian mixture.

Component parameters are integrated out; the sampler operates on the partition
alone.  Each sweep visits every point in index order, removes it from its
cluster, and reassigns it among existing clusters and one fresh cluster with
log-weights

    existing k: log n_k    + log p(x | cluster k's posterior)
    new:        log alpha  + log p(x | base measure)

normalized by log-sum-exp and sampled by inverse CDF on a single uniform, so
RNG consumption is exactly one draw per point per sweep.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dpotrf
from scipy.special import gammaln

from .errors import NumericalDegeneracyError
from .niw import (
    ModelHyperParams,
    SufficientStats,
    cholesky_logdet,
    log_marginal,
    stats_from_points,
)
from .trace import IterationRecord, RunTrace

_LOG_PI = math.log(math.pi)
_U64 = (1 << 64) - 1


def seed_to_u64(seed):
    return int(seed) & _U64


@dataclass
class PartitionState:
    """Partition of points into clusters with per-cluster exact statistics.

    ``labels`` is dense (values 0..K-1) between sweeps; ``clusters`` maps each
    label to the statistics of exactly the points carrying it.
    """

    labels: np.ndarray
    clusters: dict[int, SufficientStats]
    hyper: ModelHyperParams

    @property
    def num_clusters(self):
        return len(self.clusters)

    @classmethod
    def single_cluster(cls, data, hyper):
        data = np.asarray(data, dtype=np.float64)
        labels = np.zeros(data.shape[0], dtype=np.int64)
        return cls(labels=labels, clusters={0: stats_from_points(data)}, hyper=hyper)


def validate_partition(state, data, rtol=1e-8):
    """Check the PartitionState invariants against the raw data (test helper)."""
    labels = state.labels
    n = labels.shape[0]
    if n != np.asarray(data).shape[0]:
        raise ValueError("labels length does not match data")
    present = set(int(v) for v in np.unique(labels))
    if present != set(state.clusters):
        raise ValueError("cluster keys %r do not match labels %r" % (set(state.clusters), present))
    if present and present != set(range(len(present))):
        raise ValueError("labels are not dense 0..K-1: %r" % present)
    for lab, stats in state.clusters.items():
        member = np.asarray(data)[labels == lab]
        ref = stats_from_points(member)
        if stats.n != ref.n:
            raise ValueError("cluster %d size mismatch" % lab)
        if not np.allclose(stats.sum, ref.sum, rtol=rtol, atol=1e-9):
            raise ValueError("cluster %d sum mismatch" % lab)
        if not np.allclose(stats.sum_outer, ref.sum_outer, rtol=rtol, atol=1e-9):
            raise ValueError("cluster %d outer mismatch" % lab)
    return state


def sample_log_weights(weights, rng):
    """Categorical draw from unnormalized log-weights using one uniform."""
    m = weights.max()
    if not np.isfinite(m):
        raise NumericalDegeneracyError("non-finite sampling weights")
    probs = np.exp(weights - m)
    cum = np.cumsum(probs)
    u = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, u, side="right")), len(weights) - 1)


class _ClusterCache:
    """Cluster posteriors vectorized across clusters for the per-point weights.

    Rows 0..K-1 hold clusters in ascending label order; row K always holds the
    base measure (the new-cluster candidate) with pseudo-count alpha, so one
    fused evaluation yields the whole candidate weight vector in the canonical
    order: existing clusters by ascending label, then "new".
    """

    def __init__(self, prior, alpha, capacity=16):
        self.prior = prior
        self.alpha = float(alpha)
        self.d = prior.d
        d = self.d
        self.counts = np.zeros(capacity)
        self.sums = np.zeros((capacity, d))
        self.outers = np.zeros((capacity, d, d))
        self.kappas = np.zeros(capacity)
        self.nus = np.zeros(capacity)
        self.mus = np.zeros((capacity, d))
        self.psis = np.zeros((capacity, d, d))
        self.consts = np.zeros(capacity)
        self.labels = []
        self.row_of = {}
        self.next_label = 0
        # Point-independent weight terms that depend only on the integer
        # cluster count m (through kappa0 + m and nu0 + m); grown lazily.
        self._count_consts = np.empty(0)
        self._prior_const = self._log_weight_const(
            math.log(self.alpha), prior.kappa, prior.nu, prior.log_det_psi
        )
        self._write_prior_row(0)

    @classmethod
    def from_partition(cls, state):
        cache = cls(
            state.hyper.prior,
            state.hyper.alpha,
            capacity=max(16, 2 * len(state.clusters) + 2),
        )
        for lab in sorted(state.clusters):
            stats = state.clusters[lab]
            if stats.n < 1:
                raise ValueError("cluster %d is empty" % lab)
            r = len(cache.labels)
            cache.counts[r] = stats.n
            cache.sums[r] = stats.sum
            cache.outers[r] = stats.sum_outer
            cache.labels.append(int(lab))
            cache.row_of[int(lab)] = r
            cache._refresh_row(r)
        cache.next_label = max(cache.labels) + 1 if cache.labels else 0
        cache._write_prior_row(len(cache.labels))
        return cache

    # -- row maintenance ----------------------------------------------------

    def _log_weight_const(self, log_count, kappa, nu, log_det_psi):
        """Point-independent part of a candidate's log-weight."""
        d = self.d
        return (
            log_count
            - 0.5 * d * _LOG_PI
            + 0.5 * d * (math.log(kappa) - math.log(kappa + 1.0))
            + gammaln(0.5 * (nu + 1.0))
            - gammaln(0.5 * (nu + 1.0 - d))
            + 0.5 * nu * log_det_psi
        )

    def _write_prior_row(self, r):
        self._grow(r + 1)
        p = self.prior
        self.counts[r] = self.alpha
        self.kappas[r] = p.kappa
        self.nus[r] = p.nu
        self.mus[r] = p.mu
        self.psis[r] = p.psi
        self.consts[r] = self._prior_const

    def _count_const(self, m):
        """log m plus every weight term that depends only on the count m."""
        if m >= self._count_consts.shape[0]:
            p = self.prior
            d = self.d
            counts = np.arange(1, max(2 * m, 64) + 1, dtype=np.float64)
            kap = p.kappa + counts
            nu = p.nu + counts
            table = (
                np.log(counts)
                - 0.5 * d * _LOG_PI
                + 0.5 * d * (np.log(kap) - np.log(kap + 1.0))
                + gammaln(0.5 * (nu + 1.0))
                - gammaln(0.5 * (nu + 1.0 - d))
            )
            self._count_consts = np.concatenate([[np.nan], table])  # index by m
        return self._count_consts[m]

    def _refresh_row(self, r):
        """Recompute the cached posterior of row r from its raw sums."""
        p = self.prior
        m = self.counts[r]
        sumv = self.sums[r]
        kappa = p.kappa + m
        nu = p.nu + m
        t = sumv / m
        diff = p.mu - t
        scatter = self.outers[r] - sumv[:, None] * (sumv / m)
        psi = p.psi + scatter + (p.kappa * m / kappa) * (diff[:, None] * diff)
        psi = 0.5 * (psi + psi.T)
        log_det = self._fast_cholesky_logdet(psi, r)
        self.kappas[r] = kappa
        self.nus[r] = nu
        self.mus[r] = (p.kappa * p.mu + sumv) / kappa
        self.psis[r] = psi
        self.consts[r] = self._count_const(int(m)) + 0.5 * nu * log_det

    def _fast_cholesky_logdet(self, psi, r):
        """Low-overhead Cholesky log-determinant for one engine row.

        Falls back to the public cholesky_logdet on any failure so the error
        payload (minimum eigenvalue estimate) stays consistent.
        """
        chol, info = dpotrf(psi, lower=1)
        if info == 0:
            log_det = 2.0 * float(np.log(chol.diagonal()).sum())
            if math.isfinite(log_det):
                return log_det
        try:
            return cholesky_logdet(psi, "cluster posterior scale")
        except NumericalDegeneracyError as err:
            err.add_context(cluster_label=self.labels[r] if r < len(self.labels) else None)
            raise

    def _grow(self, rows_needed):
        cap = self.counts.shape[0]
        if rows_needed <= cap:
            return
        new_cap = max(2 * cap, rows_needed)
        d = self.d
        for name, shape in (
            ("counts", (new_cap,)),
            ("sums", (new_cap, d)),
            ("outers", (new_cap, d, d)),
            ("kappas", (new_cap,)),
            ("nus", (new_cap,)),
            ("mus", (new_cap, d)),
            ("psis", (new_cap, d, d)),
            ("consts", (new_cap,)),
        ):
            old = getattr(self, name)
            fresh = np.zeros(shape)
            fresh[: old.shape[0]] = old
            setattr(self, name, fresh)

    # -- mutation -----------------------------------------------------------

    def remove_point(self, label, x, x_outer=None):
        """Remove x from its cluster; delete the cluster when it empties."""
        r = self.row_of[label]
        remaining = self.counts[r] - 1.0
        if remaining < 0.5:
            k = len(self.labels)
            for arr in (
                self.counts, self.kappas, self.nus, self.consts,
                self.sums, self.mus, self.outers, self.psis,
            ):
                arr[r:k] = arr[r + 1 : k + 1]
            del self.labels[r]
            del self.row_of[label]
            for lab in self.labels[r:]:
                self.row_of[lab] -= 1
            return True
        self.counts[r] = remaining
        self.sums[r] -= x
        self.outers[r] -= np.outer(x, x) if x_outer is None else x_outer
        self._refresh_row(r)
        return False

    def add_point(self, label, x, x_outer=None):
        r = self.row_of[label]
        self.counts[r] += 1.0
        self.sums[r] += x
        self.outers[r] += np.outer(x, x) if x_outer is None else x_outer
        self._refresh_row(r)

    def create_cluster(self, x, x_outer=None):
        """Open a fresh singleton cluster for x; returns its label."""
        k = len(self.labels)
        self._grow(k + 2)
        label = self.next_label
        self.next_label += 1
        self.counts[k] = 1.0
        self.sums[k] = x
        self.outers[k] = np.outer(x, x) if x_outer is None else x_outer
        self.labels.append(label)
        self.row_of[label] = k
        self._refresh_row(k)
        self._write_prior_row(k + 1)
        return label

    # -- evaluation ---------------------------------------------------------

    def point_log_weights(self, x):
        """Log-weights over (clusters in ascending label order, new cluster)."""
        rows = len(self.labels) + 1
        kap = self.kappas[:rows]
        diff = self.mus[:rows] - x
        psi_new = self.psis[:rows] + (kap / (kap + 1.0))[:, None, None] * (
            diff[:, :, None] * diff[:, None, :]
        )
        try:
            chol = np.linalg.cholesky(psi_new)
        except np.linalg.LinAlgError:
            self._raise_degenerate(psi_new)
        log_det = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        return self.consts[:rows] - 0.5 * (self.nus[:rows] + 1.0) * log_det

    def _raise_degenerate(self, psi_new):
        for r in range(psi_new.shape[0]):
            try:
                np.linalg.cholesky(psi_new[r])
            except np.linalg.LinAlgError:
                label = self.labels[r] if r < len(self.labels) else "new"
                raise NumericalDegeneracyError(
                    "candidate scale matrix is not positive definite",
                    min_eigenvalue=float(np.linalg.eigvalsh(psi_new[r]).min()),
                    context={"cluster_label": label},
                ) from None
        raise NumericalDegeneracyError("batched Cholesky failed")

    def clusters_dict(self, relabel=None):
        """Materialize {label: SufficientStats}; ``relabel`` remaps labels."""
        out = {}
        for lab in self.labels:
            r = self.row_of[lab]
            key = lab if relabel is None else relabel[lab]
            out[key] = SufficientStats(
                int(round(self.counts[r])),
                self.sums[r].copy(),
                self.outers[r].copy(),
            )
        return out


def cgs_sweep(state, data, rng, weight_log=None):
    """One collapsed Gibbs pass over all points in ascending index order.

    Emptied clusters are deleted immediately; labels are compacted to a dense
    0..K-1 range (ascending original label order) once at sweep end.  When
    ``weight_log`` is a list, the per-step log-weight vectors are appended to
    it before each draw.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if state.labels.shape[0] != n:
        raise ValueError("state covers %d points, data has %d" % (state.labels.shape[0], n))
    cache = _ClusterCache.from_partition(state)
    labels = np.array(state.labels, dtype=np.int64, copy=True)
    i = -1
    try:
        for i in range(n):
            x = data[i]
            x_outer = x[:, None] * x
            cache.remove_point(int(labels[i]), x, x_outer)
            weights = cache.point_log_weights(x)
            if weight_log is not None:
                weight_log.append(weights.copy())
            idx = sample_log_weights(weights, rng)
            if idx == len(cache.labels):
                labels[i] = cache.create_cluster(x, x_outer)
            else:
                chosen = cache.labels[idx]
                cache.add_point(chosen, x, x_outer)
                labels[i] = chosen
    except NumericalDegeneracyError as err:
        err.add_context(point_index=i)
        raise
    lut = np.full(cache.next_label, -1, dtype=np.int64)
    lut[cache.labels] = np.arange(len(cache.labels))
    relabel = {lab: int(lut[lab]) for lab in cache.labels}
    return PartitionState(
        labels=lut[labels],
        clusters=cache.clusters_dict(relabel),
        hyper=state.hyper,
    )


def crp_log_prob(alpha, sizes, n):
    """Log of the exchangeable partition probability under CRP(alpha)."""
    k = len(sizes)
    total = k * math.log(alpha) + gammaln(alpha) - gammaln(alpha + n)
    for size in sizes:
        total += gammaln(size)
    return float(total)


def log_joint(state):
    """log p(x, z): CRP partition prior plus per-cluster marginal likelihoods."""
    sizes = [s.n for s in state.clusters.values()]
    value = crp_log_prob(state.hyper.alpha, sizes, int(state.labels.shape[0]))
    for stats in state.clusters.values():
        value += log_marginal(stats, state.hyper.prior)
    return value


def run_cgs(data, hyper, iterations, seed, ground_truth=None, record_trace=True):
    """Run the centralized sampler from a single-cluster initialization.

    Returns (final PartitionState, RunTrace).  The trace records log p(x, z),
    the cluster count, wall-clock seconds per iteration, and (when ground
    truth labels are supplied) the adjusted Rand index after each iteration.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1, got %r" % (iterations,))
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("data must be a non-empty (n, d) array")
    rng = np.random.default_rng(np.random.SeedSequence(seed_to_u64(seed)))
    state = PartitionState.single_cluster(data, hyper)
    trace = RunTrace(
        meta={
            "algorithm": "cgs",
            "iterations": int(iterations),
            "seed": int(seed),
            "alpha": hyper.alpha,
            "n": int(data.shape[0]),
            "d": int(data.shape[1]),
        }
    )
    truth = None if ground_truth is None else np.asarray(ground_truth)
    for t in range(1, iterations + 1):
        started = time.perf_counter()
        try:
            state = cgs_sweep(state, data, rng)
        except NumericalDegeneracyError as err:
            err.add_context(iteration=t)
            raise
        if record_trace:
            score = None
            if truth is not None:
                from .metrics import ari

                score = ari(state.labels, truth)
            trace.append(
                IterationRecord(
                    iteration=t,
                    log_joint=log_joint(state),
                    num_clusters=state.num_clusters,
                    seconds=time.perf_counter() - started,
                    ari=score,
                )
            )
    return state, trace
