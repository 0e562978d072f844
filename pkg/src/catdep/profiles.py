"""Partition summaries: similarity matrix, representative partition, profiles.

The representative partition is the retained sample whose co-clustering
indicator matrix is closest (squared distance) to the posterior similarity
matrix.  Cluster profiles then report, per representative cluster and
level, whether the effective level probability sits credibly above (`>`),
below (`<`) or astride (`0`) the whole-sample frequency, based on the
empirical 2.5%/97.5% quantiles across retained iterations.  Iterations are
matched to representative clusters by maximal subject overlap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import MarginalFrequencies
from .dpcluster import ClusterTrace
from .errors import ConfigError


def similarity_matrix(trace: ClusterTrace) -> np.ndarray:
    """(n, n) fraction of retained iterations in which subjects co-cluster."""
    if trace.n_retained < 1:
        raise ConfigError("empty trace")
    n = trace.n_subjects
    out = np.zeros((n, n))
    for t in range(trace.n_retained):
        z = trace.z[t]
        out += z[:, None] == z[None, :]
    return out / trace.n_retained


@dataclass(frozen=True)
class RepresentativePartition:
    labels: np.ndarray        # (n,) labels 1..K in order of first appearance
    sizes: np.ndarray         # (K,)
    score: float              # squared distance to the similarity matrix
    iteration: int            # index of the winning retained sample

    @property
    def n_clusters(self) -> int:
        return self.sizes.shape[0]

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k + 1)


def _relabel_first_seen(z: np.ndarray) -> np.ndarray:
    labels = np.zeros_like(z, dtype=np.int64)
    nxt = 0
    seen: dict[int, int] = {}
    for i, v in enumerate(z):
        v = int(v)
        if v not in seen:
            nxt += 1
            seen[v] = nxt
        labels[i] = seen[v]
    return labels


def representative_partition(trace: ClusterTrace) -> RepresentativePartition:
    """Retained partition minimizing || indicator - similarity ||^2.

    Ties break toward the earliest iteration.  Expanding the square, only
    sum_c n_c^2 - 2 * (block sum of the similarity matrix) varies by
    iteration, so the constant term is dropped from the comparison and
    added back for the reported score.
    """
    sim = similarity_matrix(trace)
    const = float((sim ** 2).sum())
    best_t, best_val = 0, np.inf
    for t in range(trace.n_retained):
        z = trace.z[t]
        eq = z[:, None] == z[None, :]
        val = float(eq.sum()) - 2.0 * float(sim[eq].sum())
        if val < best_val - 1e-12:
            best_t, best_val = t, val
    labels = _relabel_first_seen(trace.z[best_t])
    sizes = np.bincount(labels)[1:]
    return RepresentativePartition(
        labels=labels,
        sizes=sizes,
        score=best_val + const,
        iteration=best_t,
    )


@dataclass(frozen=True)
class ProfileTable:
    """Per (cluster, covariate, level): comparison symbol and its interval."""

    symbols: np.ndarray       # (K, P, m_max) of '<', '>', '0' ('' on padding)
    ci_lo: np.ndarray         # (K, P, m_max)
    ci_hi: np.ndarray
    rho_median: np.ndarray    # (P,)
    sizes: np.ndarray         # (K,)
    levels: tuple[int, ...]
    names: tuple[str, ...]


def profile_table(
    trace: ClusterTrace,
    partition: RepresentativePartition,
    margins: MarginalFrequencies,
) -> ProfileTable:
    """Build the cluster-profile report.

    Every retained iteration's occupied clusters are matched to the
    representative cluster sharing the most subjects; the matched effective
    level probabilities form the sample behind each credible interval.
    A representative cluster matched in fewer than two iterations gets all
    `0` symbols and a warning.
    """
    if trace.n_retained < 1:
        raise ConfigError("empty trace")
    k_count = partition.n_clusters
    p_count = trace.p_count
    m_max = max(trace.levels)
    ref = margins.padded()

    samples: list[list[np.ndarray]] = [[] for _ in range(k_count)]
    rep_members = [set(partition.members(k).tolist()) for k in range(k_count)]
    for t in range(trace.n_retained):
        z = trace.z[t]
        for k_row, cid in enumerate(trace.cluster_ids[t]):
            members = np.flatnonzero(z == cid)
            member_set = set(members.tolist())
            overlaps = [len(member_set & rep) for rep in rep_members]
            target = int(np.argmax(overlaps))
            samples[target].append(trace.phi_sharp[t][k_row])

    symbols = np.full((k_count, p_count, m_max), "", dtype="<U1")
    ci_lo = np.zeros((k_count, p_count, m_max))
    ci_hi = np.zeros((k_count, p_count, m_max))
    for k in range(k_count):
        for p in range(p_count):
            symbols[k, p, : trace.levels[p]] = "0"
        if len(samples[k]) < 2:
            warnings.warn(
                f"representative cluster {k + 1} matched in fewer than two "
                "iterations; its profile symbols default to '0'",
                stacklevel=2,
            )
            continue
        stack = np.stack(samples[k])          # (draws, P, m_max)
        diff = stack - ref[None, :, :]
        lo = np.quantile(diff, 0.025, axis=0)
        hi = np.quantile(diff, 0.975, axis=0)
        ci_lo[k] = lo
        ci_hi[k] = hi
        for p in range(p_count):
            for m in range(trace.levels[p]):
                if hi[p, m] < 0:
                    symbols[k, p, m] = "<"
                elif lo[p, m] > 0:
                    symbols[k, p, m] = ">"

    rho_median = np.median(trace.rho, axis=0)
    return ProfileTable(
        symbols=symbols,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        rho_median=rho_median,
        sizes=partition.sizes,
        levels=trace.levels,
        names=trace.names,
    )
