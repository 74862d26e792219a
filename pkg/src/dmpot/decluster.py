"""Multivariate run declustering of censored panels.

A cluster opens on the first day where any site is above its threshold and
closes once ``run_length`` consecutive days pass with no site above. Days
outside clusters are split into fully-below days, fully-missing days and
homogeneous blocks of undetermined days.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data_model import (
    CensorKind,
    Observation,
    Position,
    SeriesPanel,
    ThresholdConfig,
    classify_panel,
    classify_position,
)

__all__ = [
    "Cluster",
    "ClusterMaximum",
    "UndeterminedBlock",
    "DeclusterSummary",
    "DeclusterError",
    "extract_clusters",
    "cluster_maximum",
    "censor_below_threshold",
    "partition_undetermined",
    "mean_cluster_size",
    "univariate_clusters",
    "decluster",
]


class DeclusterError(ValueError):
    pass


@dataclass(frozen=True)
class Cluster:
    """Inclusive day range ``[start, end]`` of one cluster."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True, eq=False)
class ClusterMaximum:
    """Componentwise censored maximum over a cluster.

    Per-site fields follow the :class:`~dmpot.data_model.Observation`
    conventions (exact records carry bounds ``(0, inf)``).
    """

    start: int
    kind: np.ndarray
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_sites(self) -> int:
        return len(self.kind)

    def observation(self, j: int) -> Observation:
        y = self.value[j]
        return Observation(
            CensorKind(int(self.kind[j])),
            None if np.isnan(y) else float(y),
            float(self.lower[j]),
            float(self.upper[j]),
        )

    def observations(self) -> list[Observation]:
        return [self.observation(j) for j in range(self.n_sites)]

    def __eq__(self, other):
        if not isinstance(other, ClusterMaximum):
            return NotImplemented
        return (
            self.start == other.start
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.value, other.value, equal_nan=True)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    __hash__ = None


@dataclass(frozen=True)
class UndeterminedBlock:
    """Run of consecutive days carrying the same per-site upper bounds."""

    start: int
    length: int
    upper_bounds: tuple[float, ...]


@dataclass(frozen=True)
class DeclusterSummary:
    thresholds: tuple[float, ...]
    run_length: int
    n_days: int
    clusters: list[ClusterMaximum]
    cluster_days: int
    blocks: list[UndeterminedBlock]
    below_days: int
    missing_days: int
    mean_cluster_size: float
    site_names: tuple[str, ...] = field(default=())

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def undetermined_days(self) -> int:
        return sum(b.length for b in self.blocks)

    @property
    def n_sites(self) -> int:
        return len(self.thresholds)


def _runs(active: np.ndarray, run_length: int) -> list[Cluster]:
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return []
    # a gap of run_length quiet days or more separates clusters
    breaks = np.flatnonzero(np.diff(idx) - 1 >= run_length)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    return [Cluster(int(s), int(e)) for s, e in zip(starts, ends)]


def extract_clusters(panel: SeriesPanel, config: ThresholdConfig) -> list[Cluster]:
    pos = classify_panel(panel, config.v)
    return _runs((pos == Position.ABOVE).any(axis=1), config.run_length)


def univariate_clusters(panel: SeriesPanel, config: ThresholdConfig, j: int) -> list[Cluster]:
    """Run declustering of site ``j`` alone at threshold ``v_j``."""
    pos = classify_panel(panel, config.v)
    return _runs(pos[:, j] == Position.ABOVE, config.run_length)


def _merge(kinds, values, lower, upper):
    """Merge a (days, sites) slice into per-site censored maxima."""
    exact = kinds == CensorKind.EXACT
    y = np.where(exact, values, -np.inf).max(axis=0)
    lo = np.where(exact, 0.0, lower).max(axis=0)
    # exact records bound the maximum by their own value; missing ones add nothing
    hi = np.where(exact, values, np.where(kinds == CensorKind.MISSING, -np.inf, upper)).max(axis=0)
    d = kinds.shape[1]
    kind = np.zeros(d, dtype=np.int8)
    value = np.full(d, np.nan)
    out_lo = np.zeros(d)
    out_hi = np.full(d, np.inf)
    for j in range(d):
        if y[j] > lo[j]:
            kind[j], value[j] = CensorKind.EXACT, y[j]
        elif lo[j] < hi[j] or (lo[j] > 0 and lo[j] == hi[j]):
            if math.isfinite(hi[j]):
                kind[j], out_lo[j], out_hi[j] = CensorKind.INTERVAL_CENSORED, lo[j], hi[j]
            elif lo[j] > 0:
                kind[j], out_lo[j] = CensorKind.RIGHT_CENSORED, lo[j]
        elif lo[j] > 0:
            kind[j], out_lo[j] = CensorKind.RIGHT_CENSORED, lo[j]
    return kind, value, out_lo, out_hi


def cluster_maximum(panel: SeriesPanel, cluster: Cluster) -> ClusterMaximum:
    """Censored componentwise maximum of the records in ``cluster``.

    Per site, with ``Y`` the largest exact value, ``L`` the largest lower bound
    and ``R`` the largest upper bound (exact records bound by their value,
    missing records ignored): exact if ``Y > L``; else interval-censored
    ``[L, R]`` when ``R`` is finite; else right-censored at ``L`` if ``L > 0``;
    else missing.
    """
    s = slice(cluster.start, cluster.end + 1)
    kind, value, lo, hi = _merge(panel.kinds[s], panel.values[s], panel.lower[s], panel.upper[s])
    return ClusterMaximum(cluster.start, kind, value, lo, hi)


def censor_below_threshold(cm: ClusterMaximum, thresholds) -> ClusterMaximum:
    """Replace coordinates classified below ``v_j`` by interval ``[0, v_j]``."""
    v = np.asarray(thresholds, dtype=float)
    kind, value = cm.kind.copy(), cm.value.copy()
    lower, upper = cm.lower.copy(), cm.upper.copy()
    for j in range(cm.n_sites):
        if classify_position(cm.observation(j), v[j]) == Position.BELOW:
            kind[j] = CensorKind.INTERVAL_CENSORED
            value[j] = np.nan
            lower[j], upper[j] = 0.0, v[j]
    return ClusterMaximum(cm.start, kind, value, lower, upper)


def partition_undetermined(
    panel: SeriesPanel, clusters: list[Cluster], config: ThresholdConfig
) -> tuple[list[UndeterminedBlock], int, int]:
    """Split the days outside clusters.

    Returns ``(blocks, below_days, missing_days)``. Every non-cluster day that
    is neither below threshold at all sites nor missing at all sites goes into
    an undetermined block. A site's bound on such a day is ``v_j`` when it is
    below threshold and its upper bound otherwise (``+inf`` for missing or
    right-censored records); blocks are maximal runs of consecutive days with
    identical bound vectors.
    """
    v = config.v
    n = panel.n_days
    in_cluster = np.zeros(n, dtype=bool)
    for c in clusters:
        in_cluster[c.start : c.end + 1] = True
    pos = classify_panel(panel, v)
    all_below = (pos == Position.BELOW).all(axis=1) & ~in_cluster
    all_missing = (panel.kinds == CensorKind.MISSING).all(axis=1) & ~in_cluster
    undetermined = ~(in_cluster | all_below | all_missing)
    bounds = np.where(pos == Position.BELOW, v, panel.upper)

    blocks = []
    idx = np.flatnonzero(undetermined)
    if idx.size:
        b = bounds[idx]
        new = np.ones(idx.size, dtype=bool)
        new[1:] = (np.diff(idx) != 1) | (b[1:] != b[:-1]).any(axis=1)
        starts = np.flatnonzero(new)
        stops = np.append(starts[1:], idx.size)
        for s, e in zip(starts, stops):
            blocks.append(UndeterminedBlock(int(idx[s]), int(e - s), tuple(float(x) for x in b[s])))
    return blocks, int(all_below.sum()), int(all_missing.sum())


def mean_cluster_size(panel: SeriesPanel, config: ThresholdConfig) -> float:
    """Mean univariate cluster length, averaged over sites that have clusters."""
    per_site = []
    for j in range(panel.n_sites):
        cl = univariate_clusters(panel, config, j)
        if cl:
            per_site.append(sum(c.length for c in cl) / len(cl))
    if not per_site:
        raise DeclusterError("no excesses at given thresholds")
    return float(np.mean(per_site))


def decluster(panel: SeriesPanel, config: ThresholdConfig) -> DeclusterSummary:
    """Full pipeline: clusters, censored cluster maxima, blocks and day counts."""
    if len(config.thresholds) != panel.n_sites:
        raise DeclusterError(f"{len(config.thresholds)} thresholds for {panel.n_sites} sites")
    clusters = extract_clusters(panel, config)
    if not clusters:
        raise DeclusterError("no excesses at given thresholds")
    maxima = [censor_below_threshold(cluster_maximum(panel, c), config.v) for c in clusters]
    blocks, below, missing = partition_undetermined(panel, clusters, config)
    return DeclusterSummary(
        thresholds=config.thresholds,
        run_length=config.run_length,
        n_days=panel.n_days,
        clusters=maxima,
        cluster_days=sum(c.length for c in clusters),
        blocks=blocks,
        below_days=below,
        missing_days=missing,
        mean_cluster_size=mean_cluster_size(panel, config),
        site_names=panel.site_names,
    )
