"""Intra-packer grouping of stub graphs.

For one packer: build a pairwise distance matrix from the matching
network (distance = 1 - cosine similarity, so single linkage and
silhouette keep their usual semantics), grow a single-linkage dendrogram,
pick the flat cut whose silhouette is best, fold leftover singletons into
their nearest cluster, and derive a medoid plus an acceptance threshold
per cluster.

The threshold is the mean pairwise intra-cluster similarity minus its
population standard deviation, taken over unordered distinct pairs
(self-pairs would bias both terms toward 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .callgraph import FeatureStats, graph_digest
from .errors import ClusteringError
from .gmn import GmnParams, cosine_similarity, embed_pair
from .stub import StubGraph

__all__ = [
    "Cluster",
    "ClusterOptions",
    "build_distance_matrix",
    "single_linkage_dendrogram",
    "cut_dendrogram",
    "silhouette_score",
    "medoid",
    "cluster_packer",
]

SINGLETON_THRESHOLD = 0.9  # low-confidence fallback when a cluster has one member


@dataclass(frozen=True)
class ClusterOptions:
    # s_min separates genuine sub-families (silhouette ~0.97 when the
    # network has pushed sub-groups apart) from small-sample clumping
    # inside one tight family (observed up to ~0.75); splitting clumps
    # inflates sub-cluster thresholds and starves identification.
    k_max: int = 10
    s_min: float = 0.8
    singleton_threshold: float = SINGLETON_THRESHOLD


@dataclass(frozen=True)
class Cluster:
    packer: str
    member_ids: tuple[str, ...]  # graph digests
    medoid_id: str
    threshold: float
    low_confidence: bool = False

    def __post_init__(self) -> None:
        if not self.member_ids:
            raise ClusteringError("cluster must have at least one member")
        if self.medoid_id not in self.member_ids:
            raise ClusteringError("medoid must be a cluster member")


def pair_similarity(a: StubGraph, b: StubGraph, params: GmnParams, stats: FeatureStats) -> float:
    ea, eb = embed_pair(a, b, params, stats)
    return cosine_similarity(ea, eb)


def build_distance_matrix(
    graphs: Sequence[StubGraph],
    params: GmnParams,
    stats: FeatureStats,
) -> np.ndarray:
    """Symmetric matrix of 1 - similarity; one network call per unordered pair."""
    labels = {g.meta.packer_label for g in graphs}
    if len(labels) > 1:
        raise ClusteringError(f"distance matrix mixes packers: {sorted(str(l) for l in labels)}")
    n = len(graphs)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = pair_similarity(graphs[i], graphs[j], params, stats)
            d[i, j] = d[j, i] = 1.0 - s
    return d


@dataclass(frozen=True)
class Merge:
    left: int  # cluster index (initial clusters are 0..n-1, merge k creates n+k)
    right: int
    height: float
    size: int


def single_linkage_dendrogram(d: np.ndarray) -> list[Merge]:
    """Agglomerative merges by minimum inter-cluster distance.

    Ties break on the pair whose sorted smallest member indices come
    first, so the tree is deterministic.
    """
    n = d.shape[0]
    active: dict[int, list[int]] = {i: [i] for i in range(n)}
    # single-linkage distance between active clusters, Lance-Williams style
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(d[i, j])
    merges: list[Merge] = []
    next_id = n
    while len(active) > 1:
        best: tuple[float, int, int, int, int] | None = None
        for (i, j), dij in dist.items():
            key = (dij, min(active[i][0], active[j][0]), max(active[i][0], active[j][0]), i, j)
            if best is None or key < best:
                best = key
        assert best is not None
        height, _, _, i, j = best
        members = sorted(active[i] + active[j])
        merges.append(Merge(i, j, height, len(members)))
        del dist[(i, j)]
        for k in list(active):
            if k in (i, j):
                continue
            dik = dist.pop((min(i, k), max(i, k)))
            djk = dist.pop((min(j, k), max(j, k)))
            dist[(min(next_id, k), max(next_id, k))] = min(dik, djk)
        del active[i], active[j]
        active[next_id] = members
        next_id += 1
    return merges


def cut_dendrogram(merges: list[Merge], n: int, k: int) -> np.ndarray:
    """Flat labels for exactly k clusters, applying the first n-k merges.

    Labels are canonical: cluster containing the smallest point gets 0.
    """
    if not 1 <= k <= n:
        raise ClusteringError(f"cannot cut {n} points into {k} clusters")
    parent = list(range(n + len(merges)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step in range(n - k):
        m = merges[step]
        new = n + step
        parent[find(m.left)] = new
        parent[find(m.right)] = new
    roots: dict[int, int] = {}
    labels = np.empty(n, dtype=np.intp)
    for i in range(n):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        labels[i] = roots[r]
    return labels


def silhouette_score(d: np.ndarray, labels: Sequence[int]) -> float:
    """Mean silhouette over all points; singleton points contribute 0."""
    labels = np.asarray(labels)
    n = d.shape[0]
    if n < 3:
        raise ClusteringError("silhouette needs at least three points")
    unique = np.unique(labels)
    if len(unique) < 2:
        raise ClusteringError("silhouette is undefined for a single cluster")
    total = 0.0
    for i in range(n):
        own = labels[i]
        own_mask = labels == own
        own_size = int(own_mask.sum())
        if own_size == 1:
            continue  # contributes 0
        a = d[i, own_mask].sum() / (own_size - 1)
        b = min(d[i, labels == other].mean() for other in unique if other != own)
        denom = max(a, b)
        if denom > 0:
            total += (b - a) / denom
    return total / n


def medoid(d: np.ndarray, members: Sequence[int]) -> int:
    """Member with the minimal sum of distances to the other members;
    ties go to the smallest index."""
    if len(members) == 0:
        raise ClusteringError("medoid of an empty member list")
    members = sorted(members)
    sums = [float(d[np.ix_([m], members)].sum()) for m in members]
    return members[int(np.argmin(sums))]


def _intra_threshold(d: np.ndarray, members: Sequence[int], fallback: float) -> tuple[float, bool]:
    if len(members) < 2:
        return fallback, True
    sims = [1.0 - d[a, b] for idx, a in enumerate(members) for b in members[idx + 1 :]]
    sims_arr = np.asarray(sims)
    return float(sims_arr.mean() - sims_arr.std()), False


def _merge_singletons(assignment: list[list[int]], d: np.ndarray) -> list[list[int]]:
    """Fold single-member clusters into their nearest cluster (single-linkage
    distance), smallest member first; deterministic."""
    clusters = [sorted(c) for c in assignment]
    while len(clusters) > 1:
        singles = [c for c in clusters if len(c) == 1]
        if not singles:
            break
        victim = min(singles, key=lambda c: c[0])
        rest = [c for c in clusters if c is not victim]
        best = min(
            rest,
            key=lambda c: (min(float(d[victim[0], m]) for m in c), c[0]),
        )
        rest.remove(best)
        clusters = rest + [sorted(best + victim)]
    return sorted(clusters, key=lambda c: c[0])


def cluster_packer(
    graphs: Sequence[StubGraph],
    params: GmnParams,
    stats: FeatureStats,
    options: ClusterOptions = ClusterOptions(),
    similarity: Callable[[StubGraph, StubGraph], float] | None = None,
) -> list[Cluster]:
    """Cluster one packer's stub graphs; returns clusters with medoids and
    acceptance thresholds.  ``similarity`` overrides the network-backed
    pair similarity (used by tests)."""
    if not graphs:
        raise ClusteringError("cannot cluster an empty graph collection")
    packers = {g.meta.packer_label for g in graphs}
    if len(packers) > 1:
        raise ClusteringError(f"cluster_packer mixes packers: {sorted(str(p) for p in packers)}")
    packer = graphs[0].meta.packer_label
    if packer is None:
        raise ClusteringError("graphs must be labeled")
    digests = [graph_digest(g) for g in graphs]
    n = len(graphs)

    if similarity is None:
        d = build_distance_matrix(graphs, params, stats)
    else:
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = 1.0 - similarity(graphs[i], graphs[j])

    if n < 3:
        groups = [list(range(n))]
    else:
        merges = single_linkage_dendrogram(d)
        best_k, best_score = 1, -np.inf
        for k in range(2, min(n - 1, options.k_max) + 1):
            labels = cut_dendrogram(merges, n, k)
            score = silhouette_score(d, labels)
            if score > best_score:
                best_k, best_score = k, score
        if best_score < options.s_min:
            best_k = 1
        labels = cut_dendrogram(merges, n, best_k)
        groups = [sorted(np.flatnonzero(labels == lbl).tolist()) for lbl in range(best_k)]
        groups = _merge_singletons(groups, d)

    clusters: list[Cluster] = []
    for members in groups:
        med = medoid(d, members)
        threshold, low_conf = _intra_threshold(d, members, options.singleton_threshold)
        clusters.append(
            Cluster(
                packer=packer,
                member_ids=tuple(sorted(digests[m] for m in members)),
                medoid_id=digests[med],
                threshold=threshold,
                low_confidence=low_conf,
            )
        )
    return clusters
