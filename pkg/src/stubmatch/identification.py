"""Inference: match an incoming call graph against the registry.

Clustered path: gate on medoid similarity (one network call per cluster),
then compare only against members of positively gated clusters.  A
packer's score is the fraction of its gated members that clear their
cluster's threshold, normalized by the largest gated member count among
the candidate packers, so scores stay in [0, 1].

Flat path (baseline): compare against every stored graph with per-packer
thresholds; it never refuses, and its call count is always exactly the
store size.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .callgraph import CallGraph
from .cluster import pair_similarity
from .errors import IdentificationError, StubmatchError
from .registry import Registry
from .stub import StubGraph, extract_stub

__all__ = [
    "UNKNOWN",
    "IdentifyOptions",
    "ClusterEvidence",
    "IdentificationResult",
    "identify",
    "identify_batch",
    "identify_flat",
    "resolve_verdict",
]

UNKNOWN = "UNKNOWN"

SINGLE_PACKER_FALLBACK_THRESHOLD = 0.9  # flat mode, packer with one stored graph


@dataclass(frozen=True)
class IdentifyOptions:
    unknown_on_zero_score: bool = True
    jobs: int | None = None  # batch parallelism; None = serial


@dataclass(frozen=True)
class ClusterEvidence:
    """One positively gated cluster and the input's similarities to it."""

    packer: str
    cluster_index: int
    medoid_similarity: float
    member_similarities: tuple[float, ...]
    threshold: float


@dataclass(frozen=True)
class IdentificationResult:
    sample_id: str
    verdict: str
    score: float
    per_packer_scores: dict[str, float]
    selected_clusters: tuple[tuple[str, int, float], ...]  # (packer, index, medoid sim)
    inference_calls: int
    stub_branch: str
    mode: str = "clustered"

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "verdict": self.verdict,
            "score": self.score,
            "per_packer_scores": dict(sorted(self.per_packer_scores.items())),
            "selected_clusters": [
                {"packer": p, "cluster": i, "medoid_similarity": s}
                for p, i, s in self.selected_clusters
            ],
            "inference_calls": self.inference_calls,
            "stub_branch": self.stub_branch,
            "mode": self.mode,
        }


def resolve_verdict(
    evidence: Sequence[ClusterEvidence],
    total_clusters: int,
    stub_branch: str,
    sample_id: str,
    options: IdentifyOptions = IdentifyOptions(),
) -> IdentificationResult:
    """Score positively gated clusters and pick the verdict.

    ``evidence`` holds only the selected clusters; gating itself consumed
    ``total_clusters`` network calls.
    """
    calls = total_clusters + sum(len(e.member_similarities) for e in evidence)
    if not evidence:
        return IdentificationResult(sample_id, UNKNOWN, 0.0, {}, (), calls, stub_branch)

    passes: dict[str, int] = {}
    totals: dict[str, int] = {}
    for e in evidence:
        n_pass = sum(1 for s in e.member_similarities if s >= e.threshold)
        passes[e.packer] = passes.get(e.packer, 0) + n_pass
        totals[e.packer] = totals.get(e.packer, 0) + len(e.member_similarities)
    denominator = max(totals.values())
    scores = {p: passes[p] / denominator for p in sorted(passes)}
    # ties: larger pass count first, then lexicographic packer name
    verdict, best = min(scores.items(), key=lambda kv: (-kv[1], -passes[kv[0]], kv[0]))
    selected = tuple((e.packer, e.cluster_index, e.medoid_similarity) for e in evidence)
    if best == 0.0 and options.unknown_on_zero_score:
        return IdentificationResult(sample_id, UNKNOWN, 0.0, scores, selected, calls, stub_branch)
    return IdentificationResult(sample_id, verdict, best, scores, selected, calls, stub_branch)


SimilarityFn = Callable[[StubGraph, StubGraph], float]


def _registry_similarity(registry: Registry) -> SimilarityFn:
    return lambda a, b: pair_similarity(a, b, registry.params, registry.stats)


def identify(
    graph: CallGraph,
    registry: Registry,
    options: IdentifyOptions = IdentifyOptions(),
    similarity: SimilarityFn | None = None,
) -> IdentificationResult:
    """Clustered identification of one input graph."""
    if registry.n_graphs == 0 or registry.n_clusters == 0:
        raise IdentificationError("registry holds no clusters")
    sim = similarity if similarity is not None else _registry_similarity(registry)
    stub = graph if isinstance(graph, StubGraph) else extract_stub(graph)

    clusters = registry.iter_clusters()
    evidence: list[ClusterEvidence] = []
    for packer, index, cluster in clusters:
        medoid_sim = sim(stub, registry.graphs[cluster.medoid_id])
        if medoid_sim > 0.0:  # strictly positive gating
            member_sims = tuple(sim(stub, registry.graphs[d]) for d in cluster.member_ids)
            evidence.append(
                ClusterEvidence(packer, index, medoid_sim, member_sims, cluster.threshold)
            )
    return resolve_verdict(evidence, len(clusters), stub.branch_taken, graph.meta.sample_id, options)


def flat_thresholds(registry: Registry, similarity: SimilarityFn | None = None) -> dict[str, float]:
    """Packer-level thresholds for the no-clustering baseline: mean intra
    similarity minus population std over unordered distinct pairs.

    Cached on the registry snapshot; the calls spent here are
    configuration-side and not billed to any identification.
    """
    if registry._flat_thresholds is not None and similarity is None:
        return registry._flat_thresholds
    sim = similarity if similarity is not None else _registry_similarity(registry)
    thresholds: dict[str, float] = {}
    for packer in sorted(registry.packers):
        stubs = registry.packer_graphs(packer)
        if len(stubs) < 2:
            thresholds[packer] = SINGLE_PACKER_FALLBACK_THRESHOLD
            continue
        sims = [
            sim(stubs[i], stubs[j])
            for i in range(len(stubs))
            for j in range(i + 1, len(stubs))
        ]
        mean = sum(sims) / len(sims)
        var = sum((s - mean) ** 2 for s in sims) / len(sims)
        thresholds[packer] = mean - math.sqrt(var)
    if similarity is None:
        registry._flat_thresholds = thresholds
    return thresholds


def identify_flat(
    graph: CallGraph,
    registry: Registry,
    options: IdentifyOptions = IdentifyOptions(),
    similarity: SimilarityFn | None = None,
) -> IdentificationResult:
    """No-clustering baseline: compare against every stored graph."""
    if registry.n_graphs == 0:
        raise IdentificationError("registry holds no graphs")
    sim = similarity if similarity is not None else _registry_similarity(registry)
    stub = graph if isinstance(graph, StubGraph) else extract_stub(graph)
    thresholds = flat_thresholds(registry, similarity)

    passes: dict[str, int] = {}
    totals: dict[str, int] = {}
    calls = 0
    for packer in sorted(registry.packers):
        stubs = registry.packer_graphs(packer)
        totals[packer] = len(stubs)
        n_pass = 0
        for stored in stubs:
            calls += 1
            if sim(stub, stored) >= thresholds[packer]:
                n_pass += 1
        passes[packer] = n_pass
    denominator = max(totals.values())
    scores = {p: passes[p] / denominator for p in sorted(passes)}
    verdict, best = min(scores.items(), key=lambda kv: (-kv[1], -passes[kv[0]], kv[0]))
    return IdentificationResult(
        graph.meta.sample_id, verdict, best, scores, (), calls, stub.branch_taken, mode="flat"
    )


def identify_batch(
    graphs: Sequence[CallGraph],
    registry: Registry,
    options: IdentifyOptions = IdentifyOptions(),
    flat: bool = False,
) -> list[IdentificationResult | StubmatchError]:
    """Order-preserving batch; per-item failures become the raised error
    object in that item's slot and the batch continues."""
    run = identify_flat if flat else identify

    def one(graph: CallGraph) -> IdentificationResult | StubmatchError:
        try:
            return run(graph, registry, options)
        except StubmatchError as exc:
            return exc

    if options.jobs is not None and options.jobs > 1 and len(graphs) > 1:
        with ThreadPoolExecutor(max_workers=options.jobs) as pool:
            return list(pool.map(one, graphs))
    return [one(g) for g in graphs]
