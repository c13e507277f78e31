"""Evaluation metrics, a synthetic packer-family generator, and the
scalability / integration-cost benchmarks.

The generator stands in for a wild corpus at desk scale: each family is a
small stub template (a few functions, matching the sizes seen in real
unpacking stubs) plus jitter knobs.  Templates cover all three stub
extraction branches, and perturbed samples keep their family geometry so
learned similarities separate families.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .callgraph import CallGraph, FunctionNode, GraphMeta, KIND_CODES, NodeKind
from .errors import StubmatchError
from .gmn import GmnConfig
from .identification import UNKNOWN, IdentificationResult, identify, identify_flat
from .registry import configure

__all__ = [
    "Perturbation",
    "StubTemplate",
    "FamilySpec",
    "generate_family",
    "family_library",
    "ConfusionTable",
    "PackerCounts",
    "MetricsReport",
    "evaluate",
    "BenchRow",
    "bench_scalability",
    "integration_cost",
    "MODE_RETRAIN",
    "MODE_INCREMENTAL",
]


# --------------------------------------------------------------------------
# synthetic families


@dataclass(frozen=True)
class Perturbation:
    node_add_prob: float = 0.0
    feature_noise_scale: float = 0.0
    edge_flip_prob: float = 0.0

    def __post_init__(self) -> None:
        for name in ("node_add_prob", "feature_noise_scale", "edge_flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise StubmatchError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class StubTemplate:
    kinds: tuple[NodeKind, ...]
    base_features: tuple[tuple[float, ...], ...]  # 12 per node, Table order
    edges: tuple[tuple[int, int], ...]
    entry_ids: tuple[int, ...]


@dataclass(frozen=True)
class FamilySpec:
    packer_name: str
    template: StubTemplate
    perturbation: Perturbation = Perturbation()
    seed: int = 0


# features 1,2 and 4..11 get jitter; type and is_pure stay fixed
_NOISY_FEATURES = (1, 2, 4, 5, 6, 7, 8, 9, 10, 11)


def _template_features(kind: NodeKind, scale: float, profile: Sequence[float]) -> tuple[float, ...]:
    feats = [0.0] * 12
    feats[0] = KIND_CODES[kind]
    feats[1] = scale * profile[0]  # size
    feats[2] = scale * profile[0] * 1.25  # real size incl. padding
    feats[3] = float(profile[1] >= 0.5)  # is_pure
    feats[4] = float(int(profile[2]))  # calling conventions
    feats[5] = max(1.0, scale * profile[3] / 16.0)  # basic blocks
    feats[6] = max(1.0, scale * profile[4] / 4.0)  # instructions
    feats[7] = float(int(profile[5]))  # locals
    feats[8] = float(int(profile[6]))  # args
    feats[9] = max(0.0, scale * profile[3] / 12.0)  # basic-block edges
    feats[10] = float(int(profile[7]))  # indegree
    feats[11] = float(int(profile[8]))  # outdegree
    return tuple(feats)


def generate_family(spec: FamilySpec, n: int) -> list[CallGraph]:
    """Sample n labeled graphs from the family template; deterministic per seed."""
    if n < 1:
        raise StubmatchError("generate_family needs n >= 1")
    rng = np.random.default_rng(spec.seed)
    tpl = spec.template
    pert = spec.perturbation
    graphs: list[CallGraph] = []
    for i in range(n):
        feats = [list(f) for f in tpl.base_features]
        if pert.feature_noise_scale > 0:
            for row in feats:
                for idx in _NOISY_FEATURES:
                    base = row[idx]
                    jitter = pert.feature_noise_scale * max(abs(base), 1.0)
                    row[idx] = max(0.0, base + rng.normal(0.0, jitter))
        edges = set(tpl.edges)
        if pert.edge_flip_prob > 0 and tpl.edges:
            non_entry = [k for k in range(len(tpl.kinds)) if k not in tpl.entry_ids]
            for edge in list(edges):
                if rng.random() < pert.edge_flip_prob and len(edges) > 1:
                    edges.discard(edge)
            for _ in range(len(tpl.edges)):
                if rng.random() < pert.edge_flip_prob and len(non_entry) >= 2:
                    a, b = rng.choice(len(non_entry), size=2, replace=False)
                    edges.add((non_entry[a], non_entry[b]))
        nodes = [
            FunctionNode(idx, kind, tuple(row))
            for idx, (kind, row) in enumerate(zip(tpl.kinds, feats))
        ]
        next_id = len(nodes)
        if pert.node_add_prob > 0:
            # decoy nodes sit outside the stub component and are removed
            # by extraction, so family structure stays stable while the
            # full binaries differ
            donor = feats[-1]
            extra = 0
            while extra < 2 and rng.random() < pert.node_add_prob:
                row = list(donor)
                row[0] = KIND_CODES[NodeKind.INTERNAL]
                for idx in _NOISY_FEATURES:
                    row[idx] = max(0.0, row[idx] * float(rng.uniform(0.5, 1.5)))
                row[3] = 0.0
                nodes.append(FunctionNode(next_id, NodeKind.INTERNAL, tuple(row)))
                next_id += 1
                extra += 1
            # junk component with an edge; only safe when the template has
            # edges of its own (an edgeless family must stay edgeless)
            if tpl.edges and rng.random() < pert.node_add_prob:
                row = list(donor)
                row[0] = KIND_CODES[NodeKind.INTERNAL]
                row[3] = 0.0
                nodes.append(FunctionNode(next_id, NodeKind.INTERNAL, tuple(row)))
                nodes.append(FunctionNode(next_id + 1, NodeKind.INTERNAL, tuple(row)))
                edges.add((next_id, next_id + 1))
                next_id += 2
        meta = GraphMeta(
            sample_id=f"{spec.packer_name}-{i:04d}",
            sha256="",
            packer_label=spec.packer_name,
            entry_ids=tpl.entry_ids,
        )
        graphs.append(CallGraph(nodes, edges, meta))
    return graphs


def _profile(rng: np.random.Generator) -> list[float]:
    return [
        float(rng.uniform(0.8, 2.5)),
        float(rng.random()),
        float(rng.integers(1, 4)),
        float(rng.uniform(8, 40)),
        float(rng.uniform(16, 90)),
        float(rng.integers(0, 12)),
        float(rng.integers(0, 6)),
        float(rng.integers(0, 5)),
        float(rng.integers(0, 5)),
    ]


def family_library(count: int, seed: int = 0, noise: float = 0.08) -> list[FamilySpec]:
    """Deterministic catalog of distinct synthetic packer families.

    Topologies rotate through all three stub-extraction branches; feature
    scales are log-spaced so families are separable in principle (a
    nearest-neighbor floor exists) while per-sample jitter keeps the task
    non-trivial.
    """
    rng = np.random.default_rng(seed)
    shapes = [
        "edgeless",  # entry + imports, no edges
        "detached",  # isolated entry + separate component
        "chain",
        "star",
        "diamond",
        "cycle",
        "two_level",
    ]
    specs: list[FamilySpec] = []
    for f in range(count):
        shape = shapes[f % len(shapes)]
        scale = 40.0 * (2.1 ** f) * float(rng.uniform(0.9, 1.1))
        kinds: list[NodeKind]
        edges: list[tuple[int, int]]
        if shape == "edgeless":
            kinds = [NodeKind.ENTRY, NodeKind.IMPORT, NodeKind.IMPORT, NodeKind.INTERNAL]
            edges = []
        elif shape == "detached":
            kinds = [NodeKind.ENTRY, NodeKind.INTERNAL, NodeKind.INTERNAL, NodeKind.INTERNAL]
            edges = [(1, 2), (2, 3), (1, 3)]
        elif shape == "chain":
            kinds = [NodeKind.ENTRY, NodeKind.INTERNAL, NodeKind.IMPORT]
            edges = [(0, 1), (1, 2)]
        elif shape == "star":
            kinds = [NodeKind.ENTRY, NodeKind.INTERNAL, NodeKind.INTERNAL, NodeKind.IMPORT, NodeKind.IMPORT]
            edges = [(0, 1), (0, 2), (0, 3), (0, 4)]
        elif shape == "diamond":
            kinds = [NodeKind.ENTRY, NodeKind.INTERNAL, NodeKind.INTERNAL, NodeKind.INTERNAL]
            edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
        elif shape == "cycle":
            kinds = [NodeKind.ENTRY, NodeKind.INTERNAL, NodeKind.INTERNAL]
            edges = [(0, 1), (1, 2), (2, 1)]
        else:  # two_level
            kinds = [
                NodeKind.ENTRY,
                NodeKind.INTERNAL,
                NodeKind.INTERNAL,
                NodeKind.IMPORT,
                NodeKind.INTERNAL,
                NodeKind.IMPORT,
            ]
            edges = [(0, 1), (0, 2), (1, 3), (2, 4), (4, 5)]
        base = tuple(
            _template_features(kind, scale * (1.0 + 0.35 * idx), _profile(rng))
            for idx, kind in enumerate(kinds)
        )
        entry_ids = (0,)
        template = StubTemplate(tuple(kinds), base, tuple(edges), entry_ids)
        specs.append(
            FamilySpec(
                packer_name=f"family{f:02d}-{shape}",
                template=template,
                perturbation=Perturbation(
                    node_add_prob=0.3,
                    feature_noise_scale=noise,
                    edge_flip_prob=0.0,
                ),
                seed=int(rng.integers(2**32)),
            )
        )
    return specs


def synthetic_corpus(
    specs: Sequence[FamilySpec], per_family: int, offset: int = 0
) -> list[CallGraph]:
    """per_family samples from each family; ``offset`` skips the first
    samples of each stream so train/test splits never overlap."""
    corpus: list[CallGraph] = []
    for spec in specs:
        corpus.extend(generate_family(spec, offset + per_family)[offset:])
    return corpus


# --------------------------------------------------------------------------
# evaluation

EXTERNAL = "external"  # truth label for samples outside the registry


@dataclass(frozen=True)
class PackerCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    unknown: int = 0


@dataclass(frozen=True)
class ConfusionTable:
    per_packer: dict[str, PackerCounts]
    total: int

    def __post_init__(self) -> None:
        for packer, c in self.per_packer.items():
            if c.tp + c.fp + c.fn + c.tn != self.total:
                raise StubmatchError(f"confusion counts for {packer} do not sum to total")


@dataclass(frozen=True)
class PackerMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    fpr: float
    unknown_rate: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_packer: dict[str, PackerMetrics]
    macro: PackerMetrics
    unknown_rate: float
    inference_calls_mean: float
    inference_calls_std: float
    total: int
    confusion: ConfusionTable

    def to_record(self) -> dict:
        def row(m: PackerMetrics) -> dict:
            return {
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "accuracy": m.accuracy,
                "fpr": m.fpr,
                "unknown_rate": m.unknown_rate,
                "support": m.support,
            }

        return {
            "per_packer": {p: row(m) for p, m in sorted(self.per_packer.items())},
            "macro": row(self.macro),
            "unknown_rate": self.unknown_rate,
            "inference_calls_mean": self.inference_calls_mean,
            "inference_calls_std": self.inference_calls_std,
            "total": self.total,
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def confusion_table(verdicts: Sequence[str], truth: Sequence[str]) -> ConfusionTable:
    if len(verdicts) != len(truth):
        raise StubmatchError(f"{len(verdicts)} verdicts vs {len(truth)} truth labels")
    packers = sorted((set(truth) | set(verdicts)) - {UNKNOWN, EXTERNAL})
    per: dict[str, PackerCounts] = {}
    n = len(truth)
    for p in packers:
        tp = sum(1 for v, t in zip(verdicts, truth) if t == p and v == p)
        fn = sum(1 for v, t in zip(verdicts, truth) if t == p and v != p)
        fp = sum(1 for v, t in zip(verdicts, truth) if t != p and v == p)
        tn = n - tp - fn - fp
        unk = sum(1 for v, t in zip(verdicts, truth) if t == p and v == UNKNOWN)
        per[p] = PackerCounts(tp, fp, fn, tn, unk)
    return ConfusionTable(per, n)


def evaluate(results: Sequence[IdentificationResult], truth: Sequence[str]) -> MetricsReport:
    """Per-packer one-vs-rest metrics plus macro averages.

    An UNKNOWN verdict is a miss for the true packer and a negative for
    every other packer.
    """
    if len(results) != len(truth):
        raise StubmatchError(f"{len(results)} results vs {len(truth)} truth labels")
    verdicts = [r.verdict for r in results]
    table = confusion_table(verdicts, truth)
    per: dict[str, PackerMetrics] = {}
    for p, c in table.per_packer.items():
        support = c.tp + c.fn
        precision = _ratio(c.tp, c.tp + c.fp)
        recall = _ratio(c.tp, support)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per[p] = PackerMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            accuracy=_ratio(c.tp + c.tn, table.total),
            fpr=_ratio(c.fp, c.fp + c.tn),
            unknown_rate=_ratio(c.unknown, support),
            support=support,
        )
    def mean(attr: str) -> float:
        return sum(getattr(m, attr) for m in per.values()) / len(per) if per else 0.0

    macro = PackerMetrics(
        precision=mean("precision"),
        recall=mean("recall"),
        f1=mean("f1"),
        accuracy=mean("accuracy"),
        fpr=mean("fpr"),
        unknown_rate=mean("unknown_rate"),
        support=len(truth),
    )
    calls = np.array([r.inference_calls for r in results], dtype=np.float64)
    return MetricsReport(
        per_packer=per,
        macro=macro,
        unknown_rate=sum(1 for v in verdicts if v == UNKNOWN) / len(truth) if truth else 0.0,
        inference_calls_mean=float(calls.mean()) if len(calls) else 0.0,
        inference_calls_std=float(calls.std()) if len(calls) else 0.0,
        total=len(truth),
        confusion=table,
    )


# --------------------------------------------------------------------------
# scalability benchmark (call accounting, clustered vs flat)


@dataclass(frozen=True)
class BenchRow:
    config_size: int
    n_clusters: int
    ideal_calls: float
    measured_mean: float
    measured_std: float
    flat_calls: float

    def to_record(self) -> dict:
        return {
            "config_size": self.config_size,
            "n_clusters": self.n_clusters,
            "ideal_calls": self.ideal_calls,
            "measured_mean": self.measured_mean,
            "measured_std": self.measured_std,
            "flat_calls": self.flat_calls,
        }


def bench_scalability(
    reg_sizes: Sequence[int],
    mode: str = "clustered",
    n_families: int = 5,
    test_per_family: int = 10,
    config: GmnConfig | None = None,
    seed: int = 0,
) -> list[BenchRow]:
    """For each configuration size, configure a registry on the synthetic
    corpus and measure network calls per identification over a held-out
    batch.  The clustered ideal is m + samples-per-packer; the flat count
    is exactly packers * samples-per-packer."""
    if mode not in ("clustered", "flat"):
        raise StubmatchError(f"unknown bench mode {mode!r}")
    rows: list[BenchRow] = []
    specs = family_library(n_families, seed=seed)
    base = config if config is not None else GmnConfig()
    for size in reg_sizes:
        train_set = synthetic_corpus(specs, size)
        test_set = synthetic_corpus(specs, test_per_family, offset=size)
        registry = configure(train_set, base)
        run = identify if mode == "clustered" else identify_flat
        calls = np.array(
            [run(g, registry).inference_calls for g in test_set], dtype=np.float64
        )
        m = registry.n_clusters
        rows.append(
            BenchRow(
                config_size=size,
                n_clusters=m,
                ideal_calls=float(m + size),
                measured_mean=float(calls.mean()),
                measured_std=float(calls.std()),
                flat_calls=float(n_families * size),
            )
        )
    return rows


# --------------------------------------------------------------------------
# integration cost model

MODE_RETRAIN = "retrain"  # tools that retrain on everything: (n + m) * l
MODE_INCREMENTAL = "incremental"  # this pipeline: m * l, constant in n


def integration_cost(n_known: int, m_new: int, l_samples: int, mode: str) -> int:
    """Samples consumed to integrate m_new packers of l_samples each when
    n_known packers are already integrated."""
    if min(n_known, m_new, l_samples) < 0:
        raise StubmatchError("integration_cost arguments must be non-negative")
    if mode == MODE_RETRAIN:
        return (n_known + m_new) * l_samples
    if mode == MODE_INCREMENTAL:
        return m_new * l_samples
    raise StubmatchError(f"unknown integration mode {mode!r}")
