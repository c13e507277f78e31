"""Call-graph data model and the canonical interchange format.

A graph is one JSON document::

    {"meta": {"sample_id": ..., "sha256": ..., "packer_label": ...,
              "entry_ids": [...]},
     "nodes": [{"id": 0, "kind": "entry", "features": [12 numbers]}, ...],
     "edges": [[caller, callee], ...]}

Stub graphs (the filtered form) carry one extra top-level key,
``"provenance": {"branch_taken": ...}``.

Serialization is canonical: nodes sorted by id, edges sorted
lexicographically, keys in a fixed order, two-space indent.  Equal graphs
serialize to identical bytes, which is what the registry's content
addressing relies on.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GraphIntegrityError, GraphParseError

N_FEATURES = 12

FEATURE_NAMES = (
    "type",
    "size",
    "real_size",
    "is_pure",
    "calling_conventions",
    "n_basic_blocks",
    "n_instructions",
    "n_local_vars",
    "n_args",
    "edges",
    "indegree",
    "outdegree",
)


class NodeKind(enum.Enum):
    ENTRY = "entry"
    INTERNAL = "internal"
    IMPORT = "import"


# feature[0] encoding, kept numeric so the vector stays at 12 dimensions
KIND_CODES = {NodeKind.INTERNAL: 0.0, NodeKind.IMPORT: 1.0, NodeKind.ENTRY: 2.0}


@dataclass(frozen=True)
class FunctionNode:
    id: int
    kind: NodeKind
    features: tuple[float, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or self.id < 0:
            raise GraphIntegrityError(f"node id must be a non-negative int, got {self.id!r}")
        if len(self.features) != N_FEATURES:
            raise GraphIntegrityError(
                f"node {self.id}: expected {N_FEATURES} features, got {len(self.features)}"
            )
        feats = self.features
        if any(not np.isfinite(v) for v in feats):
            raise GraphIntegrityError(f"node {self.id}: non-finite feature value")
        if feats[0] != KIND_CODES[self.kind]:
            raise GraphIntegrityError(
                f"node {self.id}: feature 'type'={feats[0]} inconsistent with kind {self.kind.value}"
            )
        if any(v < 0 for v in feats[1:]):
            raise GraphIntegrityError(f"node {self.id}: negative count/size feature")
        if feats[3] not in (0.0, 1.0):
            raise GraphIntegrityError(f"node {self.id}: is_pure must be 0 or 1, got {feats[3]}")


@dataclass(frozen=True)
class GraphMeta:
    sample_id: str
    sha256: str = ""
    packer_label: str | None = None
    entry_ids: tuple[int, ...] = ()


class CallGraph:
    """Immutable directed call graph with canonical node/edge ordering."""

    __slots__ = ("nodes", "edges", "meta", "_by_id")

    def __init__(
        self,
        nodes: Iterable[FunctionNode],
        edges: Iterable[tuple[int, int]],
        meta: GraphMeta,
    ) -> None:
        node_list = sorted(nodes, key=lambda n: n.id)
        by_id = {n.id: n for n in node_list}
        if len(by_id) != len(node_list):
            raise GraphIntegrityError(f"{meta.sample_id}: duplicate node ids")
        edge_set = {(int(a), int(b)) for a, b in edges}
        for a, b in edge_set:
            if a not in by_id or b not in by_id:
                raise GraphIntegrityError(
                    f"{meta.sample_id}: edge ({a}, {b}) references a missing node"
                )
        entry_ids = tuple(sorted(set(int(e) for e in meta.entry_ids)))
        if not entry_ids:
            raise GraphIntegrityError(f"{meta.sample_id}: entry_ids must be non-empty")
        for e in entry_ids:
            if e not in by_id:
                raise GraphIntegrityError(f"{meta.sample_id}: entry id {e} has no node")
            if by_id[e].kind is not NodeKind.ENTRY:
                raise GraphIntegrityError(f"{meta.sample_id}: entry id {e} is not kind=entry")
        self.nodes: tuple[FunctionNode, ...] = tuple(node_list)
        self.edges: tuple[tuple[int, int], ...] = tuple(sorted(edge_set))
        self.meta = GraphMeta(meta.sample_id, meta.sha256, meta.packer_label, entry_ids)
        self._by_id = by_id

    def node(self, node_id: int) -> FunctionNode:
        return self._by_id[node_id]

    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes)

    def has_node(self, node_id: int) -> bool:
        return node_id in self._by_id

    def feature_matrix(self) -> np.ndarray:
        """Raw Table-order features, one row per node in canonical id order."""
        return np.array([n.features for n in self.nodes], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.nodes)

    def _key(self) -> tuple:
        return (self.nodes, self.edges, self.meta)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CallGraph):
            return NotImplemented
        if isinstance(other, StubGraph) != isinstance(self, StubGraph):
            return False
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(sample_id={self.meta.sample_id!r}, "
            f"nodes={len(self.nodes)}, edges={len(self.edges)})"
        )


BRANCH_ENTRY_COMPONENT = "entry_component"
BRANCH_SECOND_COMPONENT = "second_component"
BRANCH_NO_EDGES_FALLBACK = "no_edges_fallback"

_BRANCHES = (BRANCH_ENTRY_COMPONENT, BRANCH_SECOND_COMPONENT, BRANCH_NO_EDGES_FALLBACK)


class StubGraph(CallGraph):
    """Filtered unpacking-stub view of a call graph, tagged with which
    filtering branch produced it."""

    __slots__ = ("branch_taken",)

    def __init__(
        self,
        nodes: Iterable[FunctionNode],
        edges: Iterable[tuple[int, int]],
        meta: GraphMeta,
        branch_taken: str,
    ) -> None:
        if branch_taken not in _BRANCHES:
            raise GraphIntegrityError(f"unknown stub branch {branch_taken!r}")
        super().__init__(nodes, edges, meta)
        self.branch_taken = branch_taken

    def _key(self) -> tuple:
        return (self.nodes, self.edges, self.meta, self.branch_taken)


def _require(cond: bool, context: str, message: str) -> None:
    if not cond:
        raise GraphParseError(f"{context}: {message}")


def parse_graph(document: str) -> CallGraph:
    """Parse one interchange document.

    Returns a StubGraph when the document carries a provenance block.
    Syntactic problems raise GraphParseError with line/field context;
    structural problems raise GraphIntegrityError.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    _require(isinstance(doc, dict), "document", "top level must be an object")
    for key in ("meta", "nodes", "edges"):
        _require(key in doc, "document", f"missing required key {key!r}")

    meta_raw = doc["meta"]
    _require(isinstance(meta_raw, dict), "meta", "must be an object")
    _require("sample_id" in meta_raw, "meta", "missing sample_id")
    _require("entry_ids" in meta_raw, "meta", "missing entry_ids")
    _require(isinstance(meta_raw["sample_id"], str), "meta.sample_id", "must be a string")
    entry_ids = meta_raw["entry_ids"]
    _require(
        isinstance(entry_ids, list) and all(isinstance(e, int) for e in entry_ids),
        "meta.entry_ids",
        "must be a list of ints",
    )
    label = meta_raw.get("packer_label")
    _require(label is None or isinstance(label, str), "meta.packer_label", "must be a string")
    sha = meta_raw.get("sha256", "")
    _require(isinstance(sha, str), "meta.sha256", "must be a string")
    meta = GraphMeta(meta_raw["sample_id"], sha, label, tuple(entry_ids))

    nodes = []
    _require(isinstance(doc["nodes"], list), "nodes", "must be a list")
    for i, rec in enumerate(doc["nodes"]):
        ctx = f"nodes[{i}]"
        _require(isinstance(rec, dict), ctx, "must be an object")
        for key in ("id", "kind", "features"):
            _require(key in rec, ctx, f"missing {key!r}")
        _require(isinstance(rec["id"], int), f"{ctx}.id", "must be an int")
        try:
            kind = NodeKind(rec["kind"])
        except ValueError:
            raise GraphParseError(f"{ctx}.kind: unknown kind {rec['kind']!r}") from None
        feats = rec["features"]
        _require(
            isinstance(feats, list) and all(isinstance(v, (int, float)) for v in feats),
            f"{ctx}.features",
            "must be a list of numbers",
        )
        nodes.append(FunctionNode(rec["id"], kind, tuple(float(v) for v in feats)))

    _require(isinstance(doc["edges"], list), "edges", "must be a list")
    edges = []
    for i, pair in enumerate(doc["edges"]):
        _require(
            isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair),
            f"edges[{i}]",
            "must be a [caller, callee] pair of ints",
        )
        edges.append((pair[0], pair[1]))

    if "provenance" in doc:
        prov = doc["provenance"]
        _require(isinstance(prov, dict) and "branch_taken" in prov, "provenance", "must carry branch_taken")
        return StubGraph(nodes, edges, meta, prov["branch_taken"])
    return CallGraph(nodes, edges, meta)


def serialize_graph(graph: CallGraph) -> str:
    """Canonical text form; byte-identical for equal graphs."""
    meta: dict[str, object] = {
        "sample_id": graph.meta.sample_id,
        "sha256": graph.meta.sha256,
    }
    if graph.meta.packer_label is not None:
        meta["packer_label"] = graph.meta.packer_label
    meta["entry_ids"] = list(graph.meta.entry_ids)
    doc: dict[str, object] = {
        "meta": meta,
        "nodes": [
            {"id": n.id, "kind": n.kind.value, "features": list(n.features)}
            for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges],
    }
    if isinstance(graph, StubGraph):
        doc["provenance"] = {"branch_taken": graph.branch_taken}
    return json.dumps(doc, indent=2) + "\n"


def graph_digest(graph: CallGraph) -> str:
    """Content address: sha256 over the canonical serialization."""
    return hashlib.sha256(serialize_graph(graph).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature mean / population std over a node population."""

    mean: tuple[float, ...]
    std: tuple[float, ...]
    computed_over: int

    def __post_init__(self) -> None:
        if len(self.mean) != N_FEATURES or len(self.std) != N_FEATURES:
            raise GraphIntegrityError("feature stats must be 12-vectors")
        if self.computed_over < 1:
            raise GraphIntegrityError("feature stats need at least one node")
        if any(s < 0 for s in self.std):
            raise GraphIntegrityError("std components must be non-negative")


def compute_feature_stats(graphs: Sequence[CallGraph]) -> FeatureStats:
    """Mean and population std over every node of every graph."""
    rows = [g.feature_matrix() for g in graphs if len(g) > 0]
    if not rows:
        raise GraphIntegrityError("cannot compute feature stats over zero nodes")
    all_feats = np.concatenate(rows, axis=0)
    mean = all_feats.mean(axis=0)
    std = all_feats.std(axis=0)  # population std (ddof=0)
    return FeatureStats(tuple(mean.tolist()), tuple(std.tolist()), all_feats.shape[0])


def normalize(features: Sequence[float], stats: FeatureStats) -> np.ndarray:
    """Z-score one feature vector; zero-variance components map to 0."""
    x = np.asarray(features, dtype=np.float64)
    mean = np.asarray(stats.mean)
    std = np.asarray(stats.std)
    out = np.zeros_like(x)
    nz = std > 0
    out[nz] = (x[nz] - mean[nz]) / std[nz]
    return out


def normalize_matrix(graph: CallGraph, stats: FeatureStats) -> np.ndarray:
    """Z-scored feature matrix in canonical node order."""
    x = graph.feature_matrix()
    mean = np.asarray(stats.mean)
    std = np.asarray(stats.std)
    out = np.zeros_like(x)
    nz = std > 0
    out[:, nz] = (x[:, nz] - mean[nz]) / std[nz]
    return out
