"""Packer identification from unpacking-stub call graphs.

Pipeline: parse call graphs from the interchange format, filter them to
their unpacking stubs, embed stub pairs with a trainable matching
network, group each packer's graphs into clusters with medoids and
acceptance thresholds, and identify incoming binaries by gated similarity
search over a persistent registry.
"""

from .callgraph import (
    CallGraph,
    FeatureStats,
    FunctionNode,
    GraphMeta,
    NodeKind,
    StubGraph,
    compute_feature_stats,
    graph_digest,
    normalize,
    parse_graph,
    serialize_graph,
)
from .cluster import Cluster, ClusterOptions, cluster_packer, medoid, silhouette_score
from .gmn import GmnConfig, GmnParams, cosine_similarity, embed_pair, pair_loss, train
from .identification import UNKNOWN, IdentificationResult, identify, identify_batch, identify_flat
from .metrics import FamilySpec, evaluate, generate_family, integration_cost
from .registry import Registry, configure, integrate, load, save
from .stub import connected_components, extract_stub

__version__ = "0.1.0"

__all__ = [
    "CallGraph",
    "Cluster",
    "ClusterOptions",
    "FamilySpec",
    "FeatureStats",
    "FunctionNode",
    "GmnConfig",
    "GmnParams",
    "GraphMeta",
    "IdentificationResult",
    "NodeKind",
    "Registry",
    "StubGraph",
    "UNKNOWN",
    "cluster_packer",
    "compute_feature_stats",
    "configure",
    "connected_components",
    "cosine_similarity",
    "embed_pair",
    "evaluate",
    "extract_stub",
    "generate_family",
    "graph_digest",
    "identify",
    "identify_batch",
    "identify_flat",
    "integrate",
    "integration_cost",
    "load",
    "medoid",
    "normalize",
    "pair_loss",
    "parse_graph",
    "save",
    "serialize_graph",
    "silhouette_score",
    "train",
    "__version__",
]
