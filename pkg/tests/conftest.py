import os

import numpy as np
import pytest
from hypothesis import settings

from stubmatch.callgraph import (
    CallGraph,
    FunctionNode,
    GraphMeta,
    NodeKind,
    compute_feature_stats,
)
from stubmatch.gmn import GmnConfig, GmnParams
from stubmatch.metrics import family_library, synthetic_corpus
from stubmatch.registry import configure
from stubmatch.stub import extract_stub

settings.register_profile("ci", derandomize=True, max_examples=60, deadline=None)
settings.load_profile("ci")

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

KIND_CODE = {NodeKind.INTERNAL: 0.0, NodeKind.IMPORT: 1.0, NodeKind.ENTRY: 2.0}


def make_node(node_id, kind=NodeKind.INTERNAL, **overrides):
    feats = [KIND_CODE[kind], 100.0, 120.0, 0.0, 1.0, 4.0, 30.0, 2.0, 1.0, 5.0, 1.0, 2.0]
    for idx, value in overrides.items():
        feats[int(idx)] = float(value)
    return FunctionNode(node_id, kind, tuple(feats))


def make_graph(n_nodes, edges, entry_ids=(0,), sample_id="g", label=None, kinds=None):
    nodes = []
    for i in range(n_nodes):
        kind = kinds[i] if kinds else (NodeKind.ENTRY if i in entry_ids else NodeKind.INTERNAL)
        nodes.append(make_node(i, kind))
    return CallGraph(nodes, edges, GraphMeta(sample_id, "", label, tuple(entry_ids)))


def random_graph(rng, n_nodes, edge_prob=0.25, sample_id="r", label=None, n_entries=1):
    """Random valid graph: entries first, then internals/imports, random features."""
    nodes = []
    for i in range(n_nodes):
        if i < n_entries:
            kind = NodeKind.ENTRY
        elif rng.random() < 0.25:
            kind = NodeKind.IMPORT
        else:
            kind = NodeKind.INTERNAL
        feats = [KIND_CODE[kind]] + [float(rng.integers(0, 500)) for _ in range(11)]
        feats[3] = float(rng.integers(0, 2))
        nodes.append(FunctionNode(i, kind, tuple(feats)))
    edges = [
        (a, b)
        for a in range(n_nodes)
        for b in range(n_nodes)
        if rng.random() < edge_prob
    ]
    meta = GraphMeta(sample_id, "", label, tuple(range(n_entries)))
    return CallGraph(nodes, edges, meta)


@pytest.fixture(scope="session")
def tiny_config():
    """Small network for fast unit tests; all invariants identical."""
    return GmnConfig(node_hidden_dim=8, message_dim=12, propagation_rounds=2, epochs=4, batch_pairs=8, seed=9)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    rng = np.random.default_rng(17)
    graphs = [random_graph(rng, int(rng.integers(2, 7)), sample_id=f"t{i}") for i in range(6)]
    stubs = [extract_stub(g) for g in graphs]
    stats = compute_feature_stats(stubs)
    params = GmnParams.initialize(tiny_config)
    return params, stats, stubs


@pytest.fixture(scope="session")
def small_corpus():
    """3 synthetic families, 6 train + 4 test samples each."""
    specs = family_library(3, seed=2, noise=0.08)
    return specs, synthetic_corpus(specs, 6), synthetic_corpus(specs, 4, offset=6)


@pytest.fixture(scope="session")
def small_registry(small_corpus):
    """Trained on the small corpus with a reduced schedule; shared across
    registry/identify/cli tests to keep the suite quick."""
    _, train_set, _ = small_corpus
    return configure(train_set, GmnConfig(seed=1, epochs=12))


@pytest.fixture(scope="session")
def flat_corpus():
    """Zero-variance corpus: every family's samples are identical graphs."""
    specs = [
        s.__class__(s.packer_name, s.template, s.perturbation.__class__(0.0, 0.0, 0.0), s.seed)
        for s in family_library(3, seed=8)
    ]
    return specs, synthetic_corpus(specs, 4), synthetic_corpus(specs, 2, offset=4)


@pytest.fixture(scope="session")
def flat_registry(flat_corpus):
    _, train_set, _ = flat_corpus
    return configure(train_set, GmnConfig(seed=4, epochs=10))
