import itertools

import numpy as np
import pytest

from stubmatch.callgraph import compute_feature_stats, graph_digest
from stubmatch.cluster import (
    Cluster,
    ClusterOptions,
    build_distance_matrix,
    cluster_packer,
    cut_dendrogram,
    medoid,
    silhouette_score,
    single_linkage_dendrogram,
)
from stubmatch.errors import ClusteringError
from stubmatch.gmn import GmnConfig, GmnParams
from stubmatch.metrics import FamilySpec, Perturbation, generate_family
from stubmatch.stub import extract_stub

from conftest import random_graph


def reference_single_linkage_heights(d):
    """Quadratic oracle: recompute cluster-to-cluster minima from scratch
    at every step; returns the sorted merge heights."""
    clusters = [{i} for i in range(d.shape[0])]
    heights = []
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                h = min(d[a, b] for a in clusters[i] for b in clusters[j])
                if best is None or h < best[0]:
                    best = (h, i, j)
        h, i, j = best
        heights.append(h)
        merged = clusters[i] | clusters[j]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)] + [merged]
    return sorted(heights)


def identical_stub_family(n, label="pk"):
    spec = FamilySpec(label, _template(), Perturbation(0, 0, 0), seed=1)
    return [extract_stub(g) for g in generate_family(spec, n)]


def _template():
    from stubmatch.metrics import family_library

    return family_library(1, seed=3)[0].template


@pytest.fixture(scope="module")
def model():
    cfg = GmnConfig(node_hidden_dim=8, message_dim=12, propagation_rounds=2, seed=2)
    stubs = identical_stub_family(4)
    stats = compute_feature_stats(stubs)
    return GmnParams.initialize(cfg), stats


# -- distance matrix ---------------------------------------------------------


def test_identical_graphs_zero_distances(model):
    params, stats = model
    stubs = identical_stub_family(4)
    d = build_distance_matrix(stubs, params, stats)
    off = d[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) < 1e-9)
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0.0)


def test_distance_matrix_matches_recomputation(model):
    from stubmatch.cluster import pair_similarity

    params, stats = model
    rng = np.random.default_rng(5)
    stubs = [extract_stub(random_graph(rng, int(rng.integers(2, 6)), sample_id=f"m{i}", label="pk"))
             for i in range(5)]
    d = build_distance_matrix(stubs, params, stats)
    for i in range(5):
        for j in range(5):
            expected = 0.0 if i == j else 1.0 - pair_similarity(stubs[i], stubs[j], params, stats)
            assert d[i, j] == pytest.approx(expected, abs=1e-12)


def test_distance_matrix_single_graph(model):
    params, stats = model
    d = build_distance_matrix(identical_stub_family(1), params, stats)
    assert d.shape == (1, 1) and d[0, 0] == 0.0


def test_distance_matrix_rejects_mixed_packers(model):
    params, stats = model
    a = identical_stub_family(1, label="a")
    b = identical_stub_family(1, label="b")
    with pytest.raises(ClusteringError, match="mixes packers"):
        build_distance_matrix(a + b, params, stats)


# -- single linkage ----------------------------------------------------------


def test_single_linkage_hand_trace():
    d = np.array([[0.0, 0.1, 0.5], [0.1, 0.0, 0.6], [0.5, 0.6, 0.0]])
    merges = single_linkage_dendrogram(d)
    assert merges[0].left == 0 and merges[0].right == 1
    assert merges[0].height == pytest.approx(0.1)
    assert merges[1].height == pytest.approx(0.5)


def test_single_linkage_all_zero():
    d = np.zeros((4, 4))
    merges = single_linkage_dendrogram(d)
    assert all(m.height == 0.0 for m in merges)


def test_single_linkage_heights_non_decreasing_and_match_reference():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        x = rng.random((n, n))
        d = (x + x.T) / 2
        np.fill_diagonal(d, 0.0)
        merges = single_linkage_dendrogram(d)
        heights = [m.height for m in merges]
        assert all(a <= b + 1e-15 for a, b in zip(heights, heights[1:]))
        assert np.allclose(sorted(heights), reference_single_linkage_heights(d), atol=1e-12)


def test_cut_consistency_refinement():
    # the k-cluster cut must be exactly the k+1 cut with one more merge applied
    rng = np.random.default_rng(7)
    n = 9
    x = rng.random((n, n))
    d = (x + x.T) / 2
    np.fill_diagonal(d, 0.0)
    merges = single_linkage_dendrogram(d)
    for k in range(2, n):
        fine = cut_dendrogram(merges, n, k + 1)
        coarse = cut_dendrogram(merges, n, k)
        # every fine cluster maps into exactly one coarse cluster
        mapping = {}
        for i in range(n):
            if fine[i] in mapping:
                assert mapping[fine[i]] == coarse[i]
            else:
                mapping[fine[i]] = coarse[i]


# -- silhouette --------------------------------------------------------------


def test_silhouette_two_tight_far_pairs():
    d = np.array(
        [
            [0.0, 0.02, 1.0, 1.1],
            [0.02, 0.0, 1.05, 1.0],
            [1.0, 1.05, 0.0, 0.03],
            [1.1, 1.0, 0.03, 0.0],
        ]
    )
    labels = [0, 0, 1, 1]
    score = silhouette_score(d, labels)
    assert score > 0.9
    # direct formula evaluation
    expected = 0.0
    for i in range(4):
        own = [j for j in range(4) if labels[j] == labels[i] and j != i]
        other = [j for j in range(4) if labels[j] != labels[i]]
        a = float(np.mean([d[i, j] for j in own]))
        b = float(np.mean([d[i, j] for j in other]))
        expected += (b - a) / max(a, b)
    assert score == pytest.approx(expected / 4, abs=1e-12)


def test_silhouette_correct_assignment_beats_all_others():
    d = np.array(
        [
            [0.0, 0.02, 1.0, 1.1],
            [0.02, 0.0, 1.05, 1.0],
            [1.0, 1.05, 0.0, 0.03],
            [1.1, 1.0, 0.03, 0.0],
        ]
    )
    best = silhouette_score(d, [0, 0, 1, 1])
    for assignment in itertools.product([0, 1], repeat=4):
        if len(set(assignment)) < 2 or list(assignment) == [0, 0, 1, 1] or list(assignment) == [1, 1, 0, 0]:
            continue
        assert silhouette_score(d, list(assignment)) < best


def test_silhouette_equidistant_point_contributes_zero():
    d = np.array(
        [
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
        ]
    )
    # point 2 is a singleton: contributes 0; points 0,1 have a == b == 0.5
    assert silhouette_score(d, [0, 0, 1]) == pytest.approx(0.0)


def test_silhouette_errors():
    d = np.zeros((3, 3))
    with pytest.raises(ClusteringError, match="single cluster"):
        silhouette_score(d, [0, 0, 0])
    with pytest.raises(ClusteringError, match="three points"):
        silhouette_score(np.zeros((2, 2)), [0, 1])


# -- medoid ------------------------------------------------------------------


def test_medoid_single_member():
    assert medoid(np.zeros((3, 3)), [2]) == 2


def test_medoid_middle_point():
    d = np.array([[0.0, 0.1, 0.9], [0.1, 0.0, 0.1], [0.9, 0.1, 0.0]])
    assert medoid(d, [0, 1, 2]) == 1


def test_medoid_matches_exhaustive_argmin():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n = 10
        x = rng.random((n, n))
        d = (x + x.T) / 2
        np.fill_diagonal(d, 0.0)
        members = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
        best = min(members, key=lambda m: (sum(d[m, o] for o in members), m))
        assert medoid(d, members) == best


# -- cluster_packer ----------------------------------------------------------


def test_identical_graphs_single_cluster_threshold_one(model):
    params, stats = model
    stubs = identical_stub_family(12)
    clusters = cluster_packer(stubs, params, stats)
    assert len(clusters) == 1
    assert clusters[0].threshold == pytest.approx(1.0, abs=1e-9)
    assert not clusters[0].low_confidence


def test_two_subfamilies_split_by_template(model):
    params, stats = model
    stubs = identical_stub_family(8)
    # inject a similarity with two clean blocks: first half vs second half
    def sim(a, b):
        ia = int(a.meta.sample_id.rsplit("-", 1)[1])
        ib = int(b.meta.sample_id.rsplit("-", 1)[1])
        return 0.97 if (ia < 4) == (ib < 4) else -0.4

    clusters = cluster_packer(stubs, params, stats, similarity=sim)
    assert sorted(len(c.member_ids) for c in clusters) == [4, 4]
    digests = [graph_digest(s) for s in stubs]
    first = {digests[i] for i in range(4)}
    groups = [set(c.member_ids) for c in clusters]
    assert first in groups


def test_outlier_singleton_merged_and_threshold_lowered(model):
    params, stats = model
    stubs = identical_stub_family(10)

    def sim(a, b):
        ia = int(a.meta.sample_id.rsplit("-", 1)[1])
        ib = int(b.meta.sample_id.rsplit("-", 1)[1])
        if ia == 9 or ib == 9:
            return 0.2  # the outlier
        return 0.98

    clusters = cluster_packer(stubs, params, stats, similarity=sim)
    assert len(clusters) == 1
    assert len(clusters[0].member_ids) == 10
    # versus the 9-member core alone
    core = cluster_packer(stubs[:9], params, stats, similarity=lambda a, b: 0.98)
    assert clusters[0].threshold < core[0].threshold


def test_single_graph_packer_low_confidence_fallback(model):
    params, stats = model
    clusters = cluster_packer(identical_stub_family(1), params, stats)
    assert len(clusters) == 1
    assert clusters[0].low_confidence
    assert clusters[0].threshold == pytest.approx(0.9)


def test_cluster_packer_partition_and_unicity(model):
    params, stats = model
    stubs = identical_stub_family(8)

    def sim(a, b):
        ia = int(a.meta.sample_id.rsplit("-", 1)[1])
        ib = int(b.meta.sample_id.rsplit("-", 1)[1])
        return 0.95 if (ia % 2) == (ib % 2) else -0.5

    clusters = cluster_packer(stubs, params, stats, similarity=sim)
    all_members = [d for c in clusters for d in c.member_ids]
    assert len(all_members) == len(set(all_members)) == 8  # disjoint + covering
    assert all(c.packer == "pk" for c in clusters)
    for c in clusters:
        assert c.medoid_id in c.member_ids


def test_cluster_packer_deterministic(model):
    params, stats = model
    stubs = identical_stub_family(7)
    a = cluster_packer(stubs, params, stats)
    b = cluster_packer(stubs, params, stats)
    assert a == b


def test_threshold_below_mean_similarity(model):
    params, stats = model
    stubs = identical_stub_family(6)
    rng = np.random.default_rng(3)
    table = {}

    def sim(a, b):
        key = tuple(sorted((a.meta.sample_id, b.meta.sample_id)))
        if key not in table:
            table[key] = float(rng.uniform(0.7, 0.99))
        return table[key]

    clusters = cluster_packer(stubs, params, stats, similarity=sim)
    for c in clusters:
        if len(c.member_ids) < 2:
            continue
        sims = [
            sim(a, b)
            for i, a in enumerate(stubs)
            for j, b in enumerate(stubs)
            if i < j
            and graph_digest(a) in c.member_ids
            and graph_digest(b) in c.member_ids
        ]
        assert c.threshold <= np.mean(sims) + 1e-12


def test_cluster_validation():
    with pytest.raises(ClusteringError):
        Cluster("p", (), "x", 0.5)
    with pytest.raises(ClusteringError):
        Cluster("p", ("a",), "b", 0.5)
