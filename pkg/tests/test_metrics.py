import numpy as np
import pytest

from stubmatch.callgraph import serialize_graph
from stubmatch.errors import StubmatchError
from stubmatch.identification import UNKNOWN, IdentificationResult
from stubmatch.metrics import (
    EXTERNAL,
    ConfusionTable,
    FamilySpec,
    MODE_INCREMENTAL,
    MODE_RETRAIN,
    PackerCounts,
    Perturbation,
    confusion_table,
    evaluate,
    family_library,
    generate_family,
    integration_cost,
    synthetic_corpus,
)


def result(verdict, calls=10, sample_id="s"):
    return IdentificationResult(sample_id, verdict, 0.5 if verdict != UNKNOWN else 0.0, {}, (), calls, "entry_component")


# -- generator ----------------------------------------------------------------


def test_zero_perturbation_yields_identical_graphs():
    spec = family_library(1, seed=4)[0]
    frozen = FamilySpec(spec.packer_name, spec.template, Perturbation(0, 0, 0), seed=9)
    graphs = generate_family(frozen, 5)
    bodies = set()
    for g in graphs:
        text = serialize_graph(g)
        bodies.add(text[text.index('"nodes"') :])  # meta differs by sample_id only
    assert len(bodies) == 1


def test_generator_deterministic_per_seed():
    spec = family_library(2, seed=4, noise=0.1)[1]
    a = [serialize_graph(g) for g in generate_family(spec, 6)]
    b = [serialize_graph(g) for g in generate_family(spec, 6)]
    assert a == b


def test_generator_labels_and_validity():
    spec = family_library(3, seed=7, noise=0.1)[2]
    for g in generate_family(spec, 8):
        assert g.meta.packer_label == spec.packer_name
        assert g.meta.entry_ids == (0,)
        for node in g.nodes:
            assert len(node.features) == 12


def test_generator_offset_split_is_disjoint_and_consistent():
    specs = family_library(2, seed=3, noise=0.1)
    train = synthetic_corpus(specs, 4)
    test = synthetic_corpus(specs, 3, offset=4)
    train_ids = {g.meta.sample_id for g in train}
    test_ids = {g.meta.sample_id for g in test}
    assert not train_ids & test_ids
    # offset stream equals the tail of the longer stream
    full = generate_family(specs[0], 7)
    again = [g for g in test if g.meta.packer_label == specs[0].packer_name]
    assert [serialize_graph(g) for g in full[4:]] == [serialize_graph(g) for g in again]


def test_two_disjoint_families_nearest_neighbor_separable():
    specs = family_library(2, seed=5, noise=0.08)
    corpus = synthetic_corpus(specs, 10)
    rows = []
    labels = []
    for g in corpus:
        feats = g.feature_matrix()
        rows.append(np.array([feats.mean(0), feats.max(0)]).ravel())
        labels.append(g.meta.packer_label)
    rows = np.array(rows)
    correct = 0
    for i in range(len(rows)):
        dists = np.linalg.norm(rows - rows[i], axis=1)
        dists[i] = np.inf
        correct += labels[int(np.argmin(dists))] == labels[i]
    assert correct == len(rows)  # brute-force 1-NN on raw features is perfect


def test_perturbation_bounds_validated():
    with pytest.raises(StubmatchError):
        Perturbation(node_add_prob=1.5)
    with pytest.raises(StubmatchError):
        Perturbation(feature_noise_scale=-0.1)


def test_generate_family_requires_positive_n():
    spec = family_library(1, seed=4)[0]
    with pytest.raises(StubmatchError):
        generate_family(spec, 0)


# -- evaluation ----------------------------------------------------------------


def test_all_correct_metrics():
    truth = ["a", "a", "b", "b", "c"]
    results = [result(t) for t in truth]
    report = evaluate(results, truth)
    assert report.macro.precision == 1.0
    assert report.macro.recall == 1.0
    assert report.macro.f1 == 1.0
    assert report.macro.accuracy == 1.0
    assert report.macro.fpr == 0.0
    assert report.unknown_rate == 0.0


def test_hand_built_confusion_matches_hand_computed_metrics():
    truth = ["a"] * 4 + ["b"] * 4 + ["c"] * 2
    verdicts = ["a", "a", "b", UNKNOWN, "b", "b", "b", "a", "c", "b"]
    report = evaluate([result(v) for v in verdicts], truth)
    # packer a: TP=2, FN=2 (one to b, one unknown), FP=1 (from b)
    a = report.per_packer["a"]
    assert a.precision == pytest.approx(2 / 3)
    assert a.recall == pytest.approx(0.5)
    assert a.f1 == pytest.approx(2 * (2 / 3) * 0.5 / ((2 / 3) + 0.5))
    assert a.accuracy == pytest.approx((2 + 5) / 10)
    assert a.fpr == pytest.approx(1 / 6)
    assert a.unknown_rate == pytest.approx(1 / 4)
    # packer b: TP=3, FN=1, FP=2 (one from a, one from c)
    b = report.per_packer["b"]
    assert b.precision == pytest.approx(3 / 5)
    assert b.recall == pytest.approx(3 / 4)
    assert b.fpr == pytest.approx(2 / 6)
    # macro is the arithmetic mean
    per = report.per_packer
    assert report.macro.f1 == pytest.approx(sum(m.f1 for m in per.values()) / 3)
    assert report.unknown_rate == pytest.approx(1 / 10)


def test_all_unknown():
    truth = ["a", "b"]
    report = evaluate([result(UNKNOWN), result(UNKNOWN)], truth)
    assert report.unknown_rate == 1.0
    assert report.macro.recall == 0.0


def test_external_samples_count_as_negatives():
    truth = ["a", EXTERNAL, EXTERNAL]
    report = evaluate([result("a"), result("a"), result(UNKNOWN)], truth)
    assert list(report.per_packer) == ["a"]
    m = report.per_packer["a"]
    assert m.recall == 1.0
    assert m.fpr == pytest.approx(0.5)  # one of two external samples claimed


def test_length_mismatch_rejected():
    with pytest.raises(StubmatchError, match="truth"):
        evaluate([result("a")], ["a", "b"])


def test_confusion_table_accounting_invariant():
    truth = ["a", "a", "b"]
    table = confusion_table(["a", UNKNOWN, "b"], truth)
    for counts in table.per_packer.values():
        assert counts.tp + counts.fp + counts.fn + counts.tn == table.total
    with pytest.raises(StubmatchError):
        ConfusionTable({"a": PackerCounts(1, 1, 1, 1, 0)}, 3)


def test_inference_call_statistics():
    truth = ["a", "a"]
    report = evaluate([result("a", calls=10), result("a", calls=20)], truth)
    assert report.inference_calls_mean == pytest.approx(15.0)
    assert report.inference_calls_std == pytest.approx(5.0)


# -- integration cost ----------------------------------------------------------


def test_integration_cost_formulas():
    assert integration_cost(0, 10, 40, MODE_INCREMENTAL) == 400
    assert integration_cost(1000, 10, 40, MODE_INCREMENTAL) == 400  # constant in n
    assert integration_cost(90, 10, 40, MODE_RETRAIN) == 4000
    assert integration_cost(0, 0, 100, MODE_RETRAIN) == 0
    with pytest.raises(StubmatchError):
        integration_cost(-1, 0, 0, MODE_RETRAIN)
    with pytest.raises(StubmatchError):
        integration_cost(1, 1, 1, "other")


def test_bench_rows_reproducible_bit_for_bit():
    from stubmatch.gmn import GmnConfig
    from stubmatch.metrics import bench_scalability

    config = GmnConfig(seed=4, epochs=2)
    a = bench_scalability([3], mode="clustered", n_families=2, test_per_family=2, config=config, seed=1)
    b = bench_scalability([3], mode="clustered", n_families=2, test_per_family=2, config=config, seed=1)
    assert a == b
    flat = bench_scalability([3], mode="flat", n_families=2, test_per_family=2, config=config, seed=1)
    assert flat[0].measured_mean == 6.0 and flat[0].measured_std == 0.0
