import csv
import hashlib
import io
import json
import os
import subprocess
import sys

import pytest

from stubmatch.callgraph import parse_graph, serialize_graph
from stubmatch.cli import main
from stubmatch.metrics import family_library, synthetic_corpus
from stubmatch.registry import load, save
from stubmatch.stub import extract_stub

from test_registry import tree_hash


def write_dataset(directory, specs, per_family, offset=0):
    os.makedirs(directory, exist_ok=True)
    graphs = synthetic_corpus(specs, per_family, offset=offset)
    for g in graphs:
        with open(os.path.join(directory, f"{g.meta.sample_id}.cg.json"), "w") as fh:
            fh.write(serialize_graph(g))
    return graphs


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory, small_registry):
    root = tmp_path_factory.mktemp("cli")
    specs = family_library(3, seed=2, noise=0.08)
    write_dataset(root / "train", specs, 6)
    write_dataset(root / "test", specs, 3, offset=6)
    reg_path = root / "registry"
    save(small_registry, str(reg_path))
    return root, specs, str(reg_path)


def test_stub_command_round_trip(cli_env, capsys):
    root, _, _ = cli_env
    inputs = sorted(os.listdir(root / "test"))
    in_path = str(root / "test" / inputs[0])
    out_path = str(root / "stub_out.cg.json")
    assert main(["stub", in_path, "-o", out_path]) == 0
    with open(out_path) as fh:
        emitted = parse_graph(fh.read())
    with open(in_path) as fh:
        direct = extract_stub(parse_graph(fh.read()))
    assert serialize_graph(emitted) == serialize_graph(direct)


def test_stub_command_missing_file_exit_2(cli_env):
    root, _, _ = cli_env
    assert main(["stub", str(root / "nope.cg.json")]) == 2


def test_configure_command_summary_and_determinism(cli_env, tmp_path, capsys):
    root, specs, _ = cli_env
    r1, r2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    assert main(["configure", str(root / "train"), "--registry", r1, "--epochs", "2", "--seed", "5"]) == 0
    out = capsys.readouterr().out
    for spec in specs:
        assert spec.packer_name in out
    assert main(["configure", str(root / "train"), "--registry", r2, "--epochs", "2", "--seed", "5"]) == 0
    assert tree_hash(r1) == tree_hash(r2)


def test_configure_command_empty_dir_exit_2(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["configure", str(empty), "--registry", str(tmp_path / "r")]) == 2


def test_identify_medoid_recovers_packer(cli_env, tmp_path, capsys):
    root, _, reg_path = cli_env
    registry = load(reg_path)
    packer, _, cluster = registry.iter_clusters()[0]
    medoid = registry.graphs[cluster.medoid_id]
    in_path = str(tmp_path / "medoid.cg.json")
    with open(in_path, "w") as fh:
        fh.write(serialize_graph(medoid))
    assert main(["identify", in_path, "--registry", reg_path, "--format", "table"]) == 0
    assert packer in capsys.readouterr().out


def test_identify_csv_has_header_and_rows(cli_env, capsys):
    root, _, reg_path = cli_env
    inputs = [str(root / "test" / n) for n in sorted(os.listdir(root / "test"))]
    assert main(["identify", *inputs, "--registry", reg_path, "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["sample_id", "verdict", "score", "inference_calls", "stub_branch", "mode"]
    assert len(rows) == len(inputs) + 1


def test_identify_flat_differs_in_call_accounting(cli_env, capsys):
    root, _, reg_path = cli_env
    registry = load(reg_path)
    inputs = [str(root / "test" / n) for n in sorted(os.listdir(root / "test"))[:2]]
    assert main(["identify", *inputs, "--registry", reg_path, "--format", "json"]) == 0
    clustered = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert main(["identify", *inputs, "--registry", reg_path, "--flat", "--format", "json"]) == 0
    flat = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    for rec in flat:
        assert rec["inference_calls"] == registry.n_graphs
    for rec in clustered:
        assert rec["inference_calls"] < registry.n_graphs


def test_identify_unreadable_registry_exit_2(cli_env, tmp_path):
    root, _, _ = cli_env
    inputs = [str(root / "test" / sorted(os.listdir(root / "test"))[0])]
    assert main(["identify", *inputs, "--registry", str(tmp_path / "missing")]) == 2


def test_integrate_preserves_old_clusters_and_audit(cli_env, tmp_path, capsys):
    root, _, reg_path = cli_env
    work = str(tmp_path / "workreg")
    save(load(reg_path), work)
    before = load(work)
    extra = family_library(4, seed=2, noise=0.08)[3]
    new_dir = tmp_path / "new"
    write_dataset(new_dir, [extra], 3)
    assert main(["integrate", str(new_dir), "--registry", work]) == 0
    after = load(work)
    for packer in before.packers:
        assert after.packers[packer] == before.packers[packer]
    assert len(after.audit) == len(before.audit) + 1
    assert extra.packer_name in after.packers


def test_eval_perfect_corpus_macro_f1(flat_registry, flat_corpus, tmp_path, capsys):
    # zero-variance corpus: every test sample equals a stored graph, so
    # identification is exact and the report must show full marks
    specs, _, _ = flat_corpus
    reg_path = str(tmp_path / "flatreg")
    save(flat_registry, reg_path)
    test_dir = tmp_path / "flattest"
    write_dataset(test_dir, specs, 2, offset=4)
    assert main(["eval", str(test_dir), "--registry", reg_path, "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["macro"]["f1"] == pytest.approx(1.0)
    assert report["unknown_rate"] == 0.0
    assert set(report) >= {"per_packer", "macro", "unknown_rate", "inference_calls_mean"}


def test_eval_csv_schema(cli_env, capsys):
    root, _, reg_path = cli_env
    assert main(["eval", str(root / "test"), "--registry", reg_path, "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["packer", "precision", "recall", "f1", "accuracy", "fpr", "unknown_rate", "support"]
    assert rows[-1][0] == "macro"


def test_bench_table_schema(capsys):
    assert main([
        "bench", "--sizes", "3", "--families", "2", "--test-per-family", "2",
        "--epochs", "2", "--format", "csv",
    ]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["config_size", "n_clusters", "ideal_calls", "measured_mean", "measured_std", "flat_calls"]
    assert len(rows) == 2
    assert float(rows[1][5]) == 6.0  # flat calls = families * size


def test_clusters_inspect_view(cli_env, capsys):
    _, specs, reg_path = cli_env
    assert main(["clusters", reg_path]) == 0
    out = capsys.readouterr().out
    assert "t_c=" in out and "medoid=" in out
    for spec in specs:
        assert spec.packer_name in out


def test_config_file_defaults_and_flag_precedence(cli_env, tmp_path, monkeypatch, capsys):
    root, _, _ = cli_env
    monkeypatch.chdir(tmp_path)
    with open("stubmatch.toml", "w") as fh:
        fh.write("# defaults\nepochs = 2\nseed = 5\ns_min = 0.8\n")
    r1 = str(tmp_path / "from_file")
    assert main(["configure", str(root / "train"), "--registry", r1]) == 0
    # flags win over the file
    r2 = str(tmp_path / "flags_win")
    assert main(["configure", str(root / "train"), "--registry", r2, "--seed", "6"]) == 0
    assert tree_hash(r1) != tree_hash(r2)
    # unknown keys are rejected
    with open("stubmatch.toml", "w") as fh:
        fh.write("unknown_knob = 1\n")
    assert main(["configure", str(root / "train"), "--registry", str(tmp_path / "r3")]) == 2


def test_console_script_installed():
    proc = subprocess.run(["stubmatch", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "identify" in proc.stdout


def test_manifest_overrides_labels(tmp_path, capsys):
    from stubmatch.callgraph import CallGraph, GraphMeta

    specs = family_library(2, seed=6, noise=0.05)
    data = tmp_path / "unlabeled"
    data.mkdir()
    labels = {}
    for g in synthetic_corpus(specs, 4):
        meta = GraphMeta(g.meta.sample_id, g.meta.sha256, None, g.meta.entry_ids)
        bare = CallGraph(g.nodes, g.edges, meta)
        with open(data / f"{g.meta.sample_id}.cg.json", "w") as fh:
            fh.write(serialize_graph(bare))
        labels[g.meta.sample_id] = g.meta.packer_label
    with open(data / "manifest.json", "w") as fh:
        json.dump(labels, fh)
    reg = str(tmp_path / "reg")
    # default manifest.json inside the dataset directory is picked up
    assert main(["configure", str(data), "--registry", reg, "--epochs", "2"]) == 0
    loaded = load(reg)
    assert sorted(loaded.packers) == sorted(s.packer_name for s in specs)
