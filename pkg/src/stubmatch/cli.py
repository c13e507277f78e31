"""Command-line surface.

Subcommands mirror the pipeline stages: ``stub`` filters one graph,
``configure`` builds a registry from a labeled dataset, ``identify``
matches inputs against a registry, ``integrate`` adds a packer,
``eval``/``bench`` run the measurement harnesses, ``clusters`` inspects a
registry.

Exit codes: 0 success, 2 input problem (unreadable/malformed files, bad
registry), 3 computation problem (training divergence, numeric errors).
Data goes to stdout or ``--out``; logs go to stderr.

An optional ``stubmatch.toml`` in the working directory supplies defaults
as flat ``key = value`` lines (ints, floats, true/false, bare strings; no
sections).  Command-line flags win over file values.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from typing import Sequence

from .callgraph import CallGraph, GraphMeta, parse_graph, serialize_graph
from .cluster import ClusterOptions
from .errors import (
    ClusteringError,
    GraphIntegrityError,
    GraphParseError,
    IdentificationError,
    NumericError,
    RegistryError,
    StubmatchError,
    TrainingError,
)
from .gmn import GmnConfig
from .identification import IdentificationResult, IdentifyOptions, identify_batch
from .metrics import bench_scalability, evaluate
from .registry import configure, integrate, load, save
from .stub import extract_stub

log = logging.getLogger("stubmatch")

CONFIG_FILE = "stubmatch.toml"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COMPUTE = 3

_INPUT_ERRORS = (
    GraphParseError,
    GraphIntegrityError,
    RegistryError,
    IdentificationError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
    PermissionError,
)
_COMPUTE_ERRORS = (TrainingError, NumericError, ClusteringError)


def _parse_config_file(path: str) -> dict[str, object]:
    values: dict[str, object] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GraphParseError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip().strip('"')
            if value.lower() in ("true", "false"):
                values[key] = value.lower() == "true"
            else:
                try:
                    values[key] = int(value)
                except ValueError:
                    try:
                        values[key] = float(value)
                    except ValueError:
                        values[key] = value
    return values


_GMN_KEYS = (
    "node_hidden_dim",
    "message_dim",
    "propagation_rounds",
    "margin",
    "learning_rate",
    "epochs",
    "batch_pairs",
    "seed",
    "loss_form",
)
_CLUSTER_KEYS = ("k_max", "s_min", "singleton_threshold")


def _merged_settings(args: argparse.Namespace) -> dict[str, object]:
    """Config-file values with explicit flags layered on top (flags win)."""
    settings: dict[str, object] = {}
    path = getattr(args, "config", None) or (CONFIG_FILE if os.path.isfile(CONFIG_FILE) else None)
    if path:
        settings.update(_parse_config_file(path))
        known = set(_GMN_KEYS) | set(_CLUSTER_KEYS) | {"unknown_on_zero_score", "jobs", "format"}
        unknown = set(settings) - known
        if unknown:
            raise GraphParseError(f"{path}: unknown keys {sorted(unknown)}")
    for key in list(settings) + list(vars(args)):
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _gmn_config(settings: dict[str, object]) -> GmnConfig:
    kwargs = {k: settings[k] for k in _GMN_KEYS if k in settings}
    return GmnConfig(**kwargs)  # type: ignore[arg-type]


def _cluster_options(settings: dict[str, object]) -> ClusterOptions:
    kwargs = {k: settings[k] for k in _CLUSTER_KEYS if k in settings}
    return ClusterOptions(**kwargs)  # type: ignore[arg-type]


def _identify_options(settings: dict[str, object]) -> IdentifyOptions:
    jobs = settings.get("jobs")
    if jobs is None:
        jobs = os.cpu_count()
    return IdentifyOptions(
        unknown_on_zero_score=bool(settings.get("unknown_on_zero_score", True)),
        jobs=int(jobs),  # type: ignore[arg-type]
    )


def _read_graph(path: str) -> CallGraph:
    with open(path) as fh:
        return parse_graph(fh.read())


def _load_dataset(directory: str, manifest_path: str | None) -> list[CallGraph]:
    if not os.path.isdir(directory):
        raise NotADirectoryError(f"{directory}: not a directory")
    files = sorted(glob.glob(os.path.join(directory, "*.cg.json")))
    if not files:
        raise FileNotFoundError(f"{directory}: no .cg.json files")
    labels: dict[str, str] = {}
    default_manifest = os.path.join(directory, "manifest.json")
    if manifest_path is None and os.path.isfile(default_manifest):
        manifest_path = default_manifest
    if manifest_path:
        with open(manifest_path) as fh:
            labels = json.load(fh)
    graphs = []
    for path in files:
        g = _read_graph(path)
        label = labels.get(g.meta.sample_id, g.meta.packer_label)
        if label != g.meta.packer_label:
            meta = GraphMeta(g.meta.sample_id, g.meta.sha256, label, g.meta.entry_ids)
            g = CallGraph(g.nodes, g.edges, meta)
        graphs.append(g)
    return graphs


def _open_out(args: argparse.Namespace):
    if getattr(args, "out", None):
        return open(args.out, "w")
    return sys.stdout


def _emit_results(results: Sequence[IdentificationResult], fmt: str, out) -> None:
    if fmt == "json":
        for r in results:
            out.write(json.dumps(r.to_record(), sort_keys=True) + "\n")
    elif fmt == "csv":
        writer = csv.writer(out)
        writer.writerow(["sample_id", "verdict", "score", "inference_calls", "stub_branch", "mode"])
        for r in results:
            writer.writerow([r.sample_id, r.verdict, f"{r.score:.6f}", r.inference_calls, r.stub_branch, r.mode])
    else:  # table
        out.write(f"{'sample_id':<28} {'verdict':<22} {'score':>8} {'calls':>6}\n")
        for r in results:
            out.write(f"{r.sample_id:<28} {r.verdict:<22} {r.score:>8.4f} {r.inference_calls:>6}\n")


# --------------------------------------------------------------------------
# subcommand bodies


def _cmd_stub(args: argparse.Namespace) -> int:
    graph = _read_graph(args.input)
    stub = extract_stub(graph)
    out_path = args.out or (
        args.input[: -len(".cg.json")] + ".stub.cg.json"
        if args.input.endswith(".cg.json")
        else args.input + ".stub.cg.json"
    )
    with open(out_path, "w") as fh:
        fh.write(serialize_graph(stub))
    log.info("wrote %s (%d of %d nodes, branch %s)", out_path, len(stub), len(graph), stub.branch_taken)
    return EXIT_OK


def _cmd_configure(args: argparse.Namespace) -> int:
    settings = _merged_settings(args)
    dataset = _load_dataset(args.dataset, args.manifest)
    registry = configure(dataset, _gmn_config(settings), args.registry, _cluster_options(settings))
    print(f"registry written to {args.registry}")
    for packer in sorted(registry.packers):
        sizes = [len(c.member_ids) for c in registry.packers[packer]]
        print(f"  {packer}: {len(sizes)} cluster(s), sizes {sizes}")
    return EXIT_OK


def _cmd_identify(args: argparse.Namespace) -> int:
    settings = _merged_settings(args)
    registry = load(args.registry)
    options = _identify_options(settings)
    graphs = [_read_graph(p) for p in args.inputs]
    outcomes = identify_batch(graphs, registry, options, flat=args.flat)
    results = [r for r in outcomes if isinstance(r, IdentificationResult)]
    failures = [(g.meta.sample_id, e) for g, e in zip(graphs, outcomes) if isinstance(e, StubmatchError)]
    out = _open_out(args)
    try:
        _emit_results(results, settings.get("format", args.format), out)
    finally:
        if out is not sys.stdout:
            out.close()
    for sample_id, err in failures:
        log.error("%s: %s", sample_id, err)
    return EXIT_OK if not failures else EXIT_COMPUTE


def _cmd_integrate(args: argparse.Namespace) -> int:
    settings = _merged_settings(args)
    registry = load(args.registry)
    new_graphs = _load_dataset(args.dataset, args.manifest)
    labels = {g.meta.packer_label for g in new_graphs}
    if len(labels) != 1:
        raise RegistryError(f"integration dataset must carry one packer label, got {sorted(map(str, labels))}")
    epochs = settings.get("epochs")
    kwargs = {} if epochs is None else {"epochs": int(epochs)}
    updated = integrate(registry, new_graphs, fine_tune_model=args.fine_tune, **kwargs)
    save(updated, args.registry)
    label = next(iter(labels))
    print(
        f"integrated {len(new_graphs)} graph(s) of {label} "
        f"({'fine-tuned' if args.fine_tune else 'model untouched'}); "
        f"{updated.n_clusters} cluster(s) total"
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    settings = _merged_settings(args)
    registry = load(args.registry)
    options = _identify_options(settings)
    graphs = _load_dataset(args.dataset, args.manifest)
    truth = []
    for g in graphs:
        if g.meta.packer_label is None:
            raise GraphIntegrityError(f"{g.meta.sample_id}: evaluation needs labeled graphs")
        truth.append(g.meta.packer_label)
    outcomes = identify_batch(graphs, registry, options, flat=args.flat)
    bad = [e for e in outcomes if isinstance(e, StubmatchError)]
    if bad:
        raise bad[0]
    report = evaluate([r for r in outcomes if isinstance(r, IdentificationResult)], truth)
    out = _open_out(args)
    try:
        fmt = settings.get("format", args.format)
        if fmt == "csv":
            writer = csv.writer(out)
            writer.writerow(["packer", "precision", "recall", "f1", "accuracy", "fpr", "unknown_rate", "support"])
            for p, m in sorted(report.per_packer.items()):
                writer.writerow([p, m.precision, m.recall, m.f1, m.accuracy, m.fpr, m.unknown_rate, m.support])
            mm = report.macro
            writer.writerow(["macro", mm.precision, mm.recall, mm.f1, mm.accuracy, mm.fpr, mm.unknown_rate, mm.support])
        else:
            out.write(json.dumps(report.to_record(), sort_keys=True, indent=2) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    settings = _merged_settings(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = bench_scalability(
        sizes,
        mode=args.mode,
        n_families=args.families,
        test_per_family=args.test_per_family,
        config=_gmn_config(settings),
        seed=int(settings.get("seed", 0)),
    )
    out = _open_out(args)
    try:
        fmt = settings.get("format", args.format)
        if fmt == "json":
            for row in rows:
                out.write(json.dumps(row.to_record(), sort_keys=True) + "\n")
        elif fmt == "csv":
            writer = csv.writer(out)
            writer.writerow(["config_size", "n_clusters", "ideal_calls", "measured_mean", "measured_std", "flat_calls"])
            for row in rows:
                writer.writerow(
                    [row.config_size, row.n_clusters, row.ideal_calls, row.measured_mean, row.measured_std, row.flat_calls]
                )
        else:
            out.write(f"{'size':>5} {'#clusters':>10} {'ideal':>8} {'measured':>18} {'no-clustering':>14}\n")
            for row in rows:
                measured = f"{row.measured_mean:.2f} ± {row.measured_std:.2f}"
                out.write(
                    f"{row.config_size:>5} {row.n_clusters:>10} {row.ideal_calls:>8.2f} {measured:>18} {row.flat_calls:>14.2f}\n"
                )
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _cmd_clusters(args: argparse.Namespace) -> int:
    registry = load(args.registry)
    for packer, index, cluster in registry.iter_clusters():
        medoid_sample = registry.graphs[cluster.medoid_id].meta.sample_id
        flag = "  (low confidence)" if cluster.low_confidence else ""
        print(
            f"{packer}[{index}]: size={len(cluster.member_ids)} "
            f"medoid={medoid_sample} t_c={cluster.threshold:.4f}{flag}"
        )
    return EXIT_OK


# --------------------------------------------------------------------------
# argument wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stubmatch", description="Packer identification from call-graph stubs")
    parser.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])
    parser.add_argument("--config", help=f"settings file (default ./{CONFIG_FILE} when present)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stub", help="filter one call graph to its unpacking stub")
    p.add_argument("input")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_stub)

    p = sub.add_parser("configure", help="build a registry from a labeled dataset directory")
    p.add_argument("dataset")
    p.add_argument("--registry", required=True)
    p.add_argument("--manifest")
    for key, kind in (
        ("epochs", int),
        ("seed", int),
        ("batch_pairs", int),
        ("node_hidden_dim", int),
        ("message_dim", int),
        ("propagation_rounds", int),
        ("margin", float),
        ("learning_rate", float),
        ("k_max", int),
        ("s_min", float),
    ):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=kind)
    p.add_argument("--loss-form", dest="loss_form", choices=["reinterpreted", "as_written"])
    p.set_defaults(func=_cmd_configure)

    p = sub.add_parser("identify", help="identify the packer of input graphs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--registry", required=True)
    p.add_argument("--flat", action="store_true", help="no-clustering baseline")
    p.add_argument("--format", default="table", choices=["json", "csv", "table"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("integrate", help="add one packer's graphs to a registry")
    p.add_argument("dataset")
    p.add_argument("--registry", required=True)
    p.add_argument("--manifest")
    p.add_argument("--fine-tune", action="store_true")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_integrate)

    p = sub.add_parser("eval", help="score a labeled test directory against a registry")
    p.add_argument("dataset")
    p.add_argument("--registry", required=True)
    p.add_argument("--manifest")
    p.add_argument("--flat", action="store_true")
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="inference-call scalability table")
    p.add_argument("--sizes", required=True, help="comma-separated samples-per-packer values")
    p.add_argument("--mode", default="clustered", choices=["clustered", "flat"])
    p.add_argument("--families", type=int, default=5)
    p.add_argument("--test-per-family", dest="test_per_family", type=int, default=10)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", default="table", choices=["json", "csv", "table"])
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("clusters", help="inspect a registry's clusters")
    p.add_argument("registry")
    p.set_defaults(func=_cmd_clusters)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level.upper(), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _COMPUTE_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_COMPUTE
    except _INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except StubmatchError as exc:
        log.error("%s", exc)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
