"""Persistent store binding graphs, clusters, model weights and stats.

On-disk layout (one directory per registry)::

    manifest.json   format version, content hashes, packers -> clusters
    model.bin       weight blob with embedded config header (see gmn.params)
    stats.json      feature normalization statistics
    graphs/<sha256>.cg.json   stub graphs, content addressed
    audit.log       one JSON record per configure/integrate event

Saves go through a temp directory plus rename, so a crash never leaves a
partially written registry behind.  Audit records deliberately carry no
wall-clock timestamps: equal inputs must produce byte-identical
registries.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from typing import Sequence

from .callgraph import CallGraph, FeatureStats, compute_feature_stats, graph_digest, parse_graph, serialize_graph
from .cluster import Cluster, ClusterOptions, cluster_packer
from .errors import RegistryCorruptionError, RegistryError, TrainingError
from .gmn import FINE_TUNE_EPOCHS, GmnConfig, GmnParams, fine_tune, train
from .stub import StubGraph, extract_stub

__all__ = ["Registry", "configure", "integrate", "load", "save"]

FORMAT_VERSION = 1
OLD_SAMPLE_PER_PACKER = 20  # cap on per-packer old graphs mixed into fine-tuning


def _canonical_json(data: object) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class Registry:
    params: GmnParams
    stats: FeatureStats
    graphs: dict[str, StubGraph]  # digest -> stub graph
    packers: dict[str, list[Cluster]]
    cluster_options: ClusterOptions
    audit: list[dict] = field(default_factory=list)
    _flat_thresholds: dict[str, float] | None = None

    def __post_init__(self) -> None:
        for packer, clusters in self.packers.items():
            for cluster in clusters:
                if cluster.packer != packer:
                    raise RegistryError(f"cluster filed under {packer!r} is labeled {cluster.packer!r}")
                for digest in cluster.member_ids:
                    if digest not in self.graphs:
                        raise RegistryError(f"cluster member {digest} is not stored")
                    stored = self.graphs[digest].meta.packer_label
                    if stored != packer:
                        raise RegistryError(
                            f"graph {digest} labeled {stored!r} but clustered under {packer!r}"
                        )
                if cluster.medoid_id not in self.graphs:
                    raise RegistryError(f"medoid {cluster.medoid_id} is not stored")

    @property
    def n_clusters(self) -> int:
        return sum(len(c) for c in self.packers.values())

    @property
    def n_graphs(self) -> int:
        return len(self.graphs)

    def packer_graphs(self, packer: str) -> list[StubGraph]:
        """Stored graphs of one packer in deterministic (digest) order."""
        return [
            self.graphs[d]
            for d in sorted(self.graphs)
            if self.graphs[d].meta.packer_label == packer
        ]

    def iter_clusters(self) -> list[tuple[str, int, Cluster]]:
        """(packer, index, cluster) triples in deterministic order."""
        out = []
        for packer in sorted(self.packers):
            for idx, cluster in enumerate(self.packers[packer]):
                out.append((packer, idx, cluster))
        return out


def _cluster_to_manifest(cluster: Cluster) -> dict:
    return {
        "members": sorted(cluster.member_ids),
        "medoid": cluster.medoid_id,
        "threshold": cluster.threshold,
        "low_confidence": cluster.low_confidence,
    }


def _cluster_from_manifest(packer: str, rec: dict) -> Cluster:
    return Cluster(
        packer=packer,
        member_ids=tuple(rec["members"]),
        medoid_id=rec["medoid"],
        threshold=rec["threshold"],
        low_confidence=rec.get("low_confidence", False),
    )


def save(registry: Registry, path: str) -> None:
    """Atomically persist: write a temp sibling, then swap directories."""
    parent = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = f"{path}.tmp-{os.getpid()}"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    try:
        os.makedirs(os.path.join(tmp, "graphs"))
        model_bytes = registry.params.to_bytes()
        with open(os.path.join(tmp, "model.bin"), "wb") as fh:
            fh.write(model_bytes)
        stats_text = _canonical_json(
            {
                "mean": list(registry.stats.mean),
                "std": list(registry.stats.std),
                "computed_over": registry.stats.computed_over,
            }
        )
        with open(os.path.join(tmp, "stats.json"), "w") as fh:
            fh.write(stats_text)
        for digest, graph in sorted(registry.graphs.items()):
            with open(os.path.join(tmp, "graphs", f"{digest}.cg.json"), "w") as fh:
                fh.write(serialize_graph(graph))
        manifest = {
            "format_version": FORMAT_VERSION,
            "model_hash": hashlib.sha256(model_bytes).hexdigest(),
            "stats_hash": _sha256_text(stats_text),
            "graphs": sorted(registry.graphs),
            "clustering": {
                "k_max": registry.cluster_options.k_max,
                "s_min": registry.cluster_options.s_min,
                "singleton_threshold": registry.cluster_options.singleton_threshold,
            },
            "packers": {
                packer: [_cluster_to_manifest(c) for c in clusters]
                for packer, clusters in sorted(registry.packers.items())
            },
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            fh.write(_canonical_json(manifest))
        with open(os.path.join(tmp, "audit.log"), "w") as fh:
            for event in registry.audit:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        if os.path.exists(path):
            old = f"{path}.old-{os.getpid()}"
            os.rename(path, old)
            os.rename(tmp, path)
            shutil.rmtree(old)
        else:
            os.rename(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            shutil.rmtree(tmp)
        raise


def load(path: str) -> Registry:
    """Load and verify a registry; content hashes are checked."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise RegistryError(f"{path}: not a registry (missing manifest.json)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise RegistryError(f"registry format version {version} needs migration (expected {FORMAT_VERSION})")

    with open(os.path.join(path, "model.bin"), "rb") as fh:
        model_bytes = fh.read()
    if hashlib.sha256(model_bytes).hexdigest() != manifest["model_hash"]:
        raise RegistryCorruptionError("model.bin does not match its recorded hash")
    params = GmnParams.from_bytes(model_bytes)

    with open(os.path.join(path, "stats.json")) as fh:
        stats_text = fh.read()
    if _sha256_text(stats_text) != manifest["stats_hash"]:
        raise RegistryCorruptionError("stats.json does not match its recorded hash")
    stats_raw = json.loads(stats_text)
    stats = FeatureStats(tuple(stats_raw["mean"]), tuple(stats_raw["std"]), stats_raw["computed_over"])

    graphs: dict[str, StubGraph] = {}
    for digest in manifest["graphs"]:
        graph_path = os.path.join(path, "graphs", f"{digest}.cg.json")
        if not os.path.isfile(graph_path):
            raise RegistryCorruptionError(f"graph {digest} is missing from the store")
        with open(graph_path) as fh:
            text = fh.read()
        graph = parse_graph(text)
        if not isinstance(graph, StubGraph):
            raise RegistryError(f"graph {digest} is not a stub graph")
        if graph_digest(graph) != digest:
            raise RegistryCorruptionError(f"graph {digest} content does not match its address")
        graphs[digest] = graph

    clustering = manifest.get("clustering", {})
    options = ClusterOptions(
        k_max=clustering.get("k_max", 10),
        s_min=clustering.get("s_min", 0.25),
        singleton_threshold=clustering.get("singleton_threshold", 0.9),
    )
    packers = {
        packer: [_cluster_from_manifest(packer, rec) for rec in records]
        for packer, records in manifest["packers"].items()
    }
    audit: list[dict] = []
    audit_path = os.path.join(path, "audit.log")
    if os.path.isfile(audit_path):
        with open(audit_path) as fh:
            audit = [json.loads(line) for line in fh if line.strip()]
    return Registry(params, stats, graphs, packers, options, audit)


def _labeled_stubs(dataset: Sequence[CallGraph]) -> dict[str, list[StubGraph]]:
    by_packer: dict[str, list[StubGraph]] = {}
    for graph in dataset:
        label = graph.meta.packer_label
        if label is None:
            raise TrainingError(f"{graph.meta.sample_id}: graph has no packer label")
        stub = graph if isinstance(graph, StubGraph) else extract_stub(graph)
        by_packer.setdefault(label, []).append(stub)
    return dict(sorted(by_packer.items()))


def configure(
    dataset: Sequence[CallGraph],
    config: GmnConfig,
    out_path: str | None = None,
    cluster_options: ClusterOptions = ClusterOptions(),
) -> Registry:
    """Full configuration: extract stubs, compute stats, train the network,
    cluster every packer, persist."""
    by_packer = _labeled_stubs(dataset)
    if len(by_packer) < 2:
        raise TrainingError("configuration needs at least two packers")
    all_stubs = [g for group in by_packer.values() for g in group]
    stats = compute_feature_stats(all_stubs)
    result = train(all_stubs, config, stats)
    params = result.params

    graphs: dict[str, StubGraph] = {}
    packers: dict[str, list[Cluster]] = {}
    for packer, stubs in by_packer.items():
        for stub in stubs:
            graphs[graph_digest(stub)] = stub
        packers[packer] = cluster_packer(stubs, params, stats, cluster_options)

    audit_event = {
        "event": "configure",
        "packers": sorted(by_packer),
        "graphs": len(all_stubs),
        "seed": config.seed,
        "epochs": config.epochs,
        "final_loss": result.epoch_losses[-1] if result.epoch_losses else None,
    }
    registry = Registry(params, stats, graphs, packers, cluster_options, [audit_event])
    if out_path is not None:
        save(registry, out_path)
    return registry


def integrate(
    registry: Registry,
    new_graphs: Sequence[CallGraph],
    fine_tune_model: bool = False,
    config: GmnConfig | None = None,
    epochs: int = FINE_TUNE_EPOCHS,
) -> Registry:
    """Add one packer's graphs to an existing registry.

    Without fine-tuning the model and every existing cluster are carried
    over untouched; only the incoming packer is (re)clustered.  With
    fine-tuning the model is updated on new pairs mixed with a capped
    sample of old graphs, and all packers are reclustered because every
    embedding moved.
    """
    if not new_graphs:
        raise RegistryError("integrate needs at least one new graph")
    labels = {g.meta.packer_label for g in new_graphs}
    if len(labels) != 1 or None in labels:
        raise RegistryError("new graphs must share a single, present packer label")
    label = next(iter(labels))
    new_stubs = [g if isinstance(g, StubGraph) else extract_stub(g) for g in new_graphs]

    graphs = dict(registry.graphs)
    for stub in new_stubs:
        graphs[graph_digest(stub)] = stub

    stats = registry.stats  # frozen at configuration time
    if fine_tune_model:
        old_sample: list[StubGraph] = []
        for packer in sorted(registry.packers):
            old_sample.extend(registry.packer_graphs(packer)[:OLD_SAMPLE_PER_PACKER])
        cfg = config if config is not None else registry.params.config
        result = fine_tune(registry.params, new_stubs, old_sample, cfg, stats, epochs)
        params = result.params
        packers = {}
        by_packer: dict[str, list[StubGraph]] = {}
        for digest in sorted(graphs):
            stub = graphs[digest]
            by_packer.setdefault(stub.meta.packer_label, []).append(stub)
        for packer, stubs in sorted(by_packer.items()):
            packers[packer] = cluster_packer(stubs, params, stats, registry.cluster_options)
    else:
        params = registry.params
        packers = {p: list(cs) for p, cs in registry.packers.items()}
        own = [g for g in registry.packer_graphs(label)] + new_stubs if label in packers else new_stubs
        # dedupe while keeping deterministic order
        seen: set[str] = set()
        member_stubs: list[StubGraph] = []
        for stub in own:
            d = graph_digest(stub)
            if d not in seen:
                seen.add(d)
                member_stubs.append(stub)
        packers[label] = cluster_packer(member_stubs, params, stats, registry.cluster_options)

    audit = list(registry.audit)
    audit.append(
        {
            "event": "integrate",
            "packer": label,
            "new_samples": len(new_stubs),
            "fine_tune": fine_tune_model,
            "integration_cost": len(new_stubs),
        }
    )
    return Registry(params, stats, graphs, packers, registry.cluster_options, audit)
