"""Filtering a full call graph down to its statically visible unpacking stub.

Packers fragment the call graph; the bootstrap routine that restores the
original code lives in the component reachable from the entry point, or,
when the entry function is left isolated on purpose, in a separate
connected component.  Components are taken over the undirected view of
the graph.  Three cases, recorded as provenance on the output:

``entry_component``
    at least one entry point has an incident edge: keep the union of the
    components containing such entries (plus every entry node).
``second_component``
    no entry has an incident edge but the graph does have edges: keep all
    entries plus the largest component that contains no entry (ties broken
    by smallest contained node id).
``no_edges_fallback``
    the graph has no edges at all: keep the entries and every
    import-kind node.
"""

from __future__ import annotations

from collections import defaultdict

from .callgraph import (
    BRANCH_ENTRY_COMPONENT,
    BRANCH_NO_EDGES_FALLBACK,
    BRANCH_SECOND_COMPONENT,
    CallGraph,
    NodeKind,
    StubGraph,
)

__all__ = ["connected_components", "extract_stub"]


def connected_components(graph: CallGraph) -> list[list[int]]:
    """Partition of node ids into maximal undirected-connected sets.

    Components are sorted by their smallest contained id, members ascending.
    """
    adjacency: dict[int, set[int]] = defaultdict(set)
    for a, b in graph.edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    seen: set[int] = set()
    components: list[list[int]] = []
    for start in graph.node_ids():  # ascending ids => deterministic order
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        members = []
        while stack:
            cur = stack.pop()
            members.append(cur)
            for nxt in adjacency[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        components.append(sorted(members))
    components.sort(key=lambda c: c[0])
    return components


def extract_stub(graph: CallGraph) -> StubGraph:
    """Filter ``graph`` to its unpacking-stub subgraph.

    Entries are always retained; edges are the induced subset with
    directions preserved.  Deterministic: equal inputs give byte-identical
    serialized outputs.
    """
    entries = set(graph.meta.entry_ids)
    components = connected_components(graph)
    component_of: dict[int, int] = {}
    for idx, members in enumerate(components):
        for node_id in members:
            component_of[node_id] = idx

    incident: set[int] = set()
    for a, b in graph.edges:
        incident.add(a)
        incident.add(b)

    entries_with_edges = sorted(e for e in entries if e in incident)
    keep: set[int] = set(entries)
    if entries_with_edges:
        branch = BRANCH_ENTRY_COMPONENT
        for e in entries_with_edges:
            keep.update(components[component_of[e]])
    elif graph.edges:
        branch = BRANCH_SECOND_COMPONENT
        candidates = [c for c in components if not entries.intersection(c)]
        # ties on size fall back to the component with the smallest node id,
        # which is the earliest in the sorted component list
        best = max(candidates, key=lambda c: (len(c), -c[0]))
        keep.update(best)
    else:
        branch = BRANCH_NO_EDGES_FALLBACK
        keep.update(n.id for n in graph.nodes if n.kind is NodeKind.IMPORT)

    nodes = [n for n in graph.nodes if n.id in keep]
    edges = [(a, b) for a, b in graph.edges if a in keep and b in keep]
    return StubGraph(nodes, edges, graph.meta, branch)
