/**
 * Types and validation for the .cg.json interchange format consumed by
 * the identification pipeline. One graph per document; every node
 * carries exactly 12 features in a fixed order.
 */

export const N_FEATURES = 12;

export type NodeKind = "entry" | "internal" | "import";

export const KIND_CODES: Record<NodeKind, number> = {
  internal: 0,
  import: 1,
  entry: 2,
};

export interface GraphNode {
  id: number;
  kind: NodeKind;
  features: number[];
}

export interface GraphDocument {
  meta: {
    sample_id: string;
    sha256: string;
    packer_label?: string;
    entry_ids: number[];
  };
  nodes: GraphNode[];
  edges: [number, number][];
}

/** Throws on any structural violation the primary parser would reject. */
export function validateDocument(doc: GraphDocument): void {
  if (!doc.meta.sample_id) throw new Error("meta.sample_id is required");
  if (doc.meta.entry_ids.length === 0) throw new Error("entry_ids must be non-empty");
  const ids = new Set<number>();
  for (const node of doc.nodes) {
    if (!Number.isInteger(node.id) || node.id < 0) {
      throw new Error(`node id ${node.id} must be a non-negative integer`);
    }
    if (ids.has(node.id)) throw new Error(`duplicate node id ${node.id}`);
    ids.add(node.id);
    if (node.features.length !== N_FEATURES) {
      throw new Error(`node ${node.id}: expected ${N_FEATURES} features, got ${node.features.length}`);
    }
    if (node.features[0] !== KIND_CODES[node.kind]) {
      throw new Error(`node ${node.id}: type feature disagrees with kind ${node.kind}`);
    }
    for (let i = 1; i < N_FEATURES; i++) {
      const v = node.features[i];
      if (!Number.isFinite(v) || v < 0) {
        throw new Error(`node ${node.id}: feature ${i} must be a non-negative number`);
      }
    }
    if (node.features[3] !== 0 && node.features[3] !== 1) {
      throw new Error(`node ${node.id}: is_pure must be 0 or 1`);
    }
  }
  for (const [a, b] of doc.edges) {
    if (!ids.has(a) || !ids.has(b)) {
      throw new Error(`edge (${a}, ${b}) references a missing node`);
    }
  }
  for (const e of doc.meta.entry_ids) {
    if (!ids.has(e)) throw new Error(`entry id ${e} has no node`);
    const node = doc.nodes.find((n) => n.id === e)!;
    if (node.kind !== "entry") throw new Error(`entry id ${e} is not kind=entry`);
  }
}

/** Stable text form: sorted nodes/edges, fixed key order, 2-space indent. */
export function serializeDocument(doc: GraphDocument): string {
  const nodes = [...doc.nodes].sort((x, y) => x.id - y.id);
  const edges = [...doc.edges].sort((x, y) => x[0] - y[0] || x[1] - y[1]);
  const meta: Record<string, unknown> = {
    sample_id: doc.meta.sample_id,
    sha256: doc.meta.sha256,
  };
  if (doc.meta.packer_label !== undefined) meta.packer_label = doc.meta.packer_label;
  meta.entry_ids = [...doc.meta.entry_ids].sort((a, b) => a - b);
  const body = {
    meta,
    nodes: nodes.map((n) => ({ id: n.id, kind: n.kind, features: n.features })),
    edges,
  };
  return JSON.stringify(body, null, 2) + "\n";
}
