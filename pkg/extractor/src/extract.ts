/**
 * Orchestration: binary file -> full (unfiltered) call-graph document.
 *
 * Function nodes get ids by ascending address; call references between
 * known functions become edges; the functions containing the binary's
 * entry points are tagged kind=entry. Stub filtering is deliberately not
 * done here: that is the identification pipeline's job.
 */

import { createHash } from "crypto";
import { promises as fs } from "fs";
import path from "path";

import {
  AnalyzerError,
  AnalyzerOptions,
  DEFAULT_ANALYZER,
  listEntries,
  listFunctions,
  listImports,
} from "./analyzer.js";
import { classifyKind, featureVector } from "./features.js";
import { GraphDocument, GraphNode, validateDocument } from "./interchange.js";

export const LARGE_GRAPH_NODES = 500; // flagged, not dropped

export interface ExtractionRecord {
  binary: string;
  sha256: string;
  analysisDepth: string;
  nodeCount: number;
  edgeCount: number;
  warnings: string[];
}

export interface ExtractionResult {
  document: GraphDocument;
  record: ExtractionRecord;
}

export class NotPeError extends Error {}

export async function assertLooksLikePe(file: string): Promise<void> {
  const handle = await fs.open(file, "r");
  try {
    const head = Buffer.alloc(2);
    await handle.read(head, 0, 2, 0);
    if (head.toString("latin1") !== "MZ") {
      throw new NotPeError(`${file}: not a PE image (missing MZ header)`);
    }
  } finally {
    await handle.close();
  }
}

export interface ExtractOptions {
  analyzer?: Partial<AnalyzerOptions>;
  label?: string;
  sampleId?: string;
}

export async function extract(file: string, options: ExtractOptions = {}): Promise<ExtractionResult> {
  await assertLooksLikePe(file);
  const analyzer: AnalyzerOptions = { ...DEFAULT_ANALYZER, ...options.analyzer };
  const warnings: string[] = [];

  const [functions, entries, imports] = await Promise.all([
    listFunctions(analyzer, file),
    listEntries(analyzer, file),
    listImports(analyzer, file),
  ]);
  if (functions.length === 0) {
    throw new AnalyzerError(`${file}: analyzer found no functions`);
  }

  const entryAddresses = new Set(entries.map((e) => e.vaddr));
  const importAddresses = new Set(
    imports.map((i) => i.plt ?? i.vaddr).filter((v): v is number => typeof v === "number"),
  );

  const ordered = [...functions].sort((a, b) => a.offset - b.offset);
  const idByOffset = new Map<number, number>();
  ordered.forEach((fn, idx) => idByOffset.set(fn.offset, idx));

  const nodes: GraphNode[] = ordered.map((fn, idx) => {
    const kind = classifyKind(fn, entryAddresses, importAddresses);
    return { id: idx, kind, features: featureVector(fn, kind, warnings) };
  });

  const edgeSet = new Set<string>();
  const edges: [number, number][] = [];
  ordered.forEach((fn, callerId) => {
    for (const ref of fn.callrefs ?? []) {
      if (ref.type !== "CALL" && ref.type !== "call") continue;
      const calleeId = idByOffset.get(ref.addr);
      if (calleeId === undefined) continue; // target outside known functions
      const key = `${callerId}->${calleeId}`;
      if (!edgeSet.has(key)) {
        edgeSet.add(key);
        edges.push([callerId, calleeId]);
      }
    }
  });

  const entryIds = new Set<number>();
  for (const fn of ordered) {
    const kindHolder = nodes[idByOffset.get(fn.offset)!];
    if (kindHolder.kind === "entry") entryIds.add(kindHolder.id);
  }
  if (entryIds.size === 0) {
    // no recovered function contains the entry point: packers do this on
    // purpose; synthesize a bare entry node so the document stays valid
    warnings.push("no analyzed function contains an entry point; synthesizing one");
    const id = nodes.length;
    const features = new Array(12).fill(0);
    features[0] = 2;
    nodes.push({ id, kind: "entry", features });
    entryIds.add(id);
  }
  if (nodes.length > LARGE_GRAPH_NODES) {
    warnings.push(`graph has ${nodes.length} nodes (> ${LARGE_GRAPH_NODES}); kept, flag for dataset policy`);
  }

  const data = await fs.readFile(file);
  const sha256 = createHash("sha256").update(data).digest("hex");
  const sampleId = options.sampleId ?? path.basename(file).replace(/\.[^.]+$/, "");
  const document: GraphDocument = {
    meta: {
      sample_id: sampleId,
      sha256,
      ...(options.label !== undefined ? { packer_label: options.label } : {}),
      entry_ids: [...entryIds].sort((a, b) => a - b),
    },
    nodes,
    edges,
  };
  validateDocument(document);
  return {
    document,
    record: {
      binary: file,
      sha256,
      analysisDepth: analyzer.depth,
      nodeCount: nodes.length,
      edgeCount: edges.length,
      warnings,
    },
  };
}
