/**
 * Mapping from analyzer function records to the 12-feature node vector.
 * Feature order: type, size, real_size, is_pure, calling_conventions,
 * n_basic_blocks, n_instructions, n_local_vars, n_args, edges, indegree,
 * outdegree. Missing analyzer values become 0 and produce a warning, so
 * the format stays total over whatever the analyzer managed to recover.
 */

import { AnalyzerFunction } from "./analyzer.js";
import { KIND_CODES, NodeKind } from "./interchange.js";

export function classifyKind(
  fn: AnalyzerFunction,
  entryAddresses: Set<number>,
  importAddresses: Set<number>,
): NodeKind {
  const size = fn.size ?? 0;
  for (const entry of entryAddresses) {
    if (entry === fn.offset || (entry > fn.offset && entry < fn.offset + size)) {
      return "entry";
    }
  }
  if (
    importAddresses.has(fn.offset) ||
    fn.type === "imp" ||
    /^(sym|loc)\.imp\./.test(fn.name ?? "")
  ) {
    return "import";
  }
  return "internal";
}

function numeric(
  fn: AnalyzerFunction,
  key: keyof AnalyzerFunction,
  warnings: string[],
): number {
  const value = fn[key];
  if (typeof value === "number" && Number.isFinite(value) && value >= 0) {
    return value;
  }
  warnings.push(`${fn.name ?? fn.offset}: missing ${String(key)}, defaulting to 0`);
  return 0;
}

export function featureVector(
  fn: AnalyzerFunction,
  kind: NodeKind,
  warnings: string[],
): number[] {
  let isPure = 0;
  if (fn["is-pure"] === true || fn["is-pure"] === "true") {
    isPure = 1;
  } else if (fn["is-pure"] === undefined) {
    warnings.push(`${fn.name ?? fn.offset}: missing is-pure, defaulting to 0`);
  }
  // the analyzer reports at most one convention per function
  let conventions = 0;
  if (typeof fn.calltype === "string" && fn.calltype !== "") {
    conventions = 1;
  } else {
    warnings.push(`${fn.name ?? fn.offset}: missing calltype, defaulting to 0`);
  }
  return [
    KIND_CODES[kind],
    numeric(fn, "size", warnings),
    numeric(fn, "realsz", warnings),
    isPure,
    conventions,
    numeric(fn, "nbbs", warnings),
    numeric(fn, "ninstrs", warnings),
    numeric(fn, "nlocals", warnings),
    numeric(fn, "nargs", warnings),
    numeric(fn, "edges", warnings),
    numeric(fn, "indegree", warnings),
    numeric(fn, "outdegree", warnings),
  ];
}
