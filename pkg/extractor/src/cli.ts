#!/usr/bin/env node
/**
 * cg-extract: bridge from PE binaries to .cg.json documents.
 *
 *   cg-extract extract <binary> [--label L] [--out FILE] [--analyzer CMD]
 *   cg-extract batch <dir> --out-dir DIR [--label L] [--manifest FILE]
 *
 * Exit codes: 0 success, 2 unusable input (non-PE, missing file),
 * 3 analyzer failure.
 */

import { promises as fs } from "fs";
import path from "path";

import { AnalyzerError } from "./analyzer.js";
import { ExtractOptions, NotPeError, extract } from "./extract.js";
import { serializeDocument } from "./interchange.js";

interface Flags {
  positional: string[];
  values: Map<string, string>;
}

function parseArgs(argv: string[]): Flags {
  const positional: string[] = [];
  const values = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      const key = arg.slice(2);
      const value = argv[i + 1];
      if (value === undefined || value.startsWith("--")) {
        values.set(key, "true");
      } else {
        values.set(key, value);
        i++;
      }
    } else {
      positional.push(arg);
    }
  }
  return { positional, values };
}

function extractOptions(flags: Flags): ExtractOptions {
  const options: ExtractOptions = {};
  const label = flags.values.get("label");
  if (label !== undefined) options.label = label;
  const sampleId = flags.values.get("sample-id");
  if (sampleId !== undefined) options.sampleId = sampleId;
  const analyzer: Record<string, unknown> = {};
  const command = flags.values.get("analyzer");
  if (command !== undefined) analyzer.command = command;
  const depth = flags.values.get("analysis-depth");
  if (depth !== undefined) analyzer.depth = depth;
  const timeout = flags.values.get("timeout-ms");
  if (timeout !== undefined) analyzer.timeoutMs = Number(timeout);
  if (Object.keys(analyzer).length > 0) options.analyzer = analyzer;
  return options;
}

async function cmdExtract(flags: Flags): Promise<number> {
  const [file] = flags.positional;
  if (!file) {
    console.error("usage: cg-extract extract <binary> [--label L] [--out FILE]");
    return 2;
  }
  const result = await extract(file, extractOptions(flags));
  for (const warning of result.record.warnings) {
    console.error(`warning: ${warning}`);
  }
  const text = serializeDocument(result.document);
  const out = flags.values.get("out");
  if (out) {
    await fs.writeFile(out, text);
    console.error(
      `wrote ${out} (${result.record.nodeCount} nodes, ${result.record.edgeCount} edges, ` +
        `depth ${result.record.analysisDepth})`,
    );
  } else {
    process.stdout.write(text);
  }
  return 0;
}

async function cmdBatch(flags: Flags): Promise<number> {
  const [dir] = flags.positional;
  const outDir = flags.values.get("out-dir");
  if (!dir || !outDir) {
    console.error("usage: cg-extract batch <dir> --out-dir DIR [--label L] [--manifest FILE]");
    return 2;
  }
  await fs.mkdir(outDir, { recursive: true });
  const names = (await fs.readdir(dir)).sort();
  const labels: Record<string, string> = {};
  const errors: Record<string, string> = {};
  const options = extractOptions(flags);
  for (const name of names) {
    const file = path.join(dir, name);
    if (!(await fs.stat(file)).isFile()) continue;
    try {
      const result = await extract(file, options);
      for (const warning of result.record.warnings) {
        console.error(`warning: ${name}: ${warning}`);
      }
      const sampleId = result.document.meta.sample_id;
      await fs.writeFile(path.join(outDir, `${sampleId}.cg.json`), serializeDocument(result.document));
      if (options.label !== undefined) labels[sampleId] = options.label;
    } catch (err) {
      errors[name] = (err as Error).message;
      console.error(`error: ${name}: ${(err as Error).message}`);
    }
  }
  const manifest = flags.values.get("manifest");
  if (manifest) {
    await fs.writeFile(manifest, JSON.stringify(labels, null, 2) + "\n");
  }
  if (Object.keys(errors).length > 0) {
    await fs.writeFile(path.join(outDir, "errors.json"), JSON.stringify(errors, null, 2) + "\n");
  }
  console.error(`extracted ${Object.keys(labels).length || names.length - Object.keys(errors).length} ok, ${Object.keys(errors).length} failed`);
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  const flags = parseArgs(rest);
  try {
    if (command === "extract") return await cmdExtract(flags);
    if (command === "batch") return await cmdBatch(flags);
    console.error("usage: cg-extract <extract|batch> ...");
    return 2;
  } catch (err) {
    if (err instanceof NotPeError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    if (err instanceof AnalyzerError) {
      console.error(`error: ${err.message}`);
      return 3;
    }
    if ((err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(err as Error).message}`);
      return 2;
    }
    throw err;
  }
}

const isDirectRun = process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${path.resolve(process.argv[1])}`).href;
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
