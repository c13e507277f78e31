/**
 * Thin driver for a radare2-compatible analyzer. One subprocess per
 * query command, JSON in/out:
 *
 *   <analyzer> -q -2 -c "<depth>;<cmd>" <file>
 *
 * where depth is the analysis command (default "aaa") and cmd is one of
 * aflj (function list), iej (entry points), iij (imports).
 */

import { execFile } from "child_process";
import { promisify } from "util";

const exec = promisify(execFile);

export interface AnalyzerFunction {
  offset: number;
  name: string;
  size?: number;
  realsz?: number;
  "is-pure"?: boolean | string;
  calltype?: string;
  cc?: number | string;
  nbbs?: number;
  ninstrs?: number;
  nlocals?: number;
  nargs?: number;
  edges?: number;
  indegree?: number;
  outdegree?: number;
  type?: string;
  callrefs?: { addr: number; type: string; at?: number }[];
}

export interface AnalyzerEntry {
  vaddr: number;
  paddr?: number;
  type?: string;
}

export interface AnalyzerImport {
  name: string;
  plt?: number;
  vaddr?: number;
}

export interface AnalyzerOptions {
  command: string; // executable name or path, default "r2"
  depth: string; // analysis command, default "aaa"
  timeoutMs: number;
}

export const DEFAULT_ANALYZER: AnalyzerOptions = {
  command: "r2",
  depth: "aaa",
  timeoutMs: 120_000,
};

export class AnalyzerError extends Error {}

async function run(options: AnalyzerOptions, cmd: string, file: string): Promise<string> {
  try {
    const { stdout } = await exec(
      options.command,
      ["-q", "-2", "-c", `${options.depth};${cmd}`, file],
      { maxBuffer: 64 * 1024 * 1024, timeout: options.timeoutMs, windowsHide: true },
    );
    return stdout;
  } catch (err) {
    const e = err as NodeJS.ErrnoException & { killed?: boolean; stderr?: string };
    if (e.code === "ENOENT") {
      throw new AnalyzerError(
        `analyzer '${options.command}' is not on PATH; install radare2 or pass --analyzer`,
      );
    }
    if (e.killed) {
      // partial output would be misleading: refuse instead
      throw new AnalyzerError(`analyzer timed out after ${options.timeoutMs} ms on ${file}`);
    }
    throw new AnalyzerError(`analyzer failed on ${file}: ${e.stderr ?? e.message}`);
  }
}

function parseJson<T>(raw: string, what: string): T {
  const text = raw.trim();
  if (text === "") return [] as unknown as T;
  try {
    return JSON.parse(text) as T;
  } catch {
    throw new AnalyzerError(`analyzer returned non-JSON output for ${what}`);
  }
}

export async function listFunctions(options: AnalyzerOptions, file: string): Promise<AnalyzerFunction[]> {
  return parseJson<AnalyzerFunction[]>(await run(options, "aflj", file), "aflj");
}

export async function listEntries(options: AnalyzerOptions, file: string): Promise<AnalyzerEntry[]> {
  return parseJson<AnalyzerEntry[]>(await run(options, "iej", file), "iej");
}

export async function listImports(options: AnalyzerOptions, file: string): Promise<AnalyzerImport[]> {
  return parseJson<AnalyzerImport[]>(await run(options, "iij", file), "iij");
}
