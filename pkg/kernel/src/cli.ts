#!/usr/bin/env node
/**
 * Batch geometry kernel CLI.  Every operation reads/writes the same file
 * formats as the reference toolkit (MSDF1 archives, OBJ/PLY meshes, PTS1
 * point clouds, SDV1 sdf batches) and prints a single JSON object to stdout.
 *
 * Operations: sample | sdf-batch | contacts | chamfer | emd | iv | metrics
 */

import { readArchive, readPoints, writeArchive, writeSdfBatch } from "./format.js";
import { signedDistanceBatch } from "./geom.js";
import { loadManifest, loadMesh, normalizeInstance } from "./mesh.js";
import { chamfer, emd, evaluateMeshes, intersectionVolume } from "./metrics.js";
import { buildArchive, extractContacts } from "./sample.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${argv[i]}`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function need(args: Map<string, string>, key: string): string {
  const value = args.get(key);
  if (value === undefined) throw new Error(`missing --${key}`);
  return value;
}

function num(args: Map<string, string>, key: string, fallback?: number): number {
  const raw = args.get(key);
  if (raw === undefined) {
    if (fallback === undefined) throw new Error(`missing --${key}`);
    return fallback;
  }
  return Number(raw);
}

function emit(obj: unknown): void {
  process.stdout.write(JSON.stringify(obj) + "\n");
}

function main(argv: string[]): number {
  const [op, ...rest] = argv;
  if (!op) {
    process.stderr.write(
      "usage: msdf-kernel <sample|sdf-batch|contacts|chamfer|emd|iv|metrics> [--flag value]...\n",
    );
    return 1;
  }
  const args = parseArgs(rest);

  switch (op) {
    case "sample": {
      const instance = normalizeInstance(loadManifest(need(args, "manifest")));
      const archive = buildArchive(instance, {
        nSurface: num(args, "n-surface", 200_000),
        nFree: num(args, "n-free", 250_000),
        bounds: num(args, "bounds", 1.5),
        epsC: num(args, "eps-c", 0.01),
        seed: num(args, "seed", 0),
      });
      writeArchive(archive, need(args, "out"));
      emit({
        ok: true,
        n_surface: archive.surfaceCategory.length,
        n_free: archive.freePositions.length / 3,
        n_contact: archive.contactIndex.length,
      });
      return 0;
    }
    case "sdf-batch": {
      const instance = normalizeInstance(loadManifest(need(args, "manifest")));
      const queries = readPoints(need(args, "queries"));
      const values = signedDistanceBatch(instance.meshes, queries);
      writeSdfBatch(Float32Array.from(values), queries.length / 3,
                    instance.meshes.length, need(args, "out"));
      emit({ ok: true, n: queries.length / 3, m: instance.meshes.length });
      return 0;
    }
    case "contacts": {
      const archive = readArchive(need(args, "archive"));
      const epsC = num(args, "eps-c", archive.epsC);
      const { contactIndex, contactSets } = extractContacts(
        archive.freeSdf, archive.m, epsC,
      );
      emit({
        count: contactIndex.length,
        entries: Array.from(contactIndex, (idx, k) => ({
          index: Number(idx),
          gamma: Array.from(contactSets[k]),
        })),
      });
      return 0;
    }
    case "chamfer": {
      const a = readPoints(need(args, "a"));
      const b = readPoints(need(args, "b"));
      emit({ cd: chamfer(a, b) });
      return 0;
    }
    case "emd": {
      const a = readPoints(need(args, "a"));
      const b = readPoints(need(args, "b"));
      emit({ emd: emd(a, b, num(args, "n-sub", 512), num(args, "seed", 0)) });
      return 0;
    }
    case "iv": {
      const meshes = need(args, "meshes").split(",").map(loadMesh);
      const { iv, voxels } = intersectionVolume(
        meshes, num(args, "resolution", 256), num(args, "bounds", 1.0),
      );
      emit({ iv, voxels });
      return 0;
    }
    case "metrics": {
      const predPaths = need(args, "pred").split(",");
      const gtPaths = need(args, "gt").split(",");
      if (predPaths.length !== gtPaths.length) {
        throw new Error("pred and gt must list the same number of meshes");
      }
      const categories = predPaths.map((p) => {
        const match = /cat(\d+)\.(ply|obj)$/.exec(p);
        if (!match) throw new Error(`cannot infer category id from ${p}`);
        return parseInt(match[1], 10);
      });
      const result = evaluateMeshes(
        predPaths.map(loadMesh), gtPaths.map(loadMesh), categories,
        num(args, "n-points", 10_000), num(args, "emd-sub", 512),
        num(args, "voxel-res", 256), num(args, "iv-bounds", 1.0),
        num(args, "seed", 0),
      );
      emit(result);
      return 0;
    }
    default:
      process.stderr.write(`unknown operation: ${op}\n`);
      return 1;
  }
}

try {
  process.exit(main(process.argv.slice(2)));
} catch (err) {
  process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
  process.exit(2);
}
