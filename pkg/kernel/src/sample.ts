/**
 * Sample-archive construction mirroring the reference pipeline bit for bit:
 * largest-remainder per-object counts, area-CDF triangle picks with
 * sqrt-barycentric placement (counters 3i..3i+2 per sample), face normals,
 * uniform free-space points, exact per-object SDF vectors, strict contact
 * extraction.
 */

import { Archive } from "./format.js";
import { MeshQuery } from "./geom.js";
import { CounterRng, STREAM_FREE, STREAM_SURFACE } from "./rng.js";
import { Instance, TriMesh, faceAreas } from "./mesh.js";

export function allocateCounts(areas: number[], total: number): number[] {
  let sum = 0;
  for (const a of areas) sum += a;
  const quota = areas.map((a) => (a / sum) * total);
  const base = quota.map(Math.floor);
  const remainder = quota.map((q, i) => q - base[i]);
  let short = total;
  for (const b of base) short -= b;
  const order = areas.map((_, i) => i);
  order.sort((i, j) => remainder[j] - remainder[i] || i - j);
  for (let k = 0; k < short; k++) base[order[k]] += 1;
  return base;
}

/** First index with cdf[k] > x (numpy searchsorted side="right"). */
function upperBound(cdf: Float64Array, x: number): number {
  let lo = 0;
  let hi = cdf.length;
  while (lo < hi) {
    const mid = (lo + hi) >> 1;
    if (cdf[mid] <= x) lo = mid + 1;
    else hi = mid;
  }
  return lo;
}

export interface SurfaceSamples {
  positions: Float64Array;
  normals: Float64Array;
  faceIdx: Int32Array;
}

/** n area-uniform samples; sample i consumes uniforms 3i, 3i+1, 3i+2. */
export function sampleOnMesh(mesh: TriMesh, n: number, rng: CounterRng,
                             counterStart = 0): SurfaceSamples {
  const { areas } = faceAreas(mesh);
  const keep: number[] = [];
  for (let i = 0; i < areas.length; i++) if (areas[i] > 0) keep.push(i);
  if (keep.length === 0) throw new Error("all faces degenerate");
  const cdf = new Float64Array(keep.length);
  let run = 0;
  for (let i = 0; i < keep.length; i++) {
    run += areas[keep[i]];
    cdf[i] = run;
  }
  const total = cdf[cdf.length - 1];
  const u = rng.uniforms(3 * counterStart, 3 * n);
  const positions = new Float64Array(n * 3);
  const normals = new Float64Array(n * 3);
  const faceIdx = new Int32Array(n);
  const v = mesh.vertices;
  const f = mesh.faces;
  for (let i = 0; i < n; i++) {
    let pick = upperBound(cdf, u[3 * i] * total);
    if (pick > keep.length - 1) pick = keep.length - 1;
    const face = keep[pick];
    faceIdx[i] = face;
    const a = 3 * f[3 * face], b = 3 * f[3 * face + 1], c = 3 * f[3 * face + 2];
    const r1 = Math.sqrt(u[3 * i + 1]);
    const wa = 1.0 - r1;
    const wb = r1 * (1.0 - u[3 * i + 2]);
    const wc = r1 * u[3 * i + 2];
    for (let k = 0; k < 3; k++) {
      positions[3 * i + k] = v[a + k] * wa + v[b + k] * wb + v[c + k] * wc;
    }
    // unit face normal from the cross product
    const abx = v[b] - v[a], aby = v[b + 1] - v[a + 1], abz = v[b + 2] - v[a + 2];
    const acx = v[c] - v[a], acy = v[c + 1] - v[a + 1], acz = v[c + 2] - v[a + 2];
    const nx = aby * acz - abz * acy;
    const ny = abz * acx - abx * acz;
    const nz = abx * acy - aby * acx;
    const len = Math.sqrt(nx * nx + ny * ny + nz * nz);
    normals[3 * i] = nx / len;
    normals[3 * i + 1] = ny / len;
    normals[3 * i + 2] = nz / len;
  }
  return { positions, normals, faceIdx };
}

export interface SampleParams {
  nSurface: number;
  nFree: number;
  bounds: number;
  epsC: number;
  seed: number;
}

export function buildArchive(instance: Instance, params: SampleParams): Archive {
  const m = instance.meshes.length;
  const areaTotals = instance.meshes.map((mesh) => faceAreas(mesh).total);
  const counts = allocateCounts(areaTotals, params.nSurface);

  const sPos = new Float64Array(params.nSurface * 3);
  const sNrm = new Float64Array(params.nSurface * 3);
  const sCat = new Uint16Array(params.nSurface);
  let row = 0;
  for (let j = 0; j < m; j++) {
    const nJ = counts[j];
    if (nJ === 0) continue;
    const rng = new CounterRng(params.seed, STREAM_SURFACE, j);
    const { positions, normals } = sampleOnMesh(instance.meshes[j], nJ, rng);
    sPos.set(positions, row * 3);
    sNrm.set(normals, row * 3);
    sCat.fill(j, row, row + nJ);
    row += nJ;
  }

  const queries = [sPos];
  const freeRng = new CounterRng(params.seed, STREAM_FREE);
  const uf = freeRng.uniforms(0, 3 * params.nFree);
  const fPos = new Float64Array(params.nFree * 3);
  for (let i = 0; i < fPos.length; i++) fPos[i] = (2.0 * uf[i] - 1.0) * params.bounds;

  const sSdf = new Float64Array(params.nSurface * m);
  const fSdf = new Float64Array(params.nFree * m);
  for (let j = 0; j < m; j++) {
    const q = new MeshQuery(instance.meshes[j]);
    for (let i = 0; i < params.nSurface; i++) {
      sSdf[i * m + j] =
        sCat[i] === j
          ? 0.0
          : q.signedDistance(sPos[3 * i], sPos[3 * i + 1], sPos[3 * i + 2]);
    }
    for (let i = 0; i < params.nFree; i++) {
      fSdf[i * m + j] = q.signedDistance(fPos[3 * i], fPos[3 * i + 1], fPos[3 * i + 2]);
    }
  }

  const { contactIndex, contactSets } = extractContacts(fSdf, m, params.epsC);
  return {
    m,
    bounds: Math.fround(params.bounds),
    epsC: Math.fround(params.epsC),
    seed: BigInt(params.seed),
    surfacePositions: Float32Array.from(sPos),
    surfaceNormals: Float32Array.from(sNrm),
    surfaceCategory: sCat,
    surfaceSdf: Float32Array.from(sSdf),
    freePositions: Float32Array.from(fPos),
    freeSdf: Float32Array.from(fSdf),
    contactIndex,
    contactSets,
  };
}

/** Free rows whose SDF to >= 2 categories is strictly below epsC.
 * Values are compared after float32 rounding, matching archives on disk. */
export function extractContacts(freeSdf: Float64Array | Float32Array, m: number,
                                epsC: number):
    { contactIndex: BigUint64Array; contactSets: Uint16Array[] } {
  const n = freeSdf.length / m;
  const index: bigint[] = [];
  const sets: Uint16Array[] = [];
  for (let i = 0; i < n; i++) {
    const gamma: number[] = [];
    for (let j = 0; j < m; j++) {
      const value = Math.fround(freeSdf[i * m + j]);
      if (value < epsC) gamma.push(j);
    }
    if (gamma.length >= 2) {
      index.push(BigInt(i));
      sets.push(Uint16Array.from(gamma));
    }
  }
  return { contactIndex: BigUint64Array.from(index), contactSets: sets };
}
