/**
 * CD / EMD / IV mirrors of the reference metrics, same declared units
 * (squared CD x1e4, matched-subsample EMD x1e2, kilo-unit IV).
 */

import { TriMesh, checkWatertight } from "./mesh.js";
import { lapjv } from "./lapjv.js";
import { CounterRng, STREAM_EVAL_SURFACE, STREAM_METRIC_SUBSAMPLE } from "./rng.js";
import { sampleOnMesh } from "./sample.js";

const CD_SCALE = 1e4;
const EMD_SCALE = 1e2;
const IV_SCALE = 1e3;

/** 3-d point kd-tree (median split) for exact nearest-neighbor queries. */
class KdTree {
  private idx: Int32Array;
  private axisOf: Int8Array;

  constructor(private pts: Float64Array) {
    const n = pts.length / 3;
    this.idx = new Int32Array(n);
    for (let i = 0; i < n; i++) this.idx[i] = i;
    this.axisOf = new Int8Array(n);
    this.build(0, n, 0);
  }

  private build(start: number, end: number, depth: number): void {
    if (end - start <= 1) return;
    const axis = depth % 3;
    const slice = Array.from(this.idx.subarray(start, end));
    slice.sort((a, b) => this.pts[3 * a + axis] - this.pts[3 * b + axis] || a - b);
    this.idx.set(slice, start);
    const mid = (start + end) >> 1;
    this.axisOf[mid] = axis;
    this.build(start, mid, depth + 1);
    this.build(mid + 1, end, depth + 1);
  }

  /** Exact squared distance to the nearest stored point. */
  nearestSq(px: number, py: number, pz: number): number {
    let best = Infinity;
    const q = [px, py, pz];
    const visit = (start: number, end: number, depth: number): void => {
      if (end <= start) return;
      const mid = (start + end) >> 1;
      const i = this.idx[mid];
      const dx = px - this.pts[3 * i];
      const dy = py - this.pts[3 * i + 1];
      const dz = pz - this.pts[3 * i + 2];
      const d = dx * dx + dy * dy + dz * dz;
      if (d < best) best = d;
      const axis = depth % 3;
      const diff = q[axis] - this.pts[3 * i + axis];
      const [near, far] = diff < 0
        ? [[start, mid], [mid + 1, end]]
        : [[mid + 1, end], [start, mid]];
      visit(near[0], near[1], depth + 1);
      if (diff * diff <= best) visit(far[0], far[1], depth + 1);
    };
    visit(0, this.pts.length / 3, 0);
    return best;
  }
}

export function chamfer(a: Float64Array, b: Float64Array): number {
  const na = a.length / 3;
  const nb = b.length / 3;
  if (na === 0 || nb === 0) throw new Error("chamfer needs non-empty point sets");
  const ta = new KdTree(a);
  const tb = new KdTree(b);
  let sumAb = 0;
  for (let i = 0; i < na; i++) sumAb += tb.nearestSq(a[3 * i], a[3 * i + 1], a[3 * i + 2]);
  let sumBa = 0;
  for (let i = 0; i < nb; i++) sumBa += ta.nearestSq(b[3 * i], b[3 * i + 1], b[3 * i + 2]);
  return (sumAb / na + sumBa / nb) * CD_SCALE;
}

export function emd(a: Float64Array, b: Float64Array, nSub: number, seed: number): number {
  const na = a.length / 3;
  const nb = b.length / 3;
  if (na < nSub || nb < nSub) throw new Error(`need at least n_sub=${nSub} points`);
  // one shared stream, identical to the reference subsampler
  const stream = new CounterRng(seed, STREAM_METRIC_SUBSAMPLE);
  const ia = stream.subsample(na, nSub);
  const ib = stream.subsample(nb, nSub);
  const cost = new Float64Array(nSub * nSub);
  for (let i = 0; i < nSub; i++) {
    const ax = a[3 * ia[i]], ay = a[3 * ia[i] + 1], az = a[3 * ia[i] + 2];
    for (let j = 0; j < nSub; j++) {
      const dx = ax - b[3 * ib[j]];
      const dy = ay - b[3 * ib[j] + 1];
      const dz = az - b[3 * ib[j] + 2];
      cost[i * nSub + j] = Math.sqrt(dx * dx + dy * dy + dz * dz);
    }
  }
  const rowsol = lapjv(nSub, (i, j) => cost[i * nSub + j]);
  let total = 0;
  for (let i = 0; i < nSub; i++) total += cost[i * nSub + rowsol[i]];
  return (total / nSub) * EMD_SCALE;
}

/**
 * Voxel-center occupancy by z-ray crossing parity with the shared symbolic
 * perturbation rule: barycentric coordinates exactly 0 take the sign of
 * their x- then y-derivative, so edge/vertex grazes count exactly once.
 */
export function voxelOccupancy(mesh: TriMesh, resolution: number, bounds: number): Uint8Array {
  const r = resolution;
  const h = (2.0 * bounds) / r;
  const counts = new Int32Array(r * r * (r + 1));
  const centers = new Float64Array(r);
  for (let i = 0; i < r; i++) centers[i] = -bounds + (i + 0.5) * h;
  const v = mesh.vertices;
  const f = mesh.faces;

  const lexPos = (q: number, qx: number, qy: number): boolean =>
    q > 0.0 || (q === 0.0 && (qx > 0.0 || (qx === 0.0 && qy > 0.0)));

  for (let t = 0; t < f.length; t += 3) {
    const a = 3 * f[t], b = 3 * f[t + 1], c = 3 * f[t + 2];
    const ax = v[a], ay = v[a + 1], az = v[a + 2];
    const bx = v[b], by = v[b + 1], bz = v[b + 2];
    const cx = v[c], cy = v[c + 1], cz = v[c + 2];
    const det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
    if (det === 0.0) continue;
    const xmin = Math.min(ax, bx, cx);
    const xmax = Math.max(ax, bx, cx);
    const ymin = Math.min(ay, by, cy);
    const ymax = Math.max(ay, by, cy);
    const dux = (cy - ay) / det, duy = -(cx - ax) / det;
    const dvx = -(by - ay) / det, dvy = (bx - ax) / det;
    const dwx = -(dux + dvx), dwy = -(duy + dvy);
    for (let ix = 0; ix < r; ix++) {
      const gx = centers[ix];
      if (gx < xmin || gx > xmax) continue;
      for (let iy = 0; iy < r; iy++) {
        const gy = centers[iy];
        if (gy < ymin || gy > ymax) continue;
        const u = ((gx - ax) * (cy - ay) - (cx - ax) * (gy - ay)) / det;
        const vv = ((bx - ax) * (gy - ay) - (gx - ax) * (by - ay)) / det;
        const w = 1.0 - u - vv;
        if (!(lexPos(u, dux, duy) && lexPos(vv, dvx, dvy) && lexPos(w, dwx, dwy))) continue;
        const zHit = az + u * (bz - az) + vv * (cz - az);
        let k = Math.ceil((zHit + bounds) / h - 0.5);
        if (k < 0) k = 0;
        if (k > r) k = r;
        counts[(ix * r + iy) * (r + 1) + k] += 1;
      }
    }
  }

  const occ = new Uint8Array(r * r * r);
  for (let ix = 0; ix < r; ix++) {
    for (let iy = 0; iy < r; iy++) {
      const base = (ix * r + iy) * (r + 1);
      let total = 0;
      for (let k = 0; k <= r; k++) total += counts[base + k];
      let below = 0;
      for (let k = 0; k < r; k++) {
        below += counts[base + k];
        const above = total - below;
        occ[(ix * r + iy) * r + k] = (above & 1) === 1 ? 1 : 0;
      }
    }
  }
  return occ;
}

export function intersectionVolume(meshes: TriMesh[], resolution: number,
                                   bounds: number): { iv: number; voxels: number } {
  meshes.forEach((mesh, i) => checkWatertight(mesh, `mesh ${i}`));
  const sum = new Int16Array(resolution ** 3);
  for (const mesh of meshes) {
    const occ = voxelOccupancy(mesh, resolution, bounds);
    for (let i = 0; i < sum.length; i++) sum[i] += occ[i];
  }
  let voxels = 0;
  for (let i = 0; i < sum.length; i++) if (sum[i] >= 2) voxels++;
  const h = (2.0 * bounds) / resolution;
  return { iv: voxels * h * h * h * IV_SCALE, voxels };
}

export interface MetricRow {
  category: number;
  cd: number;
  emd: number;
}

export function evaluateMeshes(pred: TriMesh[], gt: TriMesh[], categories: number[],
                               nPoints: number, emdSub: number, voxelRes: number,
                               ivBounds: number, seed: number):
    { rows: MetricRow[]; iv: number; voxels: number } {
  const rows: MetricRow[] = [];
  for (let k = 0; k < categories.length; k++) {
    const cat = categories[k];
    const stream = new CounterRng(seed, STREAM_EVAL_SURFACE, cat);
    const p = sampleOnMesh(pred[k], nPoints, stream).positions;
    const g = sampleOnMesh(gt[k], nPoints, stream).positions;
    rows.push({ category: cat, cd: chamfer(p, g), emd: emd(p, g, emdSub, seed) });
  }
  const { iv, voxels } = intersectionVolume(pred, voxelRes, ivBounds);
  return { rows, iv, voxels };
}
