/**
 * Exact mesh signed distances mirroring the reference formulas: seven-region
 * closest-point-on-triangle for |d| and winding-number sign (sum of signed
 * solid angles over all triangles, threshold 0.5).  A BVH prunes the
 * distance search conservatively (boxes are rejected only when strictly
 * farther than the current best), so the minimum is the brute-force value.
 */

import { TriMesh } from "./mesh.js";

interface Tri {
  ax: number; ay: number; az: number;
  bx: number; by: number; bz: number;
  cx: number; cy: number; cz: number;
}

function triangles(mesh: TriMesh): Tri[] {
  const out: Tri[] = [];
  const v = mesh.vertices;
  const f = mesh.faces;
  for (let i = 0; i < f.length; i += 3) {
    const a = 3 * f[i], b = 3 * f[i + 1], c = 3 * f[i + 2];
    out.push({
      ax: v[a], ay: v[a + 1], az: v[a + 2],
      bx: v[b], by: v[b + 1], bz: v[b + 2],
      cx: v[c], cy: v[c + 1], cz: v[c + 2],
    });
  }
  return out;
}

/** Squared distance from p to triangle t; identical branch structure and
 * arithmetic as the reference implementation. */
function pointTriDistSq(px: number, py: number, pz: number, t: Tri): number {
  const abx = t.bx - t.ax, aby = t.by - t.ay, abz = t.bz - t.az;
  const acx = t.cx - t.ax, acy = t.cy - t.ay, acz = t.cz - t.az;
  const apx = px - t.ax, apy = py - t.ay, apz = pz - t.az;
  const d1 = abx * apx + aby * apy + abz * apz;
  const d2 = acx * apx + acy * apy + acz * apz;
  let qx: number, qy: number, qz: number;
  if (d1 <= 0.0 && d2 <= 0.0) {
    qx = t.ax; qy = t.ay; qz = t.az;
  } else {
    const bpx = px - t.bx, bpy = py - t.by, bpz = pz - t.bz;
    const d3 = abx * bpx + aby * bpy + abz * bpz;
    const d4 = acx * bpx + acy * bpy + acz * bpz;
    if (d3 >= 0.0 && d4 <= d3) {
      qx = t.bx; qy = t.by; qz = t.bz;
    } else {
      const vc = d1 * d4 - d3 * d2;
      const cpx = px - t.cx, cpy = py - t.cy, cpz = pz - t.cz;
      const d5 = abx * cpx + aby * cpy + abz * cpz;
      const d6 = acx * cpx + acy * cpy + acz * cpz;
      if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const w = d1 / (d1 - d3);
        qx = t.ax + abx * w; qy = t.ay + aby * w; qz = t.az + abz * w;
      } else if (d6 >= 0.0 && d5 <= d6) {
        qx = t.cx; qy = t.cy; qz = t.cz;
      } else {
        const vb = d5 * d2 - d1 * d6;
        if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
          const w = d2 / (d2 - d6);
          qx = t.ax + acx * w; qy = t.ay + acy * w; qz = t.az + acz * w;
        } else {
          const va = d3 * d6 - d5 * d4;
          if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0) {
            const w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            qx = t.bx + (t.cx - t.bx) * w;
            qy = t.by + (t.cy - t.by) * w;
            qz = t.bz + (t.cz - t.bz) * w;
          } else {
            const denom = va + vb + vc;
            const v = vb / denom;
            const w = vc / denom;
            qx = t.ax + abx * v + acx * w;
            qy = t.ay + aby * v + acy * w;
            qz = t.az + abz * v + acz * w;
          }
        }
      }
    }
  }
  const dx = px - qx, dy = py - qy, dz = pz - qz;
  return dx * dx + dy * dy + dz * dz;
}

interface BvhNode {
  lo: [number, number, number];
  hi: [number, number, number];
  left: number; // node index or -1
  right: number;
  start: number; // leaf triangle range
  end: number;
}

export class MeshQuery {
  private tris: Tri[];
  private order: Int32Array;
  private nodes: BvhNode[] = [];

  constructor(public mesh: TriMesh) {
    this.tris = triangles(mesh);
    this.order = new Int32Array(this.tris.length);
    for (let i = 0; i < this.order.length; i++) this.order[i] = i;
    if (this.tris.length > 0) this.build(0, this.tris.length);
  }

  private centroid(i: number, axis: number): number {
    const t = this.tris[this.order[i]];
    if (axis === 0) return (t.ax + t.bx + t.cx) / 3;
    if (axis === 1) return (t.ay + t.by + t.cy) / 3;
    return (t.az + t.bz + t.cz) / 3;
  }

  private build(start: number, end: number): number {
    const lo: [number, number, number] = [Infinity, Infinity, Infinity];
    const hi: [number, number, number] = [-Infinity, -Infinity, -Infinity];
    for (let i = start; i < end; i++) {
      const t = this.tris[this.order[i]];
      for (const [x, y, z] of [[t.ax, t.ay, t.az], [t.bx, t.by, t.bz], [t.cx, t.cy, t.cz]]) {
        if (x < lo[0]) lo[0] = x;
        if (y < lo[1]) lo[1] = y;
        if (z < lo[2]) lo[2] = z;
        if (x > hi[0]) hi[0] = x;
        if (y > hi[1]) hi[1] = y;
        if (z > hi[2]) hi[2] = z;
      }
    }
    const node: BvhNode = { lo, hi, left: -1, right: -1, start, end };
    const index = this.nodes.length;
    this.nodes.push(node);
    if (end - start > 8) {
      let axis = 0;
      let extent = hi[0] - lo[0];
      for (let k = 1; k < 3; k++) {
        if (hi[k] - lo[k] > extent) {
          extent = hi[k] - lo[k];
          axis = k;
        }
      }
      const slice = Array.from(this.order.subarray(start, end));
      slice.sort((a, b) => {
        const ta = this.tris[a], tb = this.tris[b];
        const ca = axis === 0 ? ta.ax + ta.bx + ta.cx : axis === 1 ? ta.ay + ta.by + ta.cy : ta.az + ta.bz + ta.cz;
        const cb = axis === 0 ? tb.ax + tb.bx + tb.cx : axis === 1 ? tb.ay + tb.by + tb.cy : tb.az + tb.bz + tb.cz;
        return ca - cb || a - b;
      });
      this.order.set(slice, start);
      const mid = (start + end) >> 1;
      node.left = this.build(start, mid);
      node.right = this.build(mid, end);
      node.start = -1;
      node.end = -1;
    }
    return index;
  }

  private boxDistSq(node: BvhNode, px: number, py: number, pz: number): number {
    const dx = px < node.lo[0] ? node.lo[0] - px : px > node.hi[0] ? px - node.hi[0] : 0;
    const dy = py < node.lo[1] ? node.lo[1] - py : py > node.hi[1] ? py - node.hi[1] : 0;
    const dz = pz < node.lo[2] ? node.lo[2] - pz : pz > node.hi[2] ? pz - node.hi[2] : 0;
    return dx * dx + dy * dy + dz * dz;
  }

  /** Unsigned distance: sqrt of the exact minimum squared distance. */
  distance(px: number, py: number, pz: number): number {
    let best = Infinity;
    const stack = [0];
    while (stack.length) {
      const node = this.nodes[stack.pop()!];
      if (this.boxDistSq(node, px, py, pz) > best) continue;
      if (node.left === -1) {
        for (let i = node.start; i < node.end; i++) {
          const d = pointTriDistSq(px, py, pz, this.tris[this.order[i]]);
          if (d < best) best = d;
        }
      } else {
        stack.push(node.left, node.right);
      }
    }
    return Math.sqrt(best);
  }

  /** Generalized winding number (van Oosterom-Strackee solid angles). */
  winding(px: number, py: number, pz: number): number {
    let sum = 0;
    for (const t of this.tris) {
      const ax = t.ax - px, ay = t.ay - py, az = t.az - pz;
      const bx = t.bx - px, by = t.by - py, bz = t.bz - pz;
      const cx = t.cx - px, cy = t.cy - py, cz = t.cz - pz;
      const la = Math.sqrt(ax * ax + ay * ay + az * az);
      const lb = Math.sqrt(bx * bx + by * by + bz * bz);
      const lc = Math.sqrt(cx * cx + cy * cy + cz * cz);
      const num =
        ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx);
      const den =
        la * lb * lc +
        (ax * bx + ay * by + az * bz) * lc +
        (bx * cx + by * cy + bz * cz) * la +
        (cx * ax + cy * ay + cz * az) * lb;
      sum += 2.0 * Math.atan2(num, den);
    }
    return sum / (4.0 * Math.PI);
  }

  signedDistance(px: number, py: number, pz: number): number {
    const d = this.distance(px, py, pz);
    return this.winding(px, py, pz) > 0.5 ? -d : d;
  }
}

/** (n x m) signed distances of each query to each mesh. */
export function signedDistanceBatch(meshes: TriMesh[], queries: Float64Array): Float64Array {
  const n = queries.length / 3;
  const out = new Float64Array(n * meshes.length);
  meshes.forEach((mesh, j) => {
    const q = new MeshQuery(mesh);
    for (let i = 0; i < n; i++) {
      out[i * meshes.length + j] = q.signedDistance(
        queries[3 * i], queries[3 * i + 1], queries[3 * i + 2],
      );
    }
  });
  return out;
}
