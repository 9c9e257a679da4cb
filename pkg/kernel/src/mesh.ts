/** Triangle meshes: OBJ/PLY loading, instance manifests, joint normalization. */

import * as fs from "node:fs";
import * as path from "node:path";

export interface TriMesh {
  vertices: Float64Array; // 3*V
  faces: Int32Array; // 3*F
}

export function vertexCount(mesh: TriMesh): number {
  return mesh.vertices.length / 3;
}

export function faceCount(mesh: TriMesh): number {
  return mesh.faces.length / 3;
}

export function loadObj(file: string): TriMesh {
  const verts: number[] = [];
  const faces: number[] = [];
  for (const line of fs.readFileSync(file, "utf8").split("\n")) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === "v") {
      verts.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (parts[0] === "f") {
      const idx = parts.slice(1).map((tok) => parseInt(tok.split("/")[0], 10) - 1);
      for (let k = 1; k < idx.length - 1; k++) {
        faces.push(idx[0], idx[k], idx[k + 1]);
      }
    }
  }
  return { vertices: Float64Array.from(verts), faces: Int32Array.from(faces) };
}

export function loadPly(file: string): TriMesh {
  const data = fs.readFileSync(file);
  const headerEnd = data.indexOf("end_header\n") + "end_header\n".length;
  const header = data.subarray(0, headerEnd).toString("ascii").split("\n");
  let format = "";
  let nv = 0;
  let nf = 0;
  let element = "";
  const vprops: string[] = [];
  for (const line of header) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === "format") format = parts[1];
    else if (parts[0] === "element") {
      element = parts[1];
      if (element === "vertex") nv = parseInt(parts[2], 10);
      else if (element === "face") nf = parseInt(parts[2], 10);
    } else if (parts[0] === "property" && element === "vertex" && parts[1] !== "list") {
      vprops.push(parts[2]);
    }
  }
  const xi = vprops.indexOf("x");
  const yi = vprops.indexOf("y");
  const zi = vprops.indexOf("z");
  const verts = new Float64Array(nv * 3);
  const faces: number[] = [];
  if (format === "ascii") {
    const lines = data.subarray(headerEnd).toString("ascii").split("\n");
    for (let i = 0; i < nv; i++) {
      const toks = lines[i].trim().split(/\s+/).map(Number);
      verts[3 * i] = toks[xi];
      verts[3 * i + 1] = toks[yi];
      verts[3 * i + 2] = toks[zi];
    }
    for (let i = nv; i < nv + nf; i++) {
      const toks = lines[i].trim().split(/\s+/).map(Number);
      const idx = toks.slice(1, 1 + toks[0]);
      for (let k = 1; k < idx.length - 1; k++) faces.push(idx[0], idx[k], idx[k + 1]);
    }
  } else if (format === "binary_little_endian") {
    const stride = 4 * vprops.length;
    for (let i = 0; i < nv; i++) {
      const base = headerEnd + i * stride;
      verts[3 * i] = data.readFloatLE(base + 4 * xi);
      verts[3 * i + 1] = data.readFloatLE(base + 4 * yi);
      verts[3 * i + 2] = data.readFloatLE(base + 4 * zi);
    }
    let off = headerEnd + nv * stride;
    for (let i = 0; i < nf; i++) {
      const cnt = data.readUInt8(off);
      off += 1;
      const idx: number[] = [];
      for (let k = 0; k < cnt; k++) {
        idx.push(data.readInt32LE(off));
        off += 4;
      }
      for (let k = 1; k < idx.length - 1; k++) faces.push(idx[0], idx[k], idx[k + 1]);
    }
  } else {
    throw new Error(`unsupported PLY format ${format}`);
  }
  return { vertices: verts, faces: Int32Array.from(faces) };
}

export function loadMesh(file: string): TriMesh {
  const ext = path.extname(file).toLowerCase();
  if (ext === ".obj") return loadObj(file);
  if (ext === ".ply") return loadPly(file);
  throw new Error(`unsupported mesh format: ${ext}`);
}

export interface Instance {
  instanceId: string;
  meshes: TriMesh[]; // indexed by category id 0..m-1
}

export function loadManifest(file: string): Instance {
  const spec = JSON.parse(fs.readFileSync(file, "utf8"));
  const dir = path.dirname(file);
  const entries: Array<{ category_id: number; path: string }> = spec.objects;
  const meshes: TriMesh[] = new Array(entries.length);
  for (const entry of entries) {
    const meshPath = path.isAbsolute(entry.path) ? entry.path : path.join(dir, entry.path);
    meshes[entry.category_id] = loadMesh(meshPath);
  }
  return { instanceId: spec.instance_id, meshes };
}

export function checkWatertight(mesh: TriMesh, what: string): void {
  const counts = new Map<string, number>();
  const f = mesh.faces;
  for (let i = 0; i < f.length; i += 3) {
    for (const [a, b] of [[f[i], f[i + 1]], [f[i + 1], f[i + 2]], [f[i + 2], f[i]]]) {
      const key = a < b ? `${a},${b}` : `${b},${a}`;
      counts.set(key, (counts.get(key) ?? 0) + 1);
    }
  }
  let bad = 0;
  for (const n of counts.values()) if (n !== 2) bad++;
  if (f.length === 0 || bad > 0) {
    throw new Error(`${what}: mesh is not watertight (${bad} offending edges)`);
  }
}

/**
 * Joint normalization identical to the reference: center = midpoint of the
 * union bounding box, scale maps the farthest vertex to radius exactly 1;
 * each output coordinate is v * scale + (-center * scale).
 */
export function normalizeInstance(instance: Instance): Instance {
  const lo = [Infinity, Infinity, Infinity];
  const hi = [-Infinity, -Infinity, -Infinity];
  for (const mesh of instance.meshes) {
    const v = mesh.vertices;
    for (let i = 0; i < v.length; i += 3) {
      for (let k = 0; k < 3; k++) {
        if (v[i + k] < lo[k]) lo[k] = v[i + k];
        if (v[i + k] > hi[k]) hi[k] = v[i + k];
      }
    }
  }
  const center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
  let radius = 0;
  for (const mesh of instance.meshes) {
    const v = mesh.vertices;
    for (let i = 0; i < v.length; i += 3) {
      const dx = v[i] - center[0];
      const dy = v[i + 1] - center[1];
      const dz = v[i + 2] - center[2];
      const r = Math.sqrt(dx * dx + dy * dy + dz * dz);
      if (r > radius) radius = r;
    }
  }
  const scale = radius > 0 ? 1.0 / radius : 1.0;
  const translation = [-center[0] * scale, -center[1] * scale, -center[2] * scale];
  const meshes = instance.meshes.map((mesh) => {
    const v = new Float64Array(mesh.vertices.length);
    for (let i = 0; i < v.length; i += 3) {
      v[i] = mesh.vertices[i] * scale + translation[0];
      v[i + 1] = mesh.vertices[i + 1] * scale + translation[1];
      v[i + 2] = mesh.vertices[i + 2] * scale + translation[2];
    }
    return { vertices: v, faces: mesh.faces };
  });
  return { instanceId: instance.instanceId, meshes };
}

/** Per-face areas as 0.5 * |cross(b-a, c-a)|, plus the sequential total. */
export function faceAreas(mesh: TriMesh): { areas: Float64Array; total: number } {
  const f = mesh.faces;
  const v = mesh.vertices;
  const n = f.length / 3;
  const areas = new Float64Array(n);
  let total = 0;
  for (let i = 0; i < n; i++) {
    const a = 3 * f[3 * i];
    const b = 3 * f[3 * i + 1];
    const c = 3 * f[3 * i + 2];
    const abx = v[b] - v[a], aby = v[b + 1] - v[a + 1], abz = v[b + 2] - v[a + 2];
    const acx = v[c] - v[a], acy = v[c + 1] - v[a + 1], acz = v[c + 2] - v[a + 2];
    const cx = aby * acz - abz * acy;
    const cy = abz * acx - abx * acz;
    const cz = abx * acy - aby * acx;
    areas[i] = 0.5 * Math.sqrt(cx * cx + cy * cy + cz * cz);
    total += areas[i];
  }
  return { areas, total };
}
