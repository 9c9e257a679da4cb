/** Binary containers shared with the reference implementation:
 * MSDF1 sample archives, PTS1 point clouds, SDV1 sdf batches. */

import * as fs from "node:fs";

export interface Archive {
  m: number;
  bounds: number;
  epsC: number;
  seed: bigint;
  surfacePositions: Float32Array; // 3 * nSurface
  surfaceNormals: Float32Array;
  surfaceCategory: Uint16Array;
  surfaceSdf: Float32Array; // nSurface * m
  freePositions: Float32Array;
  freeSdf: Float32Array; // nFree * m
  contactIndex: BigUint64Array;
  contactSets: Uint16Array[];
}

const MAGIC = Buffer.from("MSDF1\0", "ascii");

export function writeArchive(archive: Archive, file: string): void {
  const ns = archive.surfaceCategory.length;
  const nf = archive.freePositions.length / 3;
  const header = Buffer.alloc(6 + 4 + 4 + 8 + 8 + 4 + 4 + 8);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(1, 6);
  header.writeUInt32LE(archive.m, 10);
  header.writeBigUInt64LE(BigInt(ns), 14);
  header.writeBigUInt64LE(BigInt(nf), 22);
  header.writeFloatLE(archive.bounds, 30);
  header.writeFloatLE(archive.epsC, 34);
  header.writeBigUInt64LE(archive.seed, 38);
  const chunks: Buffer[] = [header];
  for (const arr of [archive.surfacePositions, archive.surfaceNormals]) {
    chunks.push(Buffer.from(arr.buffer, arr.byteOffset, arr.byteLength));
  }
  chunks.push(Buffer.from(archive.surfaceCategory.buffer, archive.surfaceCategory.byteOffset,
                          archive.surfaceCategory.byteLength));
  for (const arr of [archive.surfaceSdf, archive.freePositions, archive.freeSdf]) {
    chunks.push(Buffer.from(arr.buffer, arr.byteOffset, arr.byteLength));
  }
  const ccount = Buffer.alloc(8);
  ccount.writeBigUInt64LE(BigInt(archive.contactIndex.length));
  chunks.push(ccount);
  for (let k = 0; k < archive.contactIndex.length; k++) {
    const gset = archive.contactSets[k];
    const entry = Buffer.alloc(10 + 2 * gset.length);
    entry.writeBigUInt64LE(archive.contactIndex[k], 0);
    entry.writeUInt16LE(gset.length, 8);
    for (let i = 0; i < gset.length; i++) entry.writeUInt16LE(gset[i], 10 + 2 * i);
    chunks.push(entry);
  }
  fs.writeFileSync(file, Buffer.concat(chunks));
}

export function readArchive(file: string): Archive {
  const data = fs.readFileSync(file);
  if (!data.subarray(0, 6).equals(MAGIC)) {
    throw new Error(`bad magic at offset 0: ${data.subarray(0, 6).toString("hex")}`);
  }
  const version = data.readUInt32LE(6);
  if (version !== 1) throw new Error(`unsupported version ${version}`);
  const m = data.readUInt32LE(10);
  const ns = Number(data.readBigUInt64LE(14));
  const nf = Number(data.readBigUInt64LE(22));
  const bounds = data.readFloatLE(30);
  const epsC = data.readFloatLE(34);
  const seed = data.readBigUInt64LE(38);
  let off = 46;

  function f32(count: number): Float32Array {
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = data.readFloatLE(off + 4 * i);
    off += 4 * count;
    return out;
  }

  const surfacePositions = f32(ns * 3);
  const surfaceNormals = f32(ns * 3);
  const surfaceCategory = new Uint16Array(ns);
  for (let i = 0; i < ns; i++) surfaceCategory[i] = data.readUInt16LE(off + 2 * i);
  off += 2 * ns;
  const surfaceSdf = f32(ns * m);
  const freePositions = f32(nf * 3);
  const freeSdf = f32(nf * m);
  const nContact = Number(data.readBigUInt64LE(off));
  off += 8;
  const contactIndex = new BigUint64Array(nContact);
  const contactSets: Uint16Array[] = [];
  for (let k = 0; k < nContact; k++) {
    contactIndex[k] = data.readBigUInt64LE(off);
    const size = data.readUInt16LE(off + 8);
    off += 10;
    const gset = new Uint16Array(size);
    for (let i = 0; i < size; i++) gset[i] = data.readUInt16LE(off + 2 * i);
    off += 2 * size;
    contactSets.push(gset);
  }
  if (off !== data.length) throw new Error(`trailing ${data.length - off} bytes`);
  return {
    m, bounds, epsC, seed, surfacePositions, surfaceNormals, surfaceCategory,
    surfaceSdf, freePositions, freeSdf, contactIndex, contactSets,
  };
}

const PTS_MAGIC = Buffer.from("PTS1\0\0", "ascii");
const SDV_MAGIC = Buffer.from("SDV1\0\0", "ascii");

export function readPoints(file: string): Float64Array {
  const data = fs.readFileSync(file);
  if (!data.subarray(0, 6).equals(PTS_MAGIC)) throw new Error("bad PTS1 magic");
  const n = Number(data.readBigUInt64LE(6));
  const out = new Float64Array(n * 3);
  for (let i = 0; i < n * 3; i++) out[i] = data.readDoubleLE(14 + 8 * i);
  return out;
}

export function writePoints(points: Float64Array, file: string): void {
  const n = points.length / 3;
  const buf = Buffer.alloc(14 + 8 * points.length);
  PTS_MAGIC.copy(buf, 0);
  buf.writeBigUInt64LE(BigInt(n), 6);
  for (let i = 0; i < points.length; i++) buf.writeDoubleLE(points[i], 14 + 8 * i);
  fs.writeFileSync(file, buf);
}

export function writeSdfBatch(values: Float32Array, n: number, m: number, file: string): void {
  const buf = Buffer.alloc(18 + 4 * values.length);
  SDV_MAGIC.copy(buf, 0);
  buf.writeBigUInt64LE(BigInt(n), 6);
  buf.writeUInt32LE(m, 14);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], 18 + 4 * i);
  fs.writeFileSync(file, buf);
}
