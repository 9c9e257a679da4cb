/**
 * Counter-based RNG matching the reference sampler bit for bit.
 *
 * Contract (shared with the Python reference):
 *   finalize(z): splitmix64 output mixing (xor-shift / multiply, 3 rounds)
 *   raw64(key, counter) = finalize(key + (counter + 1) * GOLDEN)  mod 2^64
 *   derive(key, label)  = raw64(key ^ (label * STREAM_SALT), 0)
 *   uniform = (raw >> 11) * 2^-53
 *
 * Streams are addressed by (seed, ...labels); draw i depends only on the
 * derived key and i, so chunking/parallelism cannot change the output.
 */

const MASK = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;
const STREAM_SALT = 0xd1b54a32d192ed03n;

export const STREAM_SURFACE = 1;
export const STREAM_FREE = 2;
export const STREAM_METRIC_SUBSAMPLE = 3;
export const STREAM_EVAL_SURFACE = 4;

function finalize(z: bigint): bigint {
  z = ((z ^ (z >> 30n)) * MIX1) & MASK;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK;
  return z ^ (z >> 31n);
}

export function raw64(key: bigint, counter: bigint): bigint {
  return finalize((key + ((counter + 1n) * GOLDEN & MASK)) & MASK);
}

export function derive(key: bigint, label: number | bigint): bigint {
  const salted = key ^ ((BigInt(label) * STREAM_SALT) & MASK);
  return raw64(salted & MASK, 0n);
}

export class CounterRng {
  readonly key: bigint;

  constructor(seed: number | bigint, ...labels: Array<number | bigint>) {
    let key = BigInt(seed) & MASK;
    for (const label of labels) key = derive(key, label);
    this.key = key;
  }

  /** n uniforms in [0, 1) at counters start..start+n-1. */
  uniforms(start: number, n: number): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = Number(raw64(this.key, BigInt(start + i)) >> 11n) * 2 ** -53;
    }
    return out;
  }

  /** First nPick entries of a Fisher-Yates shuffle of range(nTotal). */
  subsample(nTotal: number, nPick: number): Int32Array {
    const idx = new Int32Array(nTotal);
    for (let i = 0; i < nTotal; i++) idx[i] = i;
    const u = this.uniforms(0, nPick);
    for (let i = 0; i < nPick; i++) {
      const j = i + Math.min(Math.floor(u[i] * (nTotal - i)), nTotal - i - 1);
      const tmp = idx[i];
      idx[i] = idx[j];
      idx[j] = tmp;
    }
    return idx.slice(0, nPick);
  }
}
