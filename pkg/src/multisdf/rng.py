"""Counter-based deterministic RNG shared with the native kernel.

The sampling pipeline must produce identical points regardless of language,
chunking, or degree of parallelism, so randomness is specified at the
algorithm level instead of delegating to a library generator:

    finalize(z) = splitmix64 output mixing (xor-shift / multiply, 3 rounds)
    raw64(key, counter) = finalize(key + (counter + 1) * GOLDEN)   mod 2^64
    derive(key, label)  = raw64(key ^ (label * STREAM_SALT), 0)

A stream is addressed by a seed plus a tuple of integer labels; the i-th
draw of a stream depends only on (key, i).  Uniform doubles take the top
53 bits: (raw >> 11) * 2^-53.  Gaussians are Box-Muller over consecutive
uniform pairs.  Any reimplementation following these formulas with IEEE-754
doubles reproduces the byte-identical sample archives.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
STREAM_SALT = np.uint64(0xD1B54A32D192ED03)

# Registered stream labels. The native kernel hard-codes the same values.
STREAM_SURFACE = 1  # + category id as second label
STREAM_FREE = 2
STREAM_METRIC_SUBSAMPLE = 3  # + 0 for first cloud, 1 for second
STREAM_EVAL_SURFACE = 4  # + category id
STREAM_CODES = 5  # + instance index, category id
STREAM_TRAIN = 6  # + epoch/instance labels (primary only)
STREAM_SCENE = 7  # toy-scene generation (primary only)

_U64 = np.uint64


def _finalize(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * MIX1
        z = (z ^ (z >> _U64(27))) * MIX2
        return z ^ (z >> _U64(31))


def raw64(key: int | np.uint64, counters: np.ndarray) -> np.ndarray:
    """64-bit outputs for an array of counters on stream `key`."""
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _finalize(_U64(key) + (counters + _U64(1)) * GOLDEN)


def derive(key: int | np.uint64, label: int) -> np.uint64:
    with np.errstate(over="ignore"):
        salted = _U64(key) ^ (_U64(label) * STREAM_SALT)
    return raw64(salted, np.array([0], dtype=np.uint64))[0]


class CounterRng:
    """Stateless stream addressed by (seed, *labels); draws indexed by counter."""

    def __init__(self, seed: int, *labels: int):
        key = _U64(seed)
        for label in labels:
            key = derive(key, label)
        self.key = key

    def uniforms(self, start: int, n: int) -> np.ndarray:
        """n doubles in [0, 1), counters start..start+n-1."""
        counters = np.arange(start, start + n, dtype=np.uint64)
        return (raw64(self.key, counters) >> _U64(11)).astype(np.float64) * 2.0**-53

    def normals(self, start: int, n: int) -> np.ndarray:
        """n standard Gaussians; draw i consumes uniform counters 2i and 2i+1."""
        u = self.uniforms(2 * start, 2 * n).reshape(n, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return r * np.cos(2.0 * np.pi * u[:, 1])

    def integers(self, start: int, n: int, bound: int) -> np.ndarray:
        """n integers uniform in [0, bound) via floor(u * bound)."""
        return np.minimum(
            (self.uniforms(start, n) * bound).astype(np.int64), bound - 1
        )

    def subsample(self, n_total: int, n_pick: int) -> np.ndarray:
        """First n_pick entries of a Fisher-Yates shuffle of range(n_total).

        Swap i uses uniform counter i, so the picked index set is a pure
        function of (key, n_total, n_pick).
        """
        idx = np.arange(n_total, dtype=np.int64)
        u = self.uniforms(0, n_pick)
        for i in range(n_pick):
            j = i + min(int(u[i] * (n_total - i)), n_total - i - 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:n_pick].copy()
