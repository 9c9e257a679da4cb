"""Exact mesh signed distances: nearest-triangle magnitude, winding-number sign.

The formulas below are part of the kernel interchange contract: closest-point
selection follows the standard seven-region triangle decomposition with the
comparison/arithmetic order written out explicitly, and the sign comes from
the generalized winding number (sum of signed solid angles / 4pi) thresholded
at 0.5.  Both sides of the language boundary implement the identical
expressions, which makes |distance| bit-exact and the sign stable everywhere
except exactly on a surface.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, check_watertight


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _cross(a, b):
    out = np.empty(np.broadcast(a, b).shape, dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _closest_point_sq(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distance from each point to each triangle.

    p: (n, 1, 3); a, b, c: (1, t, 3).  Returns (n, t).  Region tests follow
    the canonical closest-point-on-triangle case analysis; every branch's
    arithmetic matches the scalar reference expression exactly.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom

    shape = np.broadcast(d1, d3).shape
    closest = np.empty(shape + (3,), dtype=np.float64)
    done = np.zeros(shape, dtype=bool)

    def assign(mask, value):
        nonlocal done
        mask = mask & ~done
        if mask.any():
            closest[mask] = np.broadcast_to(value, shape + (3,))[mask]
        done = done | mask

    assign((d1 <= 0.0) & (d2 <= 0.0), a)  # vertex a
    assign((d3 >= 0.0) & (d4 <= d3), b)  # vertex b
    assign((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), a + ab * t_ab[..., None])  # edge ab
    assign((d6 >= 0.0) & (d5 <= d6), c)  # vertex c
    assign((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), a + ac * t_ac[..., None])  # edge ac
    assign(
        (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0),
        b + (c - b) * t_bc[..., None],
    )  # edge bc
    assign(~done, a + ab * v[..., None] + ac * w[..., None])  # interior

    diff = np.asarray(p) - closest
    return _dot(diff, diff)


def _solid_angles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Signed solid angle of each triangle at each point (van Oosterom-Strackee)."""
    av = a - p
    bv = b - p
    cv = c - p
    la = np.sqrt(_dot(av, av))
    lb = np.sqrt(_dot(bv, bv))
    lc = np.sqrt(_dot(cv, cv))
    num = _dot(av, _cross(bv, cv))
    den = la * lb * lc + _dot(av, bv) * lc + _dot(bv, cv) * la + _dot(cv, av) * lb
    return 2.0 * np.arctan2(num, den)


def winding_number(mesh: TriMesh, queries: np.ndarray, chunk: int | None = None) -> np.ndarray:
    """Generalized winding number; ~1 inside, ~0 outside for watertight meshes."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    t = mesh.triangles
    a = t[None, :, 0]
    b = t[None, :, 1]
    c = t[None, :, 2]
    n = len(queries)
    if chunk is None:
        chunk = max(1, int(4e6 / max(len(t), 1)))
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        omega = _solid_angles(queries[lo:hi, None, :], a, b, c)
        out[lo:hi] = omega.sum(axis=1) / (4.0 * np.pi)
    return out


def unsigned_distance(mesh: TriMesh, queries: np.ndarray, chunk: int | None = None) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    t = mesh.triangles
    a = t[None, :, 0]
    b = t[None, :, 1]
    c = t[None, :, 2]
    n = len(queries)
    if chunk is None:
        chunk = max(1, int(4e6 / max(len(t), 1)))
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        sq = _closest_point_sq(queries[lo:hi, None, :], a, b, c)
        out[lo:hi] = np.sqrt(sq.min(axis=1))
    return out


def signed_distance_many(mesh: TriMesh, queries: np.ndarray) -> np.ndarray:
    """Signed distances to one watertight mesh; negative inside (winding > 0.5)."""
    dist = unsigned_distance(mesh, queries)
    inside = winding_number(mesh, queries) > 0.5
    return np.where(inside, -dist, dist)


def signed_distance(mesh: TriMesh, query) -> float:
    check_watertight(mesh)
    return float(signed_distance_many(mesh, np.asarray(query, dtype=np.float64)[None])[0])


def signed_distance_batch(meshes: list[TriMesh], queries: np.ndarray) -> np.ndarray:
    """(n, m) signed distances of each query to each object's surface."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.empty((len(queries), len(meshes)), dtype=np.float64)
    for j, mesh in enumerate(meshes):
        out[:, j] = signed_distance_many(mesh, queries)
    return out
