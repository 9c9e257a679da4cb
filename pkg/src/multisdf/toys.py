"""Deterministic desk-scale scene generators with exact analytic ground truth.

Two families: "blob" scenes (plates/spheres/ellipsoids with a controlled
tangency between categories 0 and 1) and three-part procedural chairs.
Primitives are axis-aligned with translation poses, which keeps their SDFs
exactly computable; ellipsoid distances are solved to ~1e-12 by bisection +
Newton on the Lagrange projection root, not approximated.

Extended contact sets need near-parallel surfaces: a point tangency between
curved bodies only yields O(eps^2) contact volume, so the default contact
pair is a pair of parallel-faced plates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import CounterRng, STREAM_SCENE
from .shape_data.mesh import MultiObjectInstance, TriMesh, normalize_instance
from .shape_data.sampling import SamplingConfig


@dataclass
class Primitive:
    kind: str  # sphere | ellipsoid | box
    center: np.ndarray  # (3,)
    size: np.ndarray  # sphere/ellipsoid: semi-axes; box: half-extents

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        if self.kind not in ("sphere", "ellipsoid", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(points) - self.center
        if self.kind == "sphere":
            return np.sqrt((q * q).sum(axis=1)) - self.size[0]
        if self.kind == "box":
            d = np.abs(q) - self.size
            outside = np.sqrt((np.maximum(d, 0.0) ** 2).sum(axis=1))
            inside = np.minimum(d.max(axis=1), 0.0)
            return outside + inside
        return _ellipsoid_sdf(q, self.size)

    def mesh(self, tessellation: int = 3) -> TriMesh:
        if self.kind == "box":
            base = _box_mesh(self.size)
        elif self.kind == "sphere":
            base = _icosphere(tessellation)
            base = TriMesh(base.vertices * self.size[0], base.faces)
        else:
            base = _icosphere(tessellation)
            base = TriMesh(base.vertices * self.size, base.faces)
        return TriMesh(base.vertices + self.center, base.faces)

    def transformed(self, scale: float, translation: np.ndarray) -> "Primitive":
        return Primitive(self.kind, self.center * scale + translation, self.size * scale)

    def volume(self) -> float:
        if self.kind == "box":
            return float(8.0 * np.prod(self.size))
        return float(4.0 / 3.0 * np.pi * np.prod(self.size))


@dataclass
class UnionPrimitive:
    """Union of disjoint primitives (exact SDF is their pointwise min)."""

    parts: list[Primitive]

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return np.min(np.stack([p.sdf(points) for p in self.parts]), axis=0)

    def mesh(self, tessellation: int = 3) -> TriMesh:
        return _merge_meshes([p.mesh(tessellation) for p in self.parts])

    def transformed(self, scale: float, translation: np.ndarray) -> "UnionPrimitive":
        return UnionPrimitive([p.transformed(scale, translation) for p in self.parts])

    def volume(self) -> float:
        return sum(p.volume() for p in self.parts)

    @property
    def center(self) -> np.ndarray:
        return np.mean([p.center for p in self.parts], axis=0)


@dataclass
class AnalyticScene:
    instance: MultiObjectInstance
    primitives: list[tuple[int, Primitive | UnionPrimitive]]
    eps_c: float

    def analytic_sdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.empty((len(points), len(self.primitives)), dtype=np.float64)
        for cat, prim in self.primitives:
            out[:, cat] = prim.sdf(points)
        return out

    def sampling_config(self, n_surface: int = 200_000, n_free: int = 250_000,
                        seed: int = 0) -> SamplingConfig:
        return SamplingConfig(n_surface=n_surface, n_free=n_free,
                              bounds=1.5, eps_c=self.eps_c, seed=seed)


# --- tessellation ------------------------------------------------------------

def _merge_meshes(meshes: list[TriMesh]) -> TriMesh:
    verts, faces, base = [], [], 0
    for mesh in meshes:
        verts.append(mesh.vertices)
        faces.append(mesh.faces + base)
        base += len(mesh.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def _box_mesh(half: np.ndarray, center: np.ndarray | None = None) -> TriMesh:
    hx, hy, hz = half
    v = np.array(
        [[-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
         [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz]],
        dtype=np.float64,
    )
    if center is not None:
        v = v + center
    f = np.array(
        [[0, 2, 1], [0, 3, 2],  # -z
         [4, 5, 6], [4, 6, 7],  # +z
         [0, 1, 5], [0, 5, 4],  # -y
         [2, 3, 7], [2, 7, 6],  # +y
         [1, 2, 6], [1, 6, 5],  # +x
         [3, 0, 4], [3, 4, 7]],  # -x
        dtype=np.int64,
    )
    return TriMesh(v, f)


def _icosphere(subdivisions: int) -> TriMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                p = verts_list[i] + verts_list[j]
                verts_list.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts_list) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return TriMesh(verts, faces)


def chord_error(tessellation: int) -> float:
    """Max deviation of a unit icosphere facet from the true sphere."""
    mesh = _icosphere(tessellation)
    centroids = mesh.triangles.mean(axis=1)
    return float((1.0 - np.linalg.norm(centroids, axis=1)).max())


# --- exact ellipsoid distance -------------------------------------------------

def _ellipsoid_sdf(q: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Signed distance to an axis-aligned ellipsoid centered at the origin."""
    q = np.atleast_2d(q)
    p = np.abs(q)
    dist = np.empty(len(p), dtype=np.float64)
    positive = (p > 0.0).all(axis=1)
    if positive.any():
        dist[positive] = _ellipsoid_dist_positive(p[positive], radii)
    for i in np.flatnonzero(~positive):
        dist[i] = _ellipsoid_dist_degenerate(p[i], radii)
    k = ((q / radii) ** 2).sum(axis=1)
    return np.where(k < 1.0, -dist, dist)


def _ellipsoid_dist_positive(p: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """All-components-positive case: bisection + Newton on the Lagrange root.

    Root t* of F(t) = sum_i (r_i p_i / (t + r_i^2))^2 - 1 on t > -min r_i^2;
    the closest point is x_i = r_i^2 p_i / (t* + r_i^2).
    """
    r2 = radii**2
    rp = radii * p
    j = int(np.argmin(radii))
    t_lo = -r2[j] + radii[j] * p[:, j]
    t_hi = np.maximum(np.sqrt((rp**2).sum(axis=1)) - r2[j], t_lo)

    lo, hi = t_lo.copy(), t_hi.copy()
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        high = (rp**2 / (mid[:, None] + r2) ** 2).sum(axis=1) > 1.0
        lo = np.where(high, mid, lo)
        hi = np.where(high, hi, mid)
    t = 0.5 * (lo + hi)
    for _ in range(3):  # Newton polish
        denom = t[:, None] + r2
        f = (rp**2 / denom**2).sum(axis=1) - 1.0
        fp = (-2.0 * rp**2 / denom**3).sum(axis=1)
        step = np.where(fp != 0.0, f / fp, 0.0)
        t = np.maximum(t - step, t_lo)
    x = r2 * p / (t[:, None] + r2)
    return np.sqrt(((x - p) ** 2).sum(axis=1))


def _ellipsoid_dist_degenerate(p: np.ndarray, radii: np.ndarray) -> float:
    """Points with exact zero components: compare the reduced in-plane root
    against off-plane candidates from the KKT branch t = -r_i^2."""
    r2 = radii**2
    active = np.flatnonzero(p > 0.0)
    zero = np.flatnonzero(p == 0.0)
    if len(active) == 0:
        return float(radii.min())
    # candidate A: stay in the plane of the active axes
    ra, pa = radii[active], p[active]
    j = int(np.argmin(ra))
    lo = -ra[j] ** 2 + ra[j] * pa[j]
    hi = max(np.sqrt(((ra * pa) ** 2).sum()) - ra[j] ** 2, lo)
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        f = ((ra * pa / (mid + ra**2)) ** 2).sum() - 1.0
        lo, hi = (mid, hi) if f > 0.0 else (lo, mid)
    t = 0.5 * (lo + hi)
    xa = ra**2 * pa / (t + ra**2)
    best = float(np.sqrt(((xa - pa) ** 2).sum()))
    # candidate B: leave the plane along a zero axis
    for i in zero:
        denom = r2[active] - r2[i]
        if np.any(np.abs(denom) < 1e-30):
            continue
        xj = r2[active] * p[active] / denom
        slack = 1.0 - ((xj / radii[active]) ** 2).sum()
        if slack < 0.0:
            continue
        xi = radii[i] * np.sqrt(slack)
        d2 = ((xj - p[active]) ** 2).sum() + xi**2
        best = min(best, float(np.sqrt(d2)))
    return best


# --- generators ---------------------------------------------------------------

def make_blob_family(
    n_instances: int,
    m: int = 2,
    seed: int = 0,
    contact: bool = True,
    kinds: tuple[str, ...] | None = None,
    tessellation: int = 3,
    eps_c: float = 0.02,
) -> list[AnalyticScene]:
    """Family of multi-part scenes varying smoothly with instance index.

    Categories 0 and 1 default to plates stacked along z with a seeded gap in
    [0, eps_c/4] (tangent when contact=True, well separated otherwise); the
    upper plate is offset laterally so only a strip of its face touches the
    lower one, keeping the contact region a modest fraction (~15-20%) of
    either surface, like adjacent organs rather than stacked bricks.
    Further categories are spheres placed clear of all contact shells.
    Sizes and lateral positions drift sinusoidally with index plus a small
    seeded jitter, so the family shares topology but not geometry.
    """
    if m < 2:
        raise ValueError("need at least two categories")
    if kinds is None:
        kinds = ("box", "box") + ("sphere",) * (m - 2)
    if len(kinds) != m:
        raise ValueError("kinds length must equal m")
    rng = CounterRng(seed, STREAM_SCENE)
    jit = rng.uniforms(0, n_instances * (4 * m + 2)).reshape(n_instances, 4 * m + 2)
    scenes = []
    for i in range(n_instances):
        phase = i / max(n_instances - 1, 1)
        u = jit[i]
        gap = (u[0] * 0.25 * eps_c) if contact else (0.25 + 0.1 * u[0])
        prims: list[tuple[int, Primitive]] = []
        for cat in range(m):
            grow = 1.0 + 0.10 * np.sin(2.0 * np.pi * phase + 1.7 * cat) + 0.04 * (u[4 * cat + 1] - 0.5)
            dx = 0.05 * (u[4 * cat + 2] - 0.5)
            dy = 0.05 * (u[4 * cat + 3] - 0.5)
            if cat == 0:
                if kinds[0] == "box":
                    size = np.array([0.42, 0.42, 0.17]) * grow
                    prims.append((0, Primitive("box", [dx - 0.17, dy, -size[2]], size)))
                else:
                    r = 0.32 * grow
                    prims.append((0, Primitive(kinds[0], [dx, dy, -r], np.array([r, r, r]))))
            elif cat == 1:
                below = prims[0][1]
                top = below.center[2] + below.size[2]
                if kinds[1] == "box":
                    size = np.array([0.40, 0.40, 0.15]) * grow
                    prims.append((1, Primitive("box", [dx + 0.17, dy, top + gap + size[2]], size)))
                else:
                    r = 0.28 * grow
                    prims.append((1, Primitive(kinds[1], [dx, dy, top + gap + r], np.array([r, r, r]))))
            else:
                r = 0.14 * grow
                angle = 2.0 * np.pi * (cat - 2) / max(m - 2, 1)
                d = 0.78
                c = [d * np.cos(angle), d * np.sin(angle), 0.45 * (u[4 * cat + 4] - 0.5)]
                prims.append((cat, Primitive("sphere", c, np.array([r, r, r]))))
        raw = [(cat, prim.mesh(tessellation)) for cat, prim in prims]
        instance, xf = normalize_instance(raw, instance_id=f"blob_{seed}_{i:03d}")
        prims = [(cat, prim.transformed(xf.scale, xf.translation)) for cat, prim in prims]
        scenes.append(AnalyticScene(instance=instance, primitives=prims,
                                    eps_c=eps_c * xf.scale))
    return scenes


def make_chair(seed: int = 0, tessellation: int = 0) -> AnalyticScene:
    """Three-part procedural chair: back rest, seat slab, four legs (one mesh).

    Parts touch face-to-face without interpenetration.  The seat's top sits
    at 30-50% of the normalized vertical extent across seeds.
    """
    rng = CounterRng(seed, STREAM_SCENE, 1)
    u = rng.uniforms(0, 8)
    seat_w = 0.5 + 0.15 * u[0]
    seat_d = 0.45 + 0.15 * u[1]
    seat_t = 0.05 + 0.02 * u[2]
    leg_h = 0.45 + 0.15 * u[3]
    leg_r = 0.035 + 0.02 * u[4]
    back_h = 0.45 + 0.1 * u[5]
    back_t = 0.04 + 0.02 * u[6]

    # back shares a face with the seat top; leg tops coincide with the seat bottom
    back = Primitive(
        "box",
        [0.0, seat_d - back_t, leg_h + 2 * seat_t + back_h],
        np.array([seat_w, back_t, back_h]),
    )
    seat = Primitive("box", [0.0, 0.0, leg_h + seat_t], np.array([seat_w, seat_d, seat_t]))
    leg_half = np.array([leg_r, leg_r, leg_h / 2])
    offs = [(seat_w - leg_r, seat_d - leg_r), (-(seat_w - leg_r), seat_d - leg_r),
            (seat_w - leg_r, -(seat_d - leg_r)), (-(seat_w - leg_r), -(seat_d - leg_r))]
    legs = UnionPrimitive(
        [Primitive("box", np.array([ox, oy, leg_h / 2]), leg_half) for ox, oy in offs]
    )

    parts: list[tuple[int, Primitive | UnionPrimitive]] = [(0, back), (1, seat), (2, legs)]
    raw = [(cat, prim.mesh(tessellation)) for cat, prim in parts]
    instance, xf = normalize_instance(raw, instance_id=f"chair_{seed:04d}")
    prims = [(cat, prim.transformed(xf.scale, xf.translation)) for cat, prim in parts]
    return AnalyticScene(instance=instance, primitives=prims, eps_c=0.02 * xf.scale)
