"""Training-point generation: surface points with normals, free-space points
with per-object ground-truth SDF vectors, and the contact subset.

All draws go through the counter RNG (see rng.py), so archives are a pure
function of (instance, config) and identical no matter how work is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import CounterRng, STREAM_FREE, STREAM_SURFACE
from .archive import SampleArchive
from .mesh import MeshError, MultiObjectInstance
from .sdf import signed_distance_many


@dataclass
class SamplingConfig:
    n_surface: int = 200_000
    n_free: int = 250_000
    bounds: float = 1.5
    eps_c: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_surface <= 0 or self.n_free <= 0:
            raise ValueError("n_surface and n_free must be positive")
        if not (0.0 < self.eps_c < self.bounds):
            raise ValueError("need 0 < eps_c < bounds")


def allocate_counts(areas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of `total` proportional to `areas`.

    Deterministic: leftover units go to the largest fractional remainders,
    ties broken by lower index.  Sums to exactly `total`.
    """
    areas = np.asarray(areas, dtype=np.float64)
    quota = areas / areas.sum() * total
    base = np.floor(quota).astype(np.int64)
    remainder = quota - base
    short = total - int(base.sum())
    order = np.lexsort((np.arange(len(areas)), -remainder))
    base[order[:short]] += 1
    return base


def sample_on_mesh(mesh, n: int, rng: CounterRng, counter_start: int = 0):
    """n area-uniform samples on one mesh; sample i consumes uniform counters
    3i, 3i+1, 3i+2 (triangle pick by area CDF, then sqrt-barycentric).

    Returns (positions, face normals, picked face indices); zero-area faces
    are excluded from the CDF so they never receive samples.
    """
    face_areas = mesh.face_areas()
    keep = np.flatnonzero(face_areas > 0.0)
    if len(keep) == 0:
        raise MeshError("all faces degenerate")
    cdf = np.cumsum(face_areas[keep])
    total = cdf[-1]
    u = rng.uniforms(3 * counter_start, 3 * n).reshape(n, 3)
    pick = np.searchsorted(cdf, u[:, 0] * total, side="right")
    pick = np.minimum(pick, len(keep) - 1)
    tri = mesh.triangles[keep[pick]]
    r1 = np.sqrt(u[:, 1])
    wa = 1.0 - r1
    wb = r1 * (1.0 - u[:, 2])
    wc = r1 * u[:, 2]
    positions = tri[:, 0] * wa[:, None] + tri[:, 1] * wb[:, None] + tri[:, 2] * wc[:, None]
    return positions, mesh.face_normals()[keep[pick]], keep[pick]


def sample_surface(
    instance: MultiObjectInstance, config: SamplingConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Area-uniform surface samples over all objects.

    Returns (positions (n,3), normals (n,3), category_ids (n,), sdf (n,m)).
    Per-object counts are area-proportional (largest remainder); each row's
    SDF entry for its own category is exactly 0, the others are exact mesh
    distances.
    """
    meshes = instance.meshes()
    areas = np.array([mesh.area() for mesh in meshes])
    if np.any(areas <= 0.0):
        bad = int(np.argmin(areas))
        raise MeshError(f"category {bad} has zero total surface area")
    counts = allocate_counts(areas, config.n_surface)

    positions = np.empty((config.n_surface, 3), dtype=np.float64)
    normals = np.empty((config.n_surface, 3), dtype=np.float64)
    category = np.empty(config.n_surface, dtype=np.uint16)
    row = 0
    for j, mesh in enumerate(meshes):
        n_j = int(counts[j])
        if n_j == 0:
            continue
        try:
            pos_j, nrm_j, _ = sample_on_mesh(mesh, n_j, CounterRng(config.seed, STREAM_SURFACE, j))
        except MeshError as err:
            raise MeshError(f"category {j}: {err}") from None
        positions[row : row + n_j] = pos_j
        normals[row : row + n_j] = nrm_j
        category[row : row + n_j] = j
        row += n_j

    sdf = np.empty((config.n_surface, len(meshes)), dtype=np.float64)
    for j, mesh in enumerate(meshes):
        own = category == j
        sdf[own, j] = 0.0
        other = ~own
        if other.any():
            sdf[other, j] = signed_distance_many(mesh, positions[other])
    return positions, normals, category, sdf


def sample_free_space(
    instance: MultiObjectInstance, config: SamplingConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform samples in [-bounds, bounds]^3 with exact per-object SDF vectors."""
    rng = CounterRng(config.seed, STREAM_FREE)
    u = rng.uniforms(0, 3 * config.n_free).reshape(config.n_free, 3)
    positions = (2.0 * u - 1.0) * config.bounds
    meshes = instance.meshes()
    sdf = np.empty((config.n_free, len(meshes)), dtype=np.float64)
    for j, mesh in enumerate(meshes):
        sdf[:, j] = signed_distance_many(mesh, positions)
    return positions, sdf


def extract_contact_set(free_sdf: np.ndarray, eps_c: float) -> list[tuple[int, np.ndarray]]:
    """Free points whose GT SDF to >= 2 distinct objects is strictly below eps_c.

    Returns (free_index, sorted category-id array) pairs.  NaN entries
    (masked categories) never qualify.
    """
    with np.errstate(invalid="ignore"):
        near = free_sdf < eps_c
    counts = near.sum(axis=1)
    rows = np.flatnonzero(counts >= 2)
    return [(int(i), np.flatnonzero(near[i]).astype(np.uint16)) for i in rows]


def build_archive(instance: MultiObjectInstance, config: SamplingConfig) -> SampleArchive:
    """Full preprocessing: surface + free samples, contacts, packed archive.

    Contacts are extracted from the float32-rounded SDF values, i.e. exactly
    what the archive stores, so the contact block can be reproduced from the
    archive payload alone."""
    s_pos, s_nrm, s_cat, s_sdf = sample_surface(instance, config)
    f_pos, f_sdf = sample_free_space(instance, config)
    contacts = extract_contact_set(f_sdf.astype(np.float32), config.eps_c)
    return SampleArchive(
        m=instance.m,
        bounds=float(config.bounds),
        eps_c=float(config.eps_c),
        seed=int(config.seed),
        surface_positions=s_pos.astype(np.float32),
        surface_normals=s_nrm.astype(np.float32),
        surface_category=s_cat.astype(np.uint16),
        surface_sdf=s_sdf.astype(np.float32),
        free_positions=f_pos.astype(np.float32),
        free_sdf=f_sdf.astype(np.float32),
        contact_index=np.array([i for i, _ in contacts], dtype=np.uint64),
        contact_sets=[g for _, g in contacts],
    )
