"""From trained fields to explicit geometry: dense grid evaluation, iso-surface
extraction, template meshes, cross-instance correspondence through template
space, and latent-code editing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from skimage import measure

from .fields import ModelState, model_forward, subfunction_forward
from .rng import CounterRng, STREAM_EVAL_SURFACE
from .shape_data.mesh import TriMesh
from .shape_data.sampling import sample_on_mesh


@dataclass
class SdfGrid:
    values: np.ndarray  # (R, R, R, m) float32
    bounds: float
    resolution: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.bounds / (self.resolution - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.bounds, self.bounds, self.resolution)


def make_field(state: ModelState, codes) -> "callable":
    """Wrap (state, codes) as a batched numpy field: (n, 3) -> (n, m)."""
    codes_t = torch.as_tensor(np.asarray(codes), dtype=state.dtype)

    def field(points: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            res = model_forward(state, codes_t, torch.as_tensor(points, dtype=state.dtype))
        return res.s.cpu().numpy()

    return field


def evaluate_grid(field, resolution: int = 128, bounds: float = 1.1,
                  chunk: int = 65536) -> SdfGrid:
    """Evaluate a (n,3)->(n,m) field on the full lattice, in fixed chunks.

    `field` is any callable with that signature (e.g. make_field(state, codes)
    or an analytic test field); chunk size cannot change the result.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axis = np.linspace(-bounds, bounds, resolution)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    flat = grid.reshape(-1, 3)
    first = np.atleast_2d(field(flat[: min(chunk, len(flat))]))
    m = first.shape[1]
    values = np.empty((len(flat), m), dtype=np.float32)
    values[: len(first)] = first
    for lo in range(len(first), len(flat), chunk):
        values[lo : lo + chunk] = field(flat[lo : lo + chunk])
    return SdfGrid(
        values=values.reshape(resolution, resolution, resolution, m),
        bounds=bounds,
        resolution=resolution,
    )


def _weld(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge exactly coincident vertices and drop degenerate faces.

    Classic marching cubes can emit duplicate vertices on shared cube edges
    and zero-area triangles when the iso-surface grazes lattice points; both
    break the every-edge-twice property without changing the geometry.
    """
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse[faces]
    ok = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 2] != faces[:, 0])
    )
    return uniq, faces[ok]


def extract_iso_mesh(grid: SdfGrid, channel: int, iso: float = 0.0) -> TriMesh:
    """Marching cubes (classic 256-case table, linear interpolation) on one
    channel; output faces are oriented outward (positive signed volume).
    No zero crossing yields a valid empty mesh."""
    vol = np.asarray(grid.values[..., channel], dtype=np.float64)
    if not np.isfinite(vol).all():
        raise ValueError("grid contains non-finite values")
    if vol.min() > iso or vol.max() < iso:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    h = grid.spacing
    verts, faces, _, _ = measure.marching_cubes(
        vol, iso, spacing=(h, h, h), gradient_direction="ascent", method="lorensen"
    )
    verts, faces = _weld(verts.astype(np.float64), faces.astype(np.int64))
    mesh = TriMesh(verts + (-grid.bounds), faces)
    if mesh.signed_volume() < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def reconstruct_instance(state: ModelState, codes, resolution: int = 128,
                         bounds: float = 1.1) -> list[tuple[int, TriMesh]]:
    """Evaluate the refined field on a grid and extract one mesh per category."""
    grid = evaluate_grid(make_field(state, codes), resolution, bounds)
    return [(j, extract_iso_mesh(grid, j)) for j in range(state.config.m)]


def extract_templates(state: ModelState, resolution: int = 128,
                      bounds: float = 1.1) -> list[tuple[int, TriMesh]]:
    """Marching cubes directly on each category's template field (no
    deformation, no refinement)."""
    out = []
    for j in range(state.config.m):

        def field(points: np.ndarray, _j=j) -> np.ndarray:
            with torch.no_grad():
                vals = state.templates[_j](torch.as_tensor(points, dtype=state.dtype))
            return vals.cpu().numpy()[:, None]

        grid = evaluate_grid(field, resolution, bounds)
        out.append((j, extract_iso_mesh(grid, 0)))
    return out


def to_template_space(state: ModelState, codes, category: int,
                      points: np.ndarray) -> np.ndarray:
    """Map instance-space points through the category's learned deformation."""
    codes_t = torch.as_tensor(np.asarray(codes), dtype=state.dtype)
    with torch.no_grad():
        _, _, p_def, _ = subfunction_forward(
            state, category, codes_t[category],
            torch.as_tensor(points, dtype=state.dtype),
        )
    return p_def.cpu().numpy().astype(np.float64)


@dataclass
class CorrespondenceMap:
    source: np.ndarray  # (n, 3) points on A's surface
    target: np.ndarray  # (n, 3) matched points on B's surface
    template_source: np.ndarray  # (n, 3)
    template_target: np.ndarray  # (n, 3)
    distance: np.ndarray  # (n,) template-space match distance

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["src_x", "src_y", "src_z", "dst_x", "dst_y", "dst_z",
                 "tpl_x", "tpl_y", "tpl_z", "distance"]
            )
            for i in range(len(self.source)):
                writer.writerow(
                    [*self.source[i], *self.target[i], *self.template_source[i],
                     self.distance[i]]
                )


def correspond(
    state: ModelState,
    codes_a,
    codes_b,
    category: int,
    points_a: np.ndarray,
    n_surface_b: int = 100_000,
    resolution: int = 128,
    seed: int = 0,
    mesh_b: TriMesh | None = None,
) -> CorrespondenceMap:
    """Match points on A's surface to B's surface via nearest neighbors in
    template space (the deformation map is not analytically invertible)."""
    from scipy.spatial import cKDTree

    if mesh_b is None:
        mesh_b = dict(reconstruct_instance(state, codes_b, resolution))[category]
    if len(mesh_b.faces) == 0:
        raise ValueError(f"category {category}: B reconstructs to an empty surface")
    q_a = to_template_space(state, codes_a, category, np.asarray(points_a, dtype=np.float64))
    samples_b, _, _ = sample_on_mesh(
        mesh_b, n_surface_b, CounterRng(seed, STREAM_EVAL_SURFACE, category, 2)
    )
    q_b = to_template_space(state, codes_b, category, samples_b)
    dist, nn = cKDTree(q_b).query(q_a)
    return CorrespondenceMap(
        source=np.asarray(points_a, dtype=np.float64),
        target=samples_b[nn],
        template_source=q_a,
        template_target=q_b[nn],
        distance=dist,
    )


def edit_codes(codes: np.ndarray, category: int, direction: np.ndarray,
               magnitude: float) -> np.ndarray:
    """Shift one category's latent code along a direction; others untouched."""
    out = np.array(codes, dtype=np.float64, copy=True)
    out[category] = out[category] + magnitude * np.asarray(direction, dtype=np.float64)
    return out
