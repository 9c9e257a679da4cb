"""Watertight triangle meshes, multi-part instances, and normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh violates a structural precondition."""


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64, CCW when viewed from outside

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {self.faces.shape}")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise MeshError("face index out of range")

    @property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles
        cross = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals; zero-area faces get a zero vector."""
        t = self.triangles
        cross = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, norm, out=np.zeros_like(cross), where=norm > 0)

    def area(self) -> float:
        # sequential accumulation (cumsum) rather than pairwise np.sum: the
        # total feeds sample-count allocation, which the native kernel must
        # reproduce bit for bit with a plain loop
        areas = self.face_areas()
        return float(np.cumsum(areas)[-1]) if len(areas) else 0.0

    def boundary_edges(self) -> np.ndarray:
        """Undirected edges not shared by exactly two faces; empty iff watertight."""
        edges = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        edges = np.sort(edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts != 2]

    def is_watertight(self) -> bool:
        return len(self.faces) > 0 and len(self.boundary_edges()) == 0

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for outward-oriented faces."""
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def transformed(self, scale: float, translation: np.ndarray) -> "TriMesh":
        return TriMesh(self.vertices * scale + translation, self.faces.copy())


@dataclass
class SimilarityTransform:
    """v_normalized = scale * v + translation, shared by all objects of an instance."""

    scale: float
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.translation

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) / self.scale


@dataclass
class MultiObjectInstance:
    instance_id: str
    objects: list[tuple[int, TriMesh]] = field(default_factory=list)  # (category_id, mesh)

    def __post_init__(self):
        cats = [c for c, _ in self.objects]
        if sorted(cats) != list(range(len(cats))):
            raise MeshError(f"category ids must be 0..m-1 without duplicates, got {cats}")
        self.objects = sorted(self.objects, key=lambda o: o[0])

    @property
    def m(self) -> int:
        return len(self.objects)

    def mesh(self, category_id: int) -> TriMesh:
        return self.objects[category_id][1]

    def meshes(self) -> list[TriMesh]:
        return [mesh for _, mesh in self.objects]

    def all_vertices(self) -> np.ndarray:
        return np.concatenate([mesh.vertices for _, mesh in self.objects])


def check_watertight(instance_or_mesh) -> None:
    """Raise MeshError listing boundary edges for any open mesh."""
    if isinstance(instance_or_mesh, TriMesh):
        items = [(None, instance_or_mesh)]
    else:
        items = instance_or_mesh.objects
    for cat, mesh in items:
        if len(mesh.faces) == 0:
            raise MeshError(f"empty mesh{'' if cat is None else f' for category {cat}'}")
        bad = mesh.boundary_edges()
        if len(bad):
            where = "" if cat is None else f" (category {cat})"
            raise MeshError(
                f"mesh is not watertight{where}: {len(bad)} offending edges, "
                f"first few: {bad[:8].tolist()}"
            )


def normalize_instance(
    raw_meshes: list[tuple[int, TriMesh]], instance_id: str = "instance"
) -> tuple[MultiObjectInstance, SimilarityTransform]:
    """Translate and uniformly scale all parts together into the unit sphere.

    The center is the midpoint of the joint axis-aligned bounding box; the
    scale maps the farthest vertex to radius exactly 1.  Relative poses are
    preserved because a single transform is applied to every part.
    """
    if not raw_meshes:
        raise MeshError("instance has no objects")
    for cat, mesh in raw_meshes:
        if len(mesh.faces) == 0 or len(mesh.vertices) == 0:
            raise MeshError(f"empty mesh for category {cat}")
        bad = mesh.boundary_edges()
        if len(bad):
            raise MeshError(
                f"mesh for category {cat} is not watertight: "
                f"{len(bad)} offending edges, first few: {bad[:8].tolist()}"
            )
    allv = np.concatenate([mesh.vertices for _, mesh in raw_meshes])
    center = 0.5 * (allv.min(axis=0) + allv.max(axis=0))
    radius = np.linalg.norm(allv - center, axis=1).max()
    scale = 1.0 / radius if radius > 0 else 1.0
    transform = SimilarityTransform(scale=scale, translation=-center * scale)
    objects = [
        (cat, TriMesh(transform.apply(mesh.vertices), mesh.faces.copy()))
        for cat, mesh in raw_meshes
    ]
    return MultiObjectInstance(instance_id=instance_id, objects=objects), transform


# --- file formats -----------------------------------------------------------

def load_obj(path: str | Path) -> TriMesh:
    vertices, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64))


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_ply(mesh: TriMesh, path: str | Path, vertex_scalar: np.ndarray | None = None,
             scalar_name: str = "quality") -> None:
    """Binary little-endian PLY, optionally with one per-vertex float channel."""
    nv, nf = len(mesh.vertices), len(mesh.faces)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {nv}",
              "property float x", "property float y", "property float z"]
    if vertex_scalar is not None:
        if len(vertex_scalar) != nv:
            raise MeshError("vertex_scalar length mismatch")
        header.append(f"property float {scalar_name}")
    header += [f"element face {nf}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        verts = mesh.vertices.astype("<f4")
        if vertex_scalar is not None:
            verts = np.column_stack([verts, np.asarray(vertex_scalar, dtype="<f4")])
        fh.write(verts.astype("<f4").tobytes())
        counts = np.full((nf, 1), 3, dtype=np.uint8)
        fh.write(
            b"".join(
                counts[i].tobytes() + mesh.faces[i].astype("<i4").tobytes()
                for i in range(nf)
            )
        )


def load_ply(path: str | Path) -> TriMesh:
    """Reads ascii or binary_little_endian PLY with xyz vertices and triangle faces."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    fmt = None
    nv = nf = 0
    vprops: list[str] = []
    element = None
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                nv = int(parts[2])
            elif element == "face":
                nf = int(parts[2])
        elif parts[0] == "property" and element == "vertex" and parts[1] != "list":
            vprops.append(parts[2])
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshError(f"unsupported PLY format {fmt!r}")
    xyz = [vprops.index(k) for k in ("x", "y", "z")]
    if fmt == "ascii":
        lines = data[end:].decode("ascii").split("\n")
        verts = np.array(
            [[float(t) for t in lines[i].split()] for i in range(nv)], dtype=np.float64
        )
        faces = []
        for i in range(nv, nv + nf):
            toks = [int(t) for t in lines[i].split()]
            idx = toks[1 : 1 + toks[0]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
        return TriMesh(verts[:, xyz], np.array(faces, dtype=np.int64))
    stride = 4 * len(vprops)
    verts = np.frombuffer(data, dtype="<f4", count=nv * len(vprops), offset=end)
    verts = verts.reshape(nv, len(vprops))[:, xyz].astype(np.float64)
    offset = end + nv * stride
    faces = []
    for _ in range(nf):
        cnt = data[offset]
        offset += 1
        idx = np.frombuffer(data, dtype="<i4", count=cnt, offset=offset).tolist()
        offset += 4 * cnt
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def load_mesh(path: str | Path) -> TriMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    if path.suffix.lower() == ".ply":
        return load_ply(path)
    raise MeshError(f"unsupported mesh format: {path.suffix}")


def load_instance_manifest(path: str | Path) -> list[tuple[int, TriMesh]]:
    """Manifest JSON: {"instance_id": ..., "objects": [{"category_id", "path"}]}.

    Relative mesh paths resolve against the manifest's directory.  Returns
    raw (un-normalized) labeled meshes plus the declared instance id.
    """
    path = Path(path)
    spec = json.loads(path.read_text())
    raw = []
    for entry in spec["objects"]:
        mesh_path = Path(entry["path"])
        if not mesh_path.is_absolute():
            mesh_path = path.parent / mesh_path
        raw.append((int(entry["category_id"]), load_mesh(mesh_path)))
    return spec["instance_id"], raw


def save_instance_manifest(
    instance: MultiObjectInstance, out_dir: str | Path, mesh_format: str = "obj"
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for cat, mesh in instance.objects:
        name = f"{instance.instance_id}_cat{cat}.{mesh_format}"
        if mesh_format == "obj":
            save_obj(mesh, out_dir / name)
        else:
            save_ply(mesh, out_dir / name)
        entries.append({"category_id": cat, "path": name})
    manifest = out_dir / f"{instance.instance_id}.json"
    manifest.write_text(
        json.dumps({"instance_id": instance.instance_id, "objects": entries}, indent=2)
    )
    return manifest
