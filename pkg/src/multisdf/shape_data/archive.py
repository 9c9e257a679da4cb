"""MSDF1 sample-archive container.

Layout (all little-endian):

    magic   6 bytes  "MSDF1\\0"
    u32     version (currently 1)
    u32     m
    u64     n_surface
    u64     n_free
    f32     bounds
    f32     eps_c
    u64     seed
    f32[n_surface*3]   surface positions
    f32[n_surface*3]   surface normals
    u16[n_surface]     surface category ids
    f32[n_surface*m]   surface sdf vectors
    f32[n_free*3]      free positions
    f32[n_free*m]      free sdf vectors
    u64     contact count
    per contact: u64 free_index, u16 set_size, u16[set_size] category ids

Masked (missing) categories are encoded as NaN columns of the sdf blocks;
the format itself is unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MAGIC = b"MSDF1\x00"
VERSION = 1


class ArchiveFormatError(ValueError):
    """Malformed MSDF1 payload; message names the failing byte offset."""


@dataclass
class SampleArchive:
    m: int
    bounds: float
    eps_c: float
    seed: int
    surface_positions: np.ndarray  # (n_surface, 3) f32
    surface_normals: np.ndarray  # (n_surface, 3) f32
    surface_category: np.ndarray  # (n_surface,) u16
    surface_sdf: np.ndarray  # (n_surface, m) f32
    free_positions: np.ndarray  # (n_free, 3) f32
    free_sdf: np.ndarray  # (n_free, m) f32
    contact_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint64))
    contact_sets: list[np.ndarray] = field(default_factory=list)

    @property
    def n_surface(self) -> int:
        return len(self.surface_positions)

    @property
    def n_free(self) -> int:
        return len(self.free_positions)

    @property
    def n_contact(self) -> int:
        return len(self.contact_index)

    def present_categories(self) -> np.ndarray:
        """Categories whose GT sdf column carries data (not fully masked)."""
        masked = np.isnan(self.free_sdf).all(axis=0)
        return np.flatnonzero(~masked)

    def mask_categories(self, missing: list[int]) -> "SampleArchive":
        """Archive with GT for `missing` categories removed (NaN columns).

        Surface rows belonging to a missing category are dropped entirely;
        contact sets lose missing members and entries falling under two."""
        missing = sorted(set(int(c) for c in missing))
        if not missing:
            return self
        if len(missing) >= self.m:
            raise ValueError("cannot mask every category")
        keep_rows = ~np.isin(self.surface_category, missing)
        s_sdf = self.surface_sdf[keep_rows].copy()
        f_sdf = self.free_sdf.copy()
        s_sdf[:, missing] = np.nan
        f_sdf[:, missing] = np.nan
        new_index, new_sets = [], []
        for idx, gset in zip(self.contact_index, self.contact_sets):
            kept = np.array([g for g in gset if g not in missing], dtype=np.uint16)
            if len(kept) >= 2:
                new_index.append(idx)
                new_sets.append(kept)
        return replace(
            self,
            surface_positions=self.surface_positions[keep_rows],
            surface_normals=self.surface_normals[keep_rows],
            surface_category=self.surface_category[keep_rows],
            surface_sdf=s_sdf,
            free_sdf=f_sdf,
            contact_index=np.array(new_index, dtype=np.uint64),
            contact_sets=new_sets,
        )

    def equals(self, other: "SampleArchive") -> bool:
        if (self.m, self.seed) != (other.m, other.seed):
            return False
        if (
            np.float32(self.bounds) != np.float32(other.bounds)
            or np.float32(self.eps_c) != np.float32(other.eps_c)
        ):
            return False
        arrays = [
            ("surface_positions", "surface_normals", "surface_category", "surface_sdf"),
            ("free_positions", "free_sdf", "contact_index"),
        ]
        for name in [n for group in arrays for n in group]:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or not np.array_equal(a.view(np.uint8), b.view(np.uint8)):
                return False
        if len(self.contact_sets) != len(other.contact_sets):
            return False
        return all(np.array_equal(x, y) for x, y in zip(self.contact_sets, other.contact_sets))


def write_archive(archive: SampleArchive, path: str | Path) -> None:
    ns, nf, m = archive.n_surface, archive.n_free, archive.m
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQQffQ", VERSION, m, ns, nf,
                             archive.bounds, archive.eps_c, archive.seed))
        fh.write(np.ascontiguousarray(archive.surface_positions, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(archive.surface_normals, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(archive.surface_category, dtype="<u2").tobytes())
        fh.write(np.ascontiguousarray(archive.surface_sdf, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(archive.free_positions, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(archive.free_sdf, dtype="<f4").tobytes())
        fh.write(struct.pack("<Q", archive.n_contact))
        for idx, gset in zip(archive.contact_index, archive.contact_sets):
            fh.write(struct.pack("<QH", int(idx), len(gset)))
            fh.write(np.ascontiguousarray(gset, dtype="<u2").tobytes())


def read_archive(path: str | Path) -> SampleArchive:
    data = Path(path).read_bytes()

    def need(offset: int, count: int, what: str) -> None:
        if offset + count > len(data):
            raise ArchiveFormatError(
                f"truncated archive: need {count} bytes for {what} at offset {offset}, "
                f"file has {len(data)}"
            )

    need(0, 6, "magic")
    if data[:6] != MAGIC:
        raise ArchiveFormatError(f"bad magic at offset 0: {data[:6]!r}")
    need(6, struct.calcsize("<IIQQffQ"), "header")
    version, m, ns, nf, bounds, eps_c, seed = struct.unpack_from("<IIQQffQ", data, 6)
    if version != VERSION:
        raise ArchiveFormatError(f"unsupported version {version} at offset 6")
    offset = 6 + struct.calcsize("<IIQQffQ")

    def block(dtype, count, shape, what):
        nonlocal offset
        nbytes = np.dtype(dtype).itemsize * count
        need(offset, nbytes, what)
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        offset += nbytes
        return arr.copy()

    s_pos = block("<f4", ns * 3, (ns, 3), "surface positions")
    s_nrm = block("<f4", ns * 3, (ns, 3), "surface normals")
    s_cat = block("<u2", ns, (ns,), "surface category ids")
    s_sdf = block("<f4", ns * m, (ns, m), "surface sdf vectors")
    f_pos = block("<f4", nf * 3, (nf, 3), "free positions")
    f_sdf = block("<f4", nf * m, (nf, m), "free sdf vectors")

    need(offset, 8, "contact count")
    (n_contact,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    contact_index = np.empty(n_contact, dtype=np.uint64)
    contact_sets: list[np.ndarray] = []
    for k in range(n_contact):
        need(offset, 10, f"contact entry {k}")
        idx, size = struct.unpack_from("<QH", data, offset)
        offset += 10
        need(offset, 2 * size, f"contact set {k}")
        gset = np.frombuffer(data, dtype="<u2", count=size, offset=offset).copy()
        offset += 2 * size
        contact_index[k] = idx
        contact_sets.append(gset)
    if offset != len(data):
        raise ArchiveFormatError(f"trailing {len(data) - offset} bytes at offset {offset}")

    return SampleArchive(
        m=m, bounds=bounds, eps_c=eps_c, seed=seed,
        surface_positions=s_pos, surface_normals=s_nrm,
        surface_category=s_cat, surface_sdf=s_sdf,
        free_positions=f_pos, free_sdf=f_sdf,
        contact_index=contact_index, contact_sets=contact_sets,
    )
