"""Subprocess bridge to the native geometry kernel.

The kernel is a standalone CLI speaking the same file formats (MSDF1
archives, OBJ/PLY meshes, and the two tiny binary containers below for point
clouds and SDF batches).  Everything it does has a reference implementation
in this package; the bridge only routes compute-bound paths when requested.
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import subprocess
from pathlib import Path

import numpy as np

PTS_MAGIC = b"PTS1\x00\x00"
SDV_MAGIC = b"SDV1\x00\x00"


class KernelError(RuntimeError):
    pass


def write_points(points: np.ndarray, path: str | Path) -> None:
    points = np.ascontiguousarray(points, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(PTS_MAGIC)
        fh.write(struct.pack("<Q", len(points)))
        fh.write(points.tobytes())


def read_points(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:6] != PTS_MAGIC:
        raise KernelError(f"bad points magic {data[:6]!r}")
    (n,) = struct.unpack_from("<Q", data, 6)
    return np.frombuffer(data, dtype="<f8", count=n * 3, offset=14).reshape(n, 3).copy()


def write_sdf_batch(values: np.ndarray, path: str | Path) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(SDV_MAGIC)
        fh.write(struct.pack("<QI", values.shape[0], values.shape[1]))
        fh.write(values.tobytes())


def read_sdf_batch(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:6] != SDV_MAGIC:
        raise KernelError(f"bad sdf-batch magic {data[:6]!r}")
    n, m = struct.unpack_from("<QI", data, 6)
    return np.frombuffer(data, dtype="<f4", count=n * m, offset=18).reshape(n, m).copy()


def find_kernel(mode: str = "auto") -> list[str] | None:
    """Resolve the kernel launch command, or None in reference mode.

    Order: $MULTISDF_KERNEL (a command line), `msdf-kernel` on PATH, then the
    in-repo build at kernel/dist/cli.js run through node.
    """
    if mode == "reference":
        return None
    env = os.environ.get("MULTISDF_KERNEL")
    if env:
        return env.split()
    exe = shutil.which("msdf-kernel")
    if exe:
        return [exe]
    here = Path(__file__).resolve()
    for root in [*here.parents, Path.cwd()]:
        candidate = root / "kernel" / "dist" / "cli.js"
        if candidate.exists():
            node = shutil.which("node")
            if node:
                return [node, str(candidate)]
    if mode == "native":
        raise KernelError(
            "no native kernel found: set MULTISDF_KERNEL, add msdf-kernel to "
            "PATH, or build kernel/ (npm run build)"
        )
    return None


def run_kernel(cmd: list[str], *args: str) -> dict:
    """Invoke the kernel; it prints one JSON object on stdout."""
    proc = subprocess.run(
        [*cmd, *args], capture_output=True, text=True
    )
    if proc.returncode != 0:
        raise KernelError(
            f"kernel failed ({proc.returncode}): {proc.stderr.strip() or proc.stdout.strip()}"
        )
    try:
        return json.loads(proc.stdout.strip().splitlines()[-1])
    except (json.JSONDecodeError, IndexError) as err:
        raise KernelError(f"kernel produced no JSON: {proc.stdout[:500]!r}") from err


def kernel_preprocess(cmd: list[str], manifest: Path, out: Path, *, seed: int,
                      n_surface: int, n_free: int, bounds: float, eps_c: float) -> dict:
    return run_kernel(
        cmd, "sample", "--manifest", str(manifest), "--out", str(out),
        "--seed", str(seed), "--n-surface", str(n_surface), "--n-free", str(n_free),
        "--bounds", repr(bounds), "--eps-c", repr(eps_c),
    )


def kernel_sdf_batch(cmd: list[str], manifest: Path, queries: np.ndarray,
                     workdir: Path) -> np.ndarray:
    qpath = workdir / "queries.pts"
    opath = workdir / "sdf.sdv"
    write_points(queries, qpath)
    run_kernel(cmd, "sdf-batch", "--manifest", str(manifest),
               "--queries", str(qpath), "--out", str(opath))
    return read_sdf_batch(opath)


def kernel_chamfer(cmd: list[str], a: np.ndarray, b: np.ndarray, workdir: Path) -> float:
    pa, pb = workdir / "cd_a.pts", workdir / "cd_b.pts"
    write_points(a, pa)
    write_points(b, pb)
    return float(run_kernel(cmd, "chamfer", "--a", str(pa), "--b", str(pb))["cd"])


def kernel_emd(cmd: list[str], a: np.ndarray, b: np.ndarray, n_sub: int, seed: int,
               workdir: Path) -> float:
    pa, pb = workdir / "emd_a.pts", workdir / "emd_b.pts"
    write_points(a, pa)
    write_points(b, pb)
    return float(
        run_kernel(cmd, "emd", "--a", str(pa), "--b", str(pb),
                   "--n-sub", str(n_sub), "--seed", str(seed))["emd"]
    )


def kernel_iv(cmd: list[str], mesh_paths: list[Path], resolution: int,
              bounds: float) -> dict:
    return run_kernel(
        cmd, "iv", "--meshes", ",".join(str(p) for p in mesh_paths),
        "--resolution", str(resolution), "--bounds", repr(bounds),
    )


def kernel_contacts(cmd: list[str], archive: Path, eps_c: float) -> dict:
    return run_kernel(cmd, "contacts", "--archive", str(archive), "--eps-c", repr(eps_c))
