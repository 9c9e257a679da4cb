"""Cross-implementation agreement between the reference toolkit and the
native kernel CLI.  Skipped entirely when the kernel is not built."""

import json
import subprocess
import time

import numpy as np
import pytest

from multisdf import kernel_bridge
from multisdf.cli import main
from multisdf.metrics import chamfer, emd, intersection_volume, voxel_occupancy
from multisdf.shape_data.archive import read_archive
from multisdf.shape_data.mesh import load_instance_manifest, normalize_instance, save_obj
from multisdf.shape_data.sdf import signed_distance_batch
from multisdf.toys import _icosphere, TriMesh

KERNEL = kernel_bridge.find_kernel("auto")
pytestmark = [
    pytest.mark.kernel,
    pytest.mark.skipif(KERNEL is None, reason="native kernel not built"),
]


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("kernel_toys")
    assert main(["make-toy", "--out", str(out), "--n-instances", "1", "--m", "2",
                 "--seed", "3", "--tessellation", "1"]) == 0
    return out / "blob_3_000.json"


def test_archive_bytes_identical(toy_manifest, tmp_path):
    ref = tmp_path / "ref.msdf"
    assert main(["preprocess", "--manifest", str(toy_manifest), "--out", str(ref),
                 "--seed", "7", "--n-surface", "500", "--n-free", "900",
                 "--eps-c", "0.02"]) == 0
    native = tmp_path / "native.msdf"
    kernel_bridge.kernel_preprocess(KERNEL, toy_manifest, native, seed=7,
                                    n_surface=500, n_free=900, bounds=1.5, eps_c=0.02)
    assert ref.read_bytes() == native.read_bytes()
    # and the primary reads the kernel-written archive losslessly
    archive = read_archive(native)
    assert archive.n_surface == 500 and archive.n_free == 900


def test_sdf_batch_max_deviation(toy_manifest, tmp_path):
    iid, raw = load_instance_manifest(toy_manifest)
    instance, _ = normalize_instance(raw, iid)
    rng = np.random.default_rng(0)
    queries = rng.uniform(-1.2, 1.2, (1000, 3))
    ref = signed_distance_batch(instance.meshes(), queries).astype(np.float32)
    got = kernel_bridge.kernel_sdf_batch(KERNEL, toy_manifest, queries, tmp_path)
    assert np.abs(got - ref).max() < 1e-5


def test_sdf_batch_empty_queries(toy_manifest, tmp_path):
    got = kernel_bridge.kernel_sdf_batch(KERNEL, toy_manifest,
                                         np.zeros((0, 3)), tmp_path)
    assert got.shape == (0, 2)


def test_chamfer_within_1e9_relative(tmp_path):
    rng = np.random.default_rng(1)
    for trial in range(10):
        a = rng.normal(0, 1, (rng.integers(50, 400), 3))
        b = rng.normal(0, 1, (rng.integers(50, 400), 3))
        ref = chamfer(a, b)
        got = kernel_bridge.kernel_chamfer(KERNEL, a, b, tmp_path)
        assert abs(got - ref) <= 1e-9 * abs(ref)


def test_emd_cost_exactly_equal(tmp_path):
    rng = np.random.default_rng(2)
    for trial in range(5):
        a = rng.normal(0, 1, (300, 3))
        b = rng.normal(0, 1, (300, 3))
        ref = emd(a, b, n_sub=64, seed=trial)
        got = kernel_bridge.kernel_emd(KERNEL, a, b, 64, trial, tmp_path)
        assert got == ref


def test_iv_voxel_counts_exactly_equal(tmp_path):
    ico = _icosphere(3)
    s1 = TriMesh(ico.vertices * 0.5 + np.array([-0.4, 0, 0]), ico.faces)
    s2 = TriMesh(ico.vertices * 0.5 + np.array([0.4, 0, 0]), ico.faces)
    p1, p2 = tmp_path / "s1.obj", tmp_path / "s2.obj"
    save_obj(s1, p1)
    save_obj(s2, p2)
    result = kernel_bridge.kernel_iv(KERNEL, [p1, p2], 128, 1.0)
    occ = voxel_occupancy(s1, 128).astype(np.int16) + voxel_occupancy(s2, 128)
    assert result["voxels"] == int((occ >= 2).sum())
    assert result["iv"] == intersection_volume([s1, s2], voxel_res=128)


def test_contacts_match_archive(toy_manifest, tmp_path):
    archive_path = tmp_path / "c.msdf"
    assert main(["preprocess", "--manifest", str(toy_manifest), "--out",
                 str(archive_path), "--seed", "2", "--n-surface", "300",
                 "--n-free", "30000", "--eps-c", "0.04"]) == 0
    archive = read_archive(archive_path)
    assert archive.n_contact > 0
    result = kernel_bridge.kernel_contacts(KERNEL, archive_path, 0.04)
    assert result["count"] == archive.n_contact
    got = [(e["index"], e["gamma"]) for e in result["entries"]]
    expected = [(int(i), g.tolist()) for i, g in
                zip(archive.contact_index, archive.contact_sets)]
    assert got == expected


def test_eval_cli_kernel_route_matches_reference(toy_manifest, tmp_path):
    iid, raw = load_instance_manifest(toy_manifest)
    mesh_dir = tmp_path / "meshes"
    mesh_dir.mkdir()
    for cat, mesh in raw:
        save_obj(mesh, mesh_dir / f"cat{cat}.obj")
    out_ref = tmp_path / "ref"
    out_nat = tmp_path / "nat"
    base = ["eval", "--pred", str(mesh_dir), "--gt", str(mesh_dir),
            "--n-points", "400", "--emd-sub", "32", "--voxel-res", "32",
            "--seed", "5"]
    assert main(base + ["--out", str(out_ref), "--kernel", "reference"]) == 0
    assert main(base + ["--out", str(out_nat), "--kernel", "native"]) == 0
    ref = json.loads((out_ref / "report.json").read_text())
    nat = json.loads((out_nat / "report.json").read_text())
    assert nat["rows"] == ref["rows"]
    assert nat["iv"] == ref["iv"]


@pytest.mark.slow
def test_throughput_informational(tmp_path, capsys):
    """Criterion: kernel >= 10x reference on the 200k-surface-sample fixture
    (informational, not gating).  Dense tessellated spheres make the distance
    queries compute-bound; byte equality of the outputs is still asserted."""
    out = tmp_path / "dense"
    assert main(["make-toy", "--out", str(out), "--n-instances", "1", "--m", "2",
                 "--seed", "4", "--tessellation", "2",
                 "--kinds", "sphere,sphere"]) == 0
    manifest = out / "blob_4_000.json"
    t0 = time.time()
    kernel_bridge.kernel_preprocess(KERNEL, manifest, tmp_path / "k.msdf",
                                    seed=1, n_surface=200_000, n_free=20_000,
                                    bounds=1.5, eps_c=0.02)
    t_kernel = time.time() - t0
    t0 = time.time()
    assert main(["preprocess", "--manifest", str(manifest), "--out",
                 str(tmp_path / "r.msdf"), "--seed", "1", "--n-surface", "200000",
                 "--n-free", "20000", "--eps-c", "0.02"]) == 0
    t_ref = time.time() - t0
    with capsys.disabled():
        print(f"\n[throughput] 200k dense fixture: kernel {t_kernel:.1f}s, "
              f"reference {t_ref:.1f}s, ratio {t_ref / max(t_kernel, 1e-9):.1f}x")
    assert (tmp_path / "k.msdf").read_bytes() == (tmp_path / "r.msdf").read_bytes()
