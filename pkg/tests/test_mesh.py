import json

import numpy as np
import pytest

from multisdf.shape_data.mesh import (MeshError, TriMesh, load_instance_manifest,
                                      load_mesh, load_obj, load_ply, normalize_instance,
                                      save_instance_manifest, save_obj, save_ply)
from multisdf.toys import _box_mesh, _icosphere


def shifted(mesh, offset):
    return TriMesh(mesh.vertices + np.asarray(offset), mesh.faces.copy())


def test_watertight_cube(unit_cube):
    assert unit_cube.is_watertight()
    assert len(unit_cube.boundary_edges()) == 0
    assert unit_cube.signed_volume() == pytest.approx(8.0)
    assert unit_cube.area() == pytest.approx(24.0)


def test_open_mesh_lists_boundary_edges(unit_cube):
    open_mesh = TriMesh(unit_cube.vertices, unit_cube.faces[:-1])
    bad = open_mesh.boundary_edges()
    assert len(bad) == 3  # removing one triangle exposes its three edges
    with pytest.raises(MeshError, match="offending edges"):
        normalize_instance([(0, open_mesh)])


def test_normalize_two_cubes_matches_vertex_oracle(unit_cube):
    # oracle: shared transform must map the farthest vertex to radius exactly 1
    raw = [(0, shifted(unit_cube, [2, 0, 0])), (1, shifted(unit_cube, [-2, 0, 0]))]
    allv = np.concatenate([m.vertices for _, m in raw])
    center = 0.5 * (allv.min(0) + allv.max(0))
    expected_scale = 1.0 / np.linalg.norm(allv - center, axis=1).max()
    instance, xf = normalize_instance(raw)
    assert xf.scale == pytest.approx(expected_scale)
    assert xf.scale == pytest.approx(1 / np.sqrt(11))
    radii = np.linalg.norm(instance.all_vertices(), axis=1)
    assert radii.max() <= 1 + 1e-9
    assert radii.max() == pytest.approx(1.0)
    # relative poses preserved: centers still 4/sqrt(11) apart when rescaled
    c0 = instance.mesh(0).vertices.mean(0)
    c1 = instance.mesh(1).vertices.mean(0)
    assert np.linalg.norm(c0 - c1) == pytest.approx(4 * xf.scale)


def test_normalize_identity_for_unit_sphere_mesh():
    ico = _icosphere(2)  # vertices exactly at radius 1, bbox symmetric
    instance, xf = normalize_instance([(0, ico)])
    assert xf.scale == pytest.approx(1.0)
    np.testing.assert_allclose(xf.translation, 0.0, atol=1e-12)
    np.testing.assert_allclose(instance.mesh(0).vertices, ico.vertices, atol=1e-12)


def test_normalize_roundtrip(unit_cube):
    raw = [(0, shifted(unit_cube, [3, 1, -2]))]
    instance, xf = normalize_instance(raw)
    back = xf.invert(instance.mesh(0).vertices)
    np.testing.assert_allclose(back, raw[0][1].vertices, atol=1e-12)


def test_normalize_rejects_empty_category(unit_cube):
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(MeshError, match="category 1"):
        normalize_instance([(0, unit_cube), (1, empty)])


def test_category_ids_must_be_dense(unit_cube):
    from multisdf.shape_data.mesh import MultiObjectInstance

    with pytest.raises(MeshError, match="category ids"):
        MultiObjectInstance("x", [(0, unit_cube), (2, unit_cube)])


def test_obj_roundtrip(tmp_path, unit_cube):
    path = tmp_path / "cube.obj"
    save_obj(unit_cube, path)
    back = load_obj(path)
    np.testing.assert_allclose(back.vertices, unit_cube.vertices)
    np.testing.assert_array_equal(back.faces, unit_cube.faces)


def test_ply_roundtrip_with_scalar(tmp_path, unit_cube):
    path = tmp_path / "cube.ply"
    scalar = np.linspace(0, 1, len(unit_cube.vertices))
    save_ply(unit_cube, path, vertex_scalar=scalar)
    back = load_ply(path)
    np.testing.assert_allclose(back.vertices, unit_cube.vertices, atol=1e-6)
    np.testing.assert_array_equal(back.faces, unit_cube.faces)


def test_manifest_roundtrip(tmp_path, unit_cube):
    from multisdf.shape_data.mesh import MultiObjectInstance

    instance = MultiObjectInstance(
        "demo", [(0, unit_cube), (1, shifted(unit_cube, [3, 0, 0]))]
    )
    manifest = save_instance_manifest(instance, tmp_path)
    iid, raw = load_instance_manifest(manifest)
    assert iid == "demo"
    assert [c for c, _ in raw] == [0, 1]
    np.testing.assert_allclose(raw[1][1].vertices, unit_cube.vertices + [3, 0, 0])
