import numpy as np
import pytest

from multisdf.shape_data.mesh import MeshError, TriMesh
from multisdf.shape_data.sdf import (signed_distance, signed_distance_batch,
                                     signed_distance_many, unsigned_distance,
                                     winding_number)
from multisdf.toys import chord_error, _icosphere


def test_cube_center_and_outside(unit_cube):
    assert signed_distance(unit_cube, [0, 0, 0]) == pytest.approx(-1.0)
    assert signed_distance(unit_cube, [2, 0, 0]) == pytest.approx(1.0)
    assert signed_distance(unit_cube, [0.5, 0.5, 0.5]) == pytest.approx(-0.5)
    assert signed_distance(unit_cube, [2, 2, 2]) == pytest.approx(np.sqrt(3))


def test_winding_number_inside_outside(unit_cube):
    w = winding_number(unit_cube, np.array([[0, 0, 0], [0.9, 0.9, 0.9], [1.5, 0, 0]]))
    assert w[0] == pytest.approx(1.0, abs=1e-9)
    assert w[1] == pytest.approx(1.0, abs=1e-9)
    assert w[2] == pytest.approx(0.0, abs=1e-9)


def test_icosphere_vs_analytic_oracle(icosphere_half):
    # analytic oracle: sphere radius 0.5; tolerance = max facet deviation
    tol = chord_error(3) * 0.5
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.9, 0.9, (500, 3))
    analytic = np.linalg.norm(pts, axis=1) - 0.5
    got = signed_distance_many(icosphere_half, pts)
    assert np.abs(got - analytic).max() <= tol + 1e-12
    assert signed_distance(icosphere_half, [0.25, 0, 0]) == pytest.approx(-0.25, abs=tol)


def test_sign_matches_normal_displacement(icosphere_half):
    # displacing a surface point by +/- delta along its normal flips the sign
    delta = 1e-3
    mesh = icosphere_half
    centroids = mesh.triangles.mean(axis=1)
    normals = mesh.face_normals()
    pick = np.random.default_rng(1).choice(len(centroids), 200, replace=False)
    outside = signed_distance_many(mesh, centroids[pick] + delta * normals[pick])
    inside = signed_distance_many(mesh, centroids[pick] - delta * normals[pick])
    assert (outside > 0).all()
    assert (inside < 0).all()


def test_sign_matches_displacement_on_cube(unit_cube):
    delta = 1e-3
    centroids = unit_cube.triangles.mean(axis=1)
    normals = unit_cube.face_normals()
    assert (signed_distance_many(unit_cube, centroids + delta * normals) > 0).all()
    assert (signed_distance_many(unit_cube, centroids - delta * normals) < 0).all()


def test_unsigned_matches_abs(icosphere_half):
    pts = np.random.default_rng(2).uniform(-1, 1, (100, 3))
    np.testing.assert_allclose(
        unsigned_distance(icosphere_half, pts),
        np.abs(signed_distance_many(icosphere_half, pts)),
    )


def test_chunking_transparency(icosphere_half):
    pts = np.random.default_rng(3).uniform(-1, 1, (64, 3))
    a = unsigned_distance(icosphere_half, pts, chunk=7)
    b = unsigned_distance(icosphere_half, pts, chunk=64)
    assert np.array_equal(a, b)
    wa = winding_number(icosphere_half, pts, chunk=5)
    wb = winding_number(icosphere_half, pts, chunk=64)
    np.testing.assert_allclose(wa, wb, rtol=0, atol=1e-12)


def test_batch_stacks_per_mesh_columns(unit_cube, icosphere_half):
    pts = np.random.default_rng(4).uniform(-1, 1, (20, 3))
    out = signed_distance_batch([unit_cube, icosphere_half], pts)
    np.testing.assert_array_equal(out[:, 0], signed_distance_many(unit_cube, pts))
    np.testing.assert_array_equal(out[:, 1], signed_distance_many(icosphere_half, pts))


def test_signed_distance_requires_watertight(unit_cube):
    open_mesh = TriMesh(unit_cube.vertices, unit_cube.faces[:-1])
    with pytest.raises(MeshError):
        signed_distance(open_mesh, [0, 0, 0])
