import numpy as np
import pytest
import torch

from multisdf.fields import ModelConfig, ModelState
from multisdf.reconstruction import (CorrespondenceMap, SdfGrid, edit_codes,
                                     evaluate_grid, extract_iso_mesh,
                                     extract_templates, make_field,
                                     reconstruct_instance)


def sphere_field(p):
    return (np.linalg.norm(p, axis=1) - 0.5)[:, None]


def two_channel_field(p):
    a = np.linalg.norm(p - np.array([0.3, 0, 0]), axis=1) - 0.25
    b = np.linalg.norm(p + np.array([0.3, 0, 0]), axis=1) - 0.25
    return np.stack([a, b], axis=1)


def test_grid_r2_equals_direct_eval():
    grid = evaluate_grid(two_channel_field, resolution=2, bounds=1.0)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                       dtype=np.float64)
    expected = two_channel_field(corners).reshape(2, 2, 2, 2)
    np.testing.assert_allclose(grid.values, expected, rtol=1e-6)


def test_grid_chunk_transparency():
    a = evaluate_grid(sphere_field, resolution=24, bounds=1.1, chunk=97)
    b = evaluate_grid(sphere_field, resolution=24, bounds=1.1, chunk=100000)
    assert np.array_equal(a.values, b.values)


def test_grid_analytic_injection_exact():
    grid = evaluate_grid(sphere_field, resolution=16, bounds=1.0)
    axis = grid.axis()
    expected = sphere_field(
        np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    ).astype(np.float32).reshape(16, 16, 16, 1)
    np.testing.assert_array_equal(grid.values, expected)


def test_grid_resolution_validation():
    with pytest.raises(ValueError):
        evaluate_grid(sphere_field, resolution=1)


def test_marching_cubes_sphere_bounds_and_volume():
    grid = evaluate_grid(sphere_field, resolution=128, bounds=1.1)
    mesh = extract_iso_mesh(grid, 0)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    h = grid.spacing
    assert radii.min() >= 0.5 - h and radii.max() <= 0.5 + h
    analytic = 4.0 / 3.0 * np.pi * 0.5**3
    assert mesh.signed_volume() == pytest.approx(analytic, rel=0.01)
    assert mesh.is_watertight()


def test_marching_cubes_empty_and_orientation():
    all_pos = evaluate_grid(lambda p: np.ones((len(p), 1)), resolution=8, bounds=1.0)
    empty = extract_iso_mesh(all_pos, 0)
    assert len(empty.faces) == 0
    grid = evaluate_grid(two_channel_field, resolution=48, bounds=1.0)
    for ch in (0, 1):
        mesh = extract_iso_mesh(grid, ch)
        assert mesh.signed_volume() > 0  # outward orientation invariant


def test_marching_cubes_rejects_nonfinite():
    grid = SdfGrid(values=np.full((4, 4, 4, 1), np.nan, dtype=np.float32),
                   bounds=1.0, resolution=4)
    with pytest.raises(ValueError, match="non-finite"):
        extract_iso_mesh(grid, 0)


def test_reconstruct_instance_deterministic(tiny_state):
    codes = np.full((2, 12), 0.01)
    a = reconstruct_instance(tiny_state, codes, resolution=24, bounds=1.0)
    b = reconstruct_instance(tiny_state, codes, resolution=24, bounds=1.0)
    for (ja, ma), (jb, mb) in zip(a, b):
        assert ja == jb
        assert np.array_equal(ma.vertices, mb.vertices)
        assert np.array_equal(ma.faces, mb.faces)


def test_extract_templates_never_fails_on_random_init(tiny_state):
    # untrained fields may produce empty or arbitrary meshes; must not raise
    out = extract_templates(tiny_state, resolution=16, bounds=1.0)
    assert [j for j, _ in out] == [0, 1]
    out2 = extract_templates(tiny_state, resolution=16, bounds=1.0)
    for (_, ma), (_, mb) in zip(out, out2):
        assert np.array_equal(ma.vertices, mb.vertices)


def test_edit_codes_identity_and_isolation():
    codes = np.random.default_rng(0).normal(0, 0.01, (3, 16))
    direction = np.ones(16)
    same = edit_codes(codes, 1, direction, 0.0)
    np.testing.assert_array_equal(same, codes)
    moved = edit_codes(codes, 1, direction, 0.5)
    np.testing.assert_array_equal(moved[0], codes[0])
    np.testing.assert_array_equal(moved[2], codes[2])
    np.testing.assert_allclose(moved[1], codes[1] + 0.5, atol=1e-12)
    # interpolation endpoints reproduce the originals
    a, b = codes[1], codes[1] + direction
    for t, expect in ((0.0, a), (1.0, b)):
        interp = (1 - t) * a + t * b
        np.testing.assert_allclose(interp, expect, atol=1e-12)


def test_correspondence_csv(tmp_path):
    cmap = CorrespondenceMap(
        source=np.zeros((2, 3)), target=np.ones((2, 3)),
        template_source=np.zeros((2, 3)), template_target=np.ones((2, 3)),
        distance=np.array([0.1, 0.2]),
    )
    cmap.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().strip().splitlines()
    assert lines[0].startswith("src_x")
    assert len(lines) == 3
