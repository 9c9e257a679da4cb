import numpy as np
import pytest

from multisdf.shape_data.archive import (ArchiveFormatError, SampleArchive,
                                         read_archive, write_archive)


def make_archive(m=2, ns=7, nf=11, seed=42) -> SampleArchive:
    rng = np.random.default_rng(seed)
    return SampleArchive(
        m=m, bounds=1.5, eps_c=0.01, seed=seed,
        surface_positions=rng.normal(size=(ns, 3)).astype(np.float32),
        surface_normals=rng.normal(size=(ns, 3)).astype(np.float32),
        surface_category=rng.integers(0, m, ns).astype(np.uint16),
        surface_sdf=rng.normal(size=(ns, m)).astype(np.float32),
        free_positions=rng.normal(size=(nf, 3)).astype(np.float32),
        free_sdf=rng.normal(size=(nf, m)).astype(np.float32),
        contact_index=np.array([2, 5], dtype=np.uint64),
        contact_sets=[np.array([0, 1], dtype=np.uint16), np.array([0, 1], dtype=np.uint16)],
    )


def test_roundtrip_identity(tmp_path):
    archive = make_archive()
    path = tmp_path / "a.msdf"
    write_archive(archive, path)
    back = read_archive(path)
    assert back.equals(archive)
    assert back.n_surface == 7 and back.n_free == 11 and back.n_contact == 2


def test_write_is_deterministic(tmp_path):
    archive = make_archive()
    write_archive(archive, tmp_path / "a.msdf")
    write_archive(archive, tmp_path / "b.msdf")
    assert (tmp_path / "a.msdf").read_bytes() == (tmp_path / "b.msdf").read_bytes()


def test_corrupt_magic_names_offset(tmp_path):
    path = tmp_path / "a.msdf"
    write_archive(make_archive(), path)
    data = bytearray(path.read_bytes())
    data[0] = ord("X")
    path.write_bytes(bytes(data))
    with pytest.raises(ArchiveFormatError, match="offset 0"):
        read_archive(path)


def test_truncation_errors(tmp_path):
    path = tmp_path / "a.msdf"
    write_archive(make_archive(), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ArchiveFormatError, match="truncated"):
        read_archive(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "a.msdf"
    write_archive(make_archive(), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ArchiveFormatError, match="trailing"):
        read_archive(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "a.msdf"
    write_archive(make_archive(), path)
    data = bytearray(path.read_bytes())
    data[6] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(ArchiveFormatError, match="version"):
        read_archive(path)


def test_nan_payload_roundtrips(tmp_path):
    archive = make_archive()
    archive.free_sdf[:, 1] = np.nan
    archive.surface_sdf[:, 1] = np.nan
    path = tmp_path / "a.msdf"
    write_archive(archive, path)
    back = read_archive(path)
    assert back.equals(archive)  # bitwise comparison handles NaN
    np.testing.assert_array_equal(back.present_categories(), [0])


def test_mask_categories():
    archive = make_archive(m=3)
    archive.contact_sets = [np.array([0, 1], np.uint16), np.array([1, 2], np.uint16)]
    archive.contact_index = np.array([1, 3], dtype=np.uint64)
    masked = archive.mask_categories([1])
    assert np.isnan(masked.free_sdf[:, 1]).all()
    assert not np.isnan(masked.free_sdf[:, 0]).any()
    assert (masked.surface_category != 1).all()
    assert masked.n_contact == 0  # both pairs involved category 1
    with pytest.raises(ValueError):
        archive.mask_categories([0, 1, 2])
    assert archive.mask_categories([]) is archive
