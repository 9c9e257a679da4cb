from .mesh import MultiObjectInstance, TriMesh, normalize_instance, load_instance_manifest
from .sdf import signed_distance, signed_distance_batch, signed_distance_many, unsigned_distance, winding_number
from .sampling import SamplingConfig, sample_surface, sample_free_space, extract_contact_set, build_archive
from .archive import SampleArchive, write_archive, read_archive, ArchiveFormatError

__all__ = [
    "MultiObjectInstance",
    "TriMesh",
    "normalize_instance",
    "load_instance_manifest",
    "signed_distance",
    "signed_distance_batch",
    "signed_distance_many",
    "unsigned_distance",
    "winding_number",
    "SamplingConfig",
    "sample_surface",
    "sample_free_space",
    "extract_contact_set",
    "build_archive",
    "SampleArchive",
    "write_archive",
    "read_archive",
    "ArchiveFormatError",
]
