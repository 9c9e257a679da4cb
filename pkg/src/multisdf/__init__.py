"""Multi-object neural signed-distance field toolkit.

Learns per-category implicit shape functions (template + code-conditioned
deformation) with a cross-category refinement field, supervised by surface,
Eikonal, and contact constraints.  Turns trained fields back into meshes,
recovers missing parts, propagates dense annotations via template-space
correspondence, and scores reconstructions with CD / EMD / intersection
volume.
"""

__version__ = "0.1.0"

from .shape_data.mesh import MultiObjectInstance, TriMesh, normalize_instance
from .shape_data.archive import SampleArchive, read_archive, write_archive
from .shape_data.sampling import SamplingConfig, build_archive
from .fields import ModelConfig, ModelState, model_forward, screw_apply, save_checkpoint, load_checkpoint
from .losses import CentroidPrior, LossWeights, total_objective
from .training import FitConfig, TrainConfig, fit_latent, init_codes, recover_missing, train
from .reconstruction import correspond, edit_codes, evaluate_grid, extract_iso_mesh, extract_templates, make_field, reconstruct_instance
from .metrics import MetricConfig, chamfer, emd, evaluate_reconstruction, intersection_volume
from .toys import AnalyticScene, make_blob_family, make_chair

__all__ = [
    "MultiObjectInstance", "TriMesh", "normalize_instance",
    "SampleArchive", "read_archive", "write_archive",
    "SamplingConfig", "build_archive",
    "ModelConfig", "ModelState", "model_forward", "screw_apply",
    "save_checkpoint", "load_checkpoint",
    "CentroidPrior", "LossWeights", "total_objective",
    "TrainConfig", "FitConfig", "init_codes", "train", "fit_latent", "recover_missing",
    "evaluate_grid", "extract_iso_mesh", "extract_templates", "make_field",
    "reconstruct_instance", "correspond", "edit_codes",
    "MetricConfig", "chamfer", "emd", "intersection_volume", "evaluate_reconstruction",
    "AnalyticScene", "make_blob_family", "make_chair",
]
