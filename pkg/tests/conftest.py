import numpy as np
import pytest
import torch

from multisdf.fields import ModelConfig, ModelState
from multisdf.losses import CentroidPrior, PointBatch
from multisdf.toys import _box_mesh, _icosphere
from multisdf.shape_data.mesh import TriMesh


@pytest.fixture(scope="session", autouse=True)
def _torch_env():
    torch.set_num_threads(2)


@pytest.fixture(scope="session")
def unit_cube() -> TriMesh:
    return _box_mesh(np.array([1.0, 1.0, 1.0]))


@pytest.fixture(scope="session")
def icosphere_half() -> TriMesh:
    """Radius-0.5 icosphere, subdivision 3 (1280 faces)."""
    base = _icosphere(3)
    return TriMesh(base.vertices * 0.5, base.faces)


@pytest.fixture()
def tiny_state() -> ModelState:
    """Widths-16 float64 model for gradient checks."""
    cfg = ModelConfig(m=2, code_dim=12, feature_dim=6, template_hidden=(16, 2),
                      deform_hidden=(16, 2), refine_hidden=(16, 2), hyper_hidden=24)
    return ModelState(cfg, seed=3, dtype=torch.float64)


def make_point_batch(n=24, m=2, seed=0, dtype=torch.float64) -> PointBatch:
    """Mixed surface/free/contact batch with synthetic labels."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 0.4, (n, 3))
    n_surf = max(n // 2, 2)
    is_surf = np.zeros(n, bool)
    is_surf[:n_surf] = True
    cat = np.full(n, -1)
    for j in range(m):
        cat[j * (n_surf // m): (j + 1) * (n_surf // m)] = j
    nrm = rng.normal(0, 1, (n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm[~is_surf] = 0
    gt = rng.normal(0, 0.3, (n, m))
    for j in range(m):
        gt[cat == j, j] = 0.0
    cmask = np.zeros(n, bool)
    cmask[n_surf: n_surf + max(n // 6, 1)] = True
    cgam = np.zeros((n, m), bool)
    cgam[cmask] = True
    return PointBatch(
        points=torch.tensor(pts, dtype=dtype, requires_grad=True),
        is_surface=torch.tensor(is_surf),
        category=torch.tensor(cat),
        normals=torch.tensor(nrm, dtype=dtype),
        gt_sdf=torch.tensor(gt, dtype=dtype),
        contact_mask=torch.tensor(cmask),
        contact_gamma=torch.tensor(cgam),
        present=torch.ones(m, dtype=torch.bool),
    )


@pytest.fixture()
def point_batch() -> PointBatch:
    return make_point_batch()


@pytest.fixture()
def centroid_prior() -> CentroidPrior:
    return CentroidPrior(centers=np.array([[0.0, 0.0, -0.3], [0.0, 0.0, 0.3]]))
