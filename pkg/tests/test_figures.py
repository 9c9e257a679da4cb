import numpy as np

from multisdf.figures import save_grid_slices, save_loss_curves, save_metric_figure
from multisdf.metrics import MetricReport
from multisdf.reconstruction import SdfGrid


def test_loss_curves(tmp_path):
    history = [{"step": k, "epoch": 0, "total": 100.0 / (k + 1), "fsdf": 1.0 / (k + 1),
                "contact": 0.5} for k in range(20)]
    out = save_loss_curves(history, tmp_path / "loss.png")
    assert out.exists() and out.stat().st_size > 0


def test_metric_figure(tmp_path):
    report = MetricReport(
        rows=[{"category": 0, "group": "pres", "cd": 1.0, "emd": 2.0},
              {"category": 1, "group": "miss", "cd": 3.0, "emd": 4.0}],
        iv=0.25,
        aggregates={},
        config={},
    )
    out = save_metric_figure(report, tmp_path / "metrics.png")
    assert out.exists() and out.stat().st_size > 0


def test_grid_slices(tmp_path):
    axis = np.linspace(-1, 1, 16)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1)
    vals = np.stack([np.linalg.norm(grid, axis=-1) - 0.5,
                     np.linalg.norm(grid - 0.2, axis=-1) - 0.3], axis=-1)
    sdf_grid = SdfGrid(values=vals.astype(np.float32), bounds=1.0, resolution=16)
    out = save_grid_slices(sdf_grid, tmp_path / "slices.png")
    assert out.exists() and out.stat().st_size > 0
