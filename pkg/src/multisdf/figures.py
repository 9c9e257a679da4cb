"""Figure rendering for the CLI report paths (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(history: list[dict], path: str | Path) -> Path:
    """Total + per-term loss trajectories on a log scale."""
    path = Path(path)
    steps = [rec["step"] for rec in history]
    terms = sorted(
        {k for rec in history for k in rec if k not in ("step", "epoch", "total")
         and not k.startswith("flag/")}
    )
    fig, (ax_total, ax_terms) = plt.subplots(1, 2, figsize=(11, 4))
    ax_total.plot(steps, [rec.get("total", np.nan) for rec in history], color="k")
    ax_total.set_yscale("log")
    ax_total.set_xlabel("step")
    ax_total.set_ylabel("total loss")
    for term in terms:
        vals = [rec.get(term, np.nan) for rec in history]
        ax_terms.plot(steps, vals, label=term, linewidth=0.8)
    ax_terms.set_yscale("log")
    ax_terms.set_xlabel("step")
    ax_terms.set_ylabel("unweighted term")
    if terms:
        ax_terms.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_metric_figure(report, path: str | Path) -> Path:
    """Per-category CD/EMD bars plus the instance IV."""
    path = Path(path)
    cats = [row["category"] for row in report.rows]
    x = np.arange(len(cats))
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for ax, metric, scale in ((axes[0], "cd", "CD x1e-4"), (axes[1], "emd", "EMD x1e-2")):
        vals = [row[metric] for row in report.rows]
        colors = ["tab:red" if row["group"] == "miss" else "tab:blue" for row in report.rows]
        ax.bar(x, vals, color=colors)
        ax.set_xticks(x, [str(c) for c in cats])
        ax.set_xlabel("category")
        ax.set_ylabel(scale)
    fig.suptitle(f"intersection volume: {report.iv:.4g} (kilo-units)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_grid_slices(grid, path: str | Path, axis: int = 2) -> Path:
    """Mid-plane slice of every SDF channel with the zero contour."""
    path = Path(path)
    m = grid.values.shape[-1]
    mid = grid.resolution // 2
    fig, axes = plt.subplots(1, m, figsize=(3.2 * m, 3.0), squeeze=False)
    extent = (-grid.bounds, grid.bounds, -grid.bounds, grid.bounds)
    for j in range(m):
        vol = grid.values[..., j]
        sl = np.take(vol, mid, axis=axis)
        ax = axes[0][j]
        im = ax.imshow(sl.T, origin="lower", extent=extent, cmap="RdBu", vmin=-0.5, vmax=0.5)
        ax.contour(grid.axis(), grid.axis(), sl.T, levels=[0.0], colors="k", linewidths=1.0)
        ax.set_title(f"category {j}", fontsize=9)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
