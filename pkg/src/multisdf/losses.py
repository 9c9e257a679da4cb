"""Every supervision term and the phase-weighted total objective.

Sums in the underlying formulations are mean-normalized per batch here so the
weights stay batch-size invariant; the per-point vector regularizers keep the
inner absolute-value sum over categories (so a residual vector (0.1, -0.2)
contributes 0.3).  Two weight presets exist: the full training objective and
the relaxed reconstruction objective used for frozen-weight code fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .fields import ForwardResult, ModelState, screw_apply


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_sdf: float = 1.0
    lambda_reg: float = 1e3
    lambda_correg: float = 5e2
    lambda_normal: float = 1e2
    lambda_smooth: float = 5.0
    lambda_centroid: float = 1.0
    lambda_fsdf: float = 5e2
    lambda_refreg: float = 3e2
    lambda_contact: float = 5.0
    curriculum_eps: float = 0.0
    curriculum_lam: float = 0.5
    sigma_sharpness: float = 100.0  # slope inside the contact sigma
    rho_delta: float = 100.0  # off-surface repulsion decay

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if name.startswith("lambda_") and value < 0:
                raise WeightError(f"{name} must be nonnegative, got {value}")

    @classmethod
    def training_preset(cls) -> "LossWeights":
        return cls()

    @classmethod
    def reconstruction_preset(cls) -> "LossWeights":
        """Frozen-weight code fitting: regularizers off except the code norm."""
        return cls(lambda_correg=0.0, lambda_normal=0.0, lambda_smooth=0.0,
                   lambda_centroid=0.0, lambda_refreg=0.0)


@dataclass
class CentroidPrior:
    """Per-category mean surface centroid over the training population."""

    centers: np.ndarray  # (m, 3)

    @classmethod
    def from_archives(cls, archives) -> "CentroidPrior":
        per_instance = []
        for archive in archives:
            rows = np.empty((archive.m, 3))
            for j in range(archive.m):
                mask = archive.surface_category == j
                rows[j] = archive.surface_positions[mask].mean(axis=0)
            per_instance.append(rows)
        return cls(centers=np.mean(per_instance, axis=0))


@dataclass
class PointBatch:
    """One instance's sampled points, labeled for loss evaluation."""

    points: torch.Tensor  # (n, 3), must require grad for the spatial terms
    is_surface: torch.Tensor  # (n,) bool
    category: torch.Tensor  # (n,) long; -1 for free-space rows
    normals: torch.Tensor  # (n, 3); zeros on free rows
    gt_sdf: torch.Tensor  # (n, m); NaN where the category is masked
    contact_mask: torch.Tensor  # (n,) bool
    contact_gamma: torch.Tensor  # (n, m) bool, the Gamma membership per point
    present: torch.Tensor  # (m,) bool

    @property
    def m(self) -> int:
        return self.gt_sdf.shape[1]


def point_gradient(scalar_per_point: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """d(scalar_i)/d(points_i), graph kept for double backprop."""
    return torch.autograd.grad(
        scalar_per_point.sum(), points, create_graph=True, retain_graph=True
    )[0]


def _alignment(grad: torch.Tensor, normals: torch.Tensor) -> torch.Tensor:
    """1 - <g, n> with both sides unit (cosine).  The unnormalized inner
    product would reward inflating |grad| along the normal faster than the
    Eikonal term penalizes it, driving the objective to -inf."""
    return 1.0 - torch.nn.functional.cosine_similarity(grad, normals, dim=1, eps=1e-9)


def per_object_sdf_loss(result: ForwardResult, batch: PointBatch, j: int,
                        rho_delta: float = 100.0) -> torch.Tensor:
    """On-surface accuracy + normal alignment + Eikonal + off-surface repulsion."""
    s_j = result.s_prime_cats[j]
    grad_j = point_gradient(s_j, result.points)
    own = batch.is_surface & (batch.category == j)
    terms = []
    if own.any():
        normals = batch.normals[own]
        if not torch.isfinite(normals).all() or (normals.abs().sum(dim=1) == 0).any():
            raise ValueError(f"surface rows of category {j} carry invalid normals")
        terms.append(s_j[own].abs().mean())
        terms.append(_alignment(grad_j[own], normals).mean())
    else:
        zero = s_j.sum() * 0.0
        terms += [zero, zero]
    terms.append((grad_j.norm(dim=1) - 1.0).abs().mean())
    off = ~own
    if off.any():
        terms.append(torch.exp(-rho_delta * s_j[off].abs()).mean())
    else:
        terms.append(s_j.sum() * 0.0)
    return terms[0] + terms[1] + terms[2] + terms[3]


def deformation_priors(result: ForwardResult, batch: PointBatch, j: int):
    """(normal consistency in template space, displacement-Jacobian smoothness)."""
    p_def = result.p_def_cats[j]
    s_j = result.s_prime_cats[j]
    own = batch.is_surface & (batch.category == j)
    if own.any():
        # ds has no p_def dependence, so this is the template's spatial gradient
        grad_t = torch.autograd.grad(s_j.sum(), p_def, create_graph=True, retain_graph=True)[0]
        l_normal = _alignment(grad_t[own], batch.normals[own]).mean()
    else:
        l_normal = s_j.sum() * 0.0
    disp = p_def - result.points
    rows = [point_gradient(disp[:, k], result.points) for k in range(3)]
    jac = torch.stack(rows, dim=1)  # (n, 3, 3)
    l_smooth = jac.reshape(len(jac), 9).norm(dim=1).mean()
    return l_normal, l_smooth


def regularizers(codes: torch.Tensor, result: ForwardResult, j: int):
    """(code L2, per-category correction L1); see refinement_regularizer for the
    cross-category residual."""
    l_reg = (codes[j] ** 2).sum()
    l_correg = result.delta_s[:, j].abs().mean()
    return l_reg, l_correg


def refinement_regularizer(result: ForwardResult) -> torch.Tensor:
    """Mean over points of the L1 norm of the cross-category residual vector."""
    return result.delta_s_refine.abs().sum(dim=1).mean()


def centroid_loss(result: ForwardResult, batch: PointBatch, j: int,
                  prior: CentroidPrior):
    """Distance from the deformed batch centroid to the population centroid.

    The batch-mean screw and batch-mean offset stand in for the per-point
    deformation when moving the centroid.  Returns (loss, had_samples)."""
    own = batch.is_surface & (batch.category == j)
    if not own.any():
        return result.s_prime.sum() * 0.0, False
    c = result.points[own].mean(dim=0)
    r_mean = result.r[own, j].mean(dim=0)
    t_mean = result.t[own, j].mean(dim=0)
    dc = result.delta_p[own, j].mean(dim=0)
    target = torch.as_tensor(prior.centers[j], dtype=c.dtype, device=c.device)
    moved = screw_apply(r_mean[None], t_mean[None], c[None])[0] + dc
    return (moved - target).norm(), True


def curriculum_sdf_loss(s: torch.Tensor, s_hat: torch.Tensor,
                        eps: float = 0.0, lam: float = 0.5) -> torch.Tensor:
    """Hardness-weighted L1 with tolerance band.

    w = 1 + lam * sgn(gt) * sgn(gt - pred), i.e. {1-lam, 1, 1+lam}; entries
    with NaN ground truth (masked categories) are excluded from the mean.
    """
    if eps < 0 or not (0 <= lam < 1):
        raise WeightError("need eps >= 0 and 0 <= lam < 1")
    valid = torch.isfinite(s_hat)
    if not valid.any():
        return s.sum() * 0.0
    s_v, gt_v = s[valid], s_hat[valid]
    w = 1.0 + lam * torch.sign(gt_v) * torch.sign(gt_v - s_v)
    return (w * torch.clamp((s_v - gt_v).abs() - eps, min=0.0)).mean()


def contact_loss(s_prime: torch.Tensor, contact_mask: torch.Tensor,
                 contact_gamma: torch.Tensor, sharpness: float = 100.0) -> torch.Tensor:
    """Attraction toward zero SDF for every nearby category at contact points.

    sigma(x) = 2*sigmoid(sharpness*x) - 1 (= tanh(sharpness*x/2)), summed over
    the point's Gamma set, averaged over contact points."""
    if not contact_mask.any():
        return s_prime.sum() * 0.0
    vals = s_prime[contact_mask].abs()
    gamma = contact_gamma[contact_mask]
    sig = 2.0 * torch.sigmoid(sharpness * vals) - 1.0
    return (sig * gamma).sum() / int(contact_mask.sum())


def total_objective(
    state: ModelState,
    codes: torch.Tensor,
    result: ForwardResult,
    batch: PointBatch,
    weights: LossWeights,
    prior: CentroidPrior | None = None,
):
    """Phase-weighted combination; returns (total, unweighted breakdown).

    Zero-weighted terms are skipped (not evaluated), which is what makes the
    reconstruction preset cheap: no Jacobian or template-gradient passes.
    """
    m = state.config.m
    breakdown: dict[str, float] = {}
    total = result.s.sum() * 0.0
    per_cat = result.s.new_zeros(())
    present = batch.present
    for j in range(m):
        cat_total = result.s.sum() * 0.0
        if weights.lambda_sdf > 0 and bool(present[j]):
            l_sdf = per_object_sdf_loss(result, batch, j, weights.rho_delta)
            breakdown[f"sdf/{j}"] = float(l_sdf.detach())
            cat_total = cat_total + weights.lambda_sdf * l_sdf
        if weights.lambda_reg > 0:
            l_reg = (codes[j] ** 2).sum()
            breakdown[f"reg/{j}"] = float(l_reg.detach())
            cat_total = cat_total + weights.lambda_reg * l_reg
        if weights.lambda_correg > 0:
            l_correg = result.delta_s[:, j].abs().mean()
            breakdown[f"correg/{j}"] = float(l_correg.detach())
            cat_total = cat_total + weights.lambda_correg * l_correg
        if (weights.lambda_normal > 0 or weights.lambda_smooth > 0) and bool(present[j]):
            l_normal, l_smooth = deformation_priors(result, batch, j)
            breakdown[f"normal/{j}"] = float(l_normal.detach())
            breakdown[f"smooth/{j}"] = float(l_smooth.detach())
            cat_total = cat_total + weights.lambda_normal * l_normal
            cat_total = cat_total + weights.lambda_smooth * l_smooth
        if weights.lambda_centroid > 0 and prior is not None and bool(present[j]):
            l_centroid, had = centroid_loss(result, batch, j, prior)
            breakdown[f"centroid/{j}"] = float(l_centroid.detach())
            if not had:
                breakdown[f"flag/centroid_empty/{j}"] = 1.0
            cat_total = cat_total + weights.lambda_centroid * l_centroid
        per_cat = per_cat + cat_total
    total = total + per_cat / m

    if weights.lambda_fsdf > 0:
        l_fsdf = curriculum_sdf_loss(
            result.s, batch.gt_sdf, weights.curriculum_eps, weights.curriculum_lam
        )
        breakdown["fsdf"] = float(l_fsdf.detach())
        total = total + weights.lambda_fsdf * l_fsdf
    if weights.lambda_refreg > 0:
        l_refreg = refinement_regularizer(result)
        breakdown["refreg"] = float(l_refreg.detach())
        total = total + weights.lambda_refreg * l_refreg
    if weights.lambda_contact > 0:
        l_contact = contact_loss(
            result.s_prime, batch.contact_mask, batch.contact_gamma, weights.sigma_sharpness
        )
        breakdown["contact"] = float(l_contact.detach())
        total = total + weights.lambda_contact * l_contact
    breakdown["total"] = float(total.detach())
    return total, breakdown
