"""The two optimization phases: joint training of networks + codes, and
frozen-weight latent fitting (including the missing-object recovery variant).

Batches mix surface and free points in archive proportion, drawn without
replacement from seeded per-instance shuffles; archive contact points are
always appended so the contact loss never loses support.  Recovery augments
the contact set dynamically: a free point joins when a present object's GT
distance and the missing object's *predicted* distance both fall under the
contact threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .fields import ModelState, model_forward, save_checkpoint
from .losses import CentroidPrior, LossWeights, PointBatch, total_objective
from .rng import CounterRng, STREAM_CODES, STREAM_TRAIN, derive
from .shape_data.archive import SampleArchive


class DivergenceError(RuntimeError):
    """Loss went non-finite; carries the last good checkpoint path if saved."""

    def __init__(self, message: str, checkpoint: str | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_instances: int = 12
    points_per_instance: int = 16384
    lr: float = 1e-3
    seed: int = 0
    grad_clip: float = 10.0
    checkpoint_every: int = 0  # epochs; 0 = only final
    deterministic: bool = True

    def __post_init__(self):
        if min(self.epochs, self.batch_instances, self.points_per_instance) < 0:
            raise ValueError("train config values must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class FitConfig:
    iterations: int = 800
    lr: float = 1e-2
    points_per_instance: int = 16384
    missing_categories: tuple[int, ...] = ()
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights.reconstruction_preset)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")


def init_codes(instance_ids: list[str], m: int, seed: int,
               code_dim: int = 128) -> dict[str, np.ndarray]:
    """Per-instance, per-category Gaussian codes, std 0.01, seed-addressed."""
    if m == 0:
        return {}
    bank = {}
    for idx, iid in enumerate(instance_ids):
        rows = [
            CounterRng(seed, STREAM_CODES, idx, j).normals(0, code_dim) * 0.01
            for j in range(m)
        ]
        bank[iid] = np.stack(rows).astype(np.float32)
    return bank


class _PointStream:
    """Without-replacement index stream over one archive block; reshuffles
    (new seeded permutation) whenever a pass completes."""

    def __init__(self, n: int, key: int):
        self.n = n
        self.key = int(key)
        self.pass_index = 0
        self.cursor = 0
        self._perm = self._shuffle()

    def _shuffle(self) -> np.ndarray:
        gen = np.random.Generator(np.random.PCG64(int(derive(self.key, self.pass_index))))
        return gen.permutation(self.n)

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            chunk = self._perm[self.cursor : self.cursor + k]
            out.append(chunk)
            self.cursor += len(chunk)
            k -= len(chunk)
            if self.cursor >= self.n:
                self.pass_index += 1
                self.cursor = 0
                self._perm = self._shuffle()
        return np.concatenate(out) if len(out) > 1 else out[0]


class InstanceSampler:
    """Per-instance batch assembly from an archive."""

    def __init__(self, archive: SampleArchive, seed: int, instance_index: int):
        self.archive = archive
        base = derive(derive(np.uint64(seed), STREAM_TRAIN), instance_index)
        self.surface = _PointStream(archive.n_surface, derive(base, 0))
        self.free = _PointStream(archive.n_free, derive(base, 1))
        self.present = ~np.isnan(archive.free_sdf).all(axis=0)
        gamma = np.zeros((archive.n_contact, archive.m), dtype=bool)
        for row, gset in enumerate(archive.contact_sets):
            gamma[row, gset] = True
        self._contact_gamma = gamma

    def batch(self, n_points: int, dtype: torch.dtype) -> PointBatch:
        a = self.archive
        n_s = int(round(n_points * a.n_surface / (a.n_surface + a.n_free)))
        n_s = min(max(n_s, 1), n_points - 1) if n_points >= 2 else n_points
        n_f = n_points - n_s
        idx_s = self.surface.take(min(n_s, a.n_surface))
        idx_f = self.free.take(min(n_f, a.n_free))

        pos = np.concatenate([
            a.surface_positions[idx_s],
            a.free_positions[idx_f],
            a.free_positions[a.contact_index.astype(np.int64)],
        ]).astype(np.float64)
        n_srf, n_fr, n_ct = len(idx_s), len(idx_f), a.n_contact

        normals = np.zeros((len(pos), 3))
        normals[:n_srf] = a.surface_normals[idx_s]
        category = np.full(len(pos), -1, dtype=np.int64)
        category[:n_srf] = a.surface_category[idx_s]
        gt = np.concatenate([
            a.surface_sdf[idx_s],
            a.free_sdf[idx_f],
            a.free_sdf[a.contact_index.astype(np.int64)],
        ]).astype(np.float64)
        contact_mask = np.zeros(len(pos), dtype=bool)
        contact_mask[n_srf + n_fr :] = True
        contact_gamma = np.zeros((len(pos), a.m), dtype=bool)
        contact_gamma[n_srf + n_fr :] = self._contact_gamma

        points = torch.tensor(pos, dtype=dtype, requires_grad=True)
        return PointBatch(
            points=points,
            is_surface=torch.tensor(np.arange(len(pos)) < n_srf),
            category=torch.tensor(category),
            normals=torch.tensor(normals, dtype=dtype),
            gt_sdf=torch.tensor(gt, dtype=dtype),
            contact_mask=torch.tensor(contact_mask),
            contact_gamma=torch.tensor(contact_gamma),
            present=torch.tensor(self.present),
        )


def _write_log(log, path) -> None:
    if path is None:
        return
    with open(path, "a") as fh:
        fh.write(json.dumps(log) + "\n")


def train(
    archives: dict[str, SampleArchive],
    state: ModelState,
    code_bank: dict[str, np.ndarray],
    config: TrainConfig,
    weights: LossWeights | None = None,
    prior: CentroidPrior | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
):
    """Joint optimization of all network parameters and the batch's codes.

    Returns (state, code bank, history).  Only codes of instances appearing
    in a step's batch receive updates (their gradients are the only ones
    populated).  Aborts with the last good checkpoint on non-finite loss.
    """
    weights = weights or LossWeights.training_preset()
    if prior is None:
        prior = CentroidPrior.from_archives(archives.values())
    state.centroid_prior = prior.centers
    if config.deterministic:
        torch.manual_seed(config.seed)

    ids = sorted(archives)
    dtype = state.dtype
    samplers = {
        iid: InstanceSampler(archives[iid], config.seed, i) for i, iid in enumerate(ids)
    }
    codes = {
        iid: torch.nn.Parameter(torch.tensor(code_bank[iid], dtype=dtype)) for iid in ids
    }
    params = list(state.parameters()) + [codes[iid] for iid in ids]
    opt = torch.optim.Adam(params, lr=config.lr)

    epoch_rng = np.random.Generator(np.random.PCG64(int(derive(np.uint64(config.seed), STREAM_TRAIN))))
    history: list[dict] = []
    step = 0
    last_good: str | None = None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def bank() -> dict[str, np.ndarray]:
        return {iid: codes[iid].detach().cpu().numpy().copy() for iid in ids}

    for epoch in range(config.epochs):
        order = epoch_rng.permutation(len(ids))
        for lo in range(0, len(ids), config.batch_instances):
            members = [ids[k] for k in order[lo : lo + config.batch_instances]]
            opt.zero_grad(set_to_none=True)
            batch_loss = None
            merged: dict[str, float] = {}
            for iid in members:
                batch = samplers[iid].batch(config.points_per_instance, dtype)
                result = model_forward(state, codes[iid], batch.points)
                loss, detail = total_objective(state, codes[iid], result, batch, weights, prior)
                batch_loss = loss if batch_loss is None else batch_loss + loss
                for key, val in detail.items():
                    merged[key] = merged.get(key, 0.0) + val / len(members)
            batch_loss = batch_loss / len(members)
            if not torch.isfinite(batch_loss):
                raise DivergenceError(
                    f"non-finite loss at step {step}", checkpoint=last_good
                )
            batch_loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
            record = {"step": step, "epoch": epoch, **merged}
            history.append(record)
            _write_log(record, log_path)
            step += 1
        if ckpt_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            path = ckpt_dir / f"epoch_{epoch + 1:05d}.ckpt"
            save_checkpoint(state, path, codes=bank(), extra={"epoch": epoch + 1})
            last_good = str(path)

    if ckpt_dir:
        path = ckpt_dir / "final.ckpt"
        save_checkpoint(state, path, codes=bank(), extra={"epoch": config.epochs})
    return state, bank(), history


def _fit_codes(
    state: ModelState,
    archive: SampleArchive,
    config: FitConfig,
    init: np.ndarray | None,
    log_path: str | Path | None = None,
):
    """Frozen-weight code optimization; shared by fit_latent and recovery."""
    missing = sorted(set(config.missing_categories))
    if missing:
        archive = archive.mask_categories(missing)
    if len(archive.present_categories()) == 0:
        raise ValueError("every category is masked; nothing to fit against")

    dtype = state.dtype
    cfg = state.config
    if init is None:
        init = np.stack([
            CounterRng(config.seed, STREAM_CODES, 0, j).normals(0, cfg.code_dim) * 0.01
            for j in range(cfg.m)
        ])
    init = np.array(init, dtype=np.float32, copy=True)
    init[missing] = 0.0  # template-like shape prior for masked categories
    codes = torch.nn.Parameter(torch.tensor(init, dtype=dtype))

    was_training = state.training
    requires = [p.requires_grad for p in state.parameters()]
    for p in state.parameters():
        p.requires_grad_(False)
    sampler = InstanceSampler(archive, config.seed, 0)
    opt = torch.optim.Adam([codes], lr=config.lr)
    history: list[dict] = []
    eps_c = float(archive.eps_c)
    try:
        for it in range(config.iterations):
            opt.zero_grad(set_to_none=True)
            batch = sampler.batch(config.points_per_instance, dtype)
            result = model_forward(state, codes, batch.points)
            if missing:
                _augment_contacts(batch, result, missing, eps_c)
            loss, detail = total_objective(
                state, codes, result, batch, config.weights, prior=None
            )
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at iteration {it}")
            loss.backward()
            opt.step()
            record = {"step": it, **detail}
            history.append(record)
            _write_log(record, log_path)
    finally:
        for p, req in zip(state.parameters(), requires):
            p.requires_grad_(req)
        state.train(was_training)
    return codes.detach().cpu().numpy(), history


def _augment_contacts(batch: PointBatch, result, missing: list[int], eps_c: float) -> None:
    """Recovery contact rule, applied in place to the batch masks.

    Free rows where some present object's GT SDF and some missing object's
    predicted pre-refinement SDF are both under eps_c join the contact set;
    static (present-present) contacts stay untouched.
    """
    free = ~batch.is_surface
    with torch.no_grad():
        near_pred = result.s_prime < eps_c
    near_gt = torch.nan_to_num(batch.gt_sdf, nan=float("inf")) < eps_c
    gamma = near_gt.clone()
    gamma[:, missing] = near_pred[:, missing]
    candidate = free & (gamma.sum(dim=1) >= 2) & near_pred[:, missing].any(dim=1)
    batch.contact_gamma = torch.where(
        candidate[:, None], gamma, batch.contact_gamma
    )
    batch.contact_mask = batch.contact_mask | candidate


def fit_latent(
    state: ModelState,
    archive: SampleArchive,
    config: FitConfig | None = None,
    init: np.ndarray | None = None,
    log_path: str | Path | None = None,
):
    """Optimize an unseen instance's codes against a frozen model."""
    config = config or FitConfig()
    if config.missing_categories:
        raise ValueError("use recover_missing for masked categories")
    return _fit_codes(state, archive, config, init, log_path)


def recover_missing(
    state: ModelState,
    archive: SampleArchive,
    config: FitConfig,
    init: np.ndarray | None = None,
    log_path: str | Path | None = None,
):
    """Fit codes when some categories have no data.

    Present categories carry the data terms; masked categories are driven by
    the code regularizer, the dynamically extended contact loss, and coupling
    through the shared refinement field.  Reduces to fit_latent when the
    missing set is empty."""
    return _fit_codes(state, archive, config, init, log_path)
