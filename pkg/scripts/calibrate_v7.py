#!/usr/bin/env python3
"""Instrumented trajectory run: checkpoint every 100 epochs for both the full
and ablated variants, then map CD/IV versus epoch to pick the acceptance
recipe."""

import sys
import time
from pathlib import Path

import numpy as np
import torch

from multisdf import (LossWeights, ModelConfig, ModelState, TrainConfig,
                      build_archive, chamfer, init_codes, intersection_volume,
                      reconstruct_instance, train)
from multisdf.fields import load_checkpoint
from multisdf.rng import CounterRng
from multisdf.shape_data.sampling import sample_on_mesh
from multisdf.toys import make_blob_family


def main():
    torch.set_num_threads(2)
    points = int(sys.argv[1]) if len(sys.argv) > 1 else 3072
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 1000
    scenes = make_blob_family(10, m=2, seed=7, contact=True, eps_c=0.015)[:8]
    archives = {sc.instance.instance_id: build_archive(
        sc.instance, sc.sampling_config(20000, 25000, seed=11)) for sc in scenes}

    for tag, use_ref in (("full", True), ("abl", False)):
        outdir = Path(f"/tmp/v7_{tag}")
        mc = ModelConfig(m=2, code_dim=64, feature_dim=32, template_hidden=(64, 3),
                         deform_hidden=(48, 2), refine_hidden=(128, 2), hyper_hidden=64,
                         use_refinement=use_ref)
        weights = LossWeights.training_preset() if use_ref else \
            LossWeights(lambda_contact=0.0, lambda_refreg=0.0)
        state = ModelState(mc, seed=1)
        bank = init_codes(sorted(archives), 2, seed=3, code_dim=64)
        tc = TrainConfig(epochs=epochs, batch_instances=8, points_per_instance=points,
                         lr=1e-3, seed=5, checkpoint_every=100)
        t0 = time.time()
        train(archives, state, bank, tc, weights, checkpoint_dir=outdir)
        print(f"[v7-{tag}] trained {epochs} ep x {points} pts in "
              f"{(time.time()-t0)/60:.1f} min", flush=True)

        for ckpt in sorted(outdir.glob("epoch_*.ckpt")):
            st, bk, _ = load_checkpoint(ckpt)
            cds, ivs = [], []
            for sc in scenes[:4]:
                meshes = dict(reconstruct_instance(st, bk[sc.instance.instance_id],
                                                   resolution=96))
                row = []
                for cat, _ in sc.primitives:
                    rec = meshes[cat]
                    if len(rec.faces) == 0:
                        row.append(float("inf"))
                        continue
                    a, _, _ = sample_on_mesh(rec, 5000, CounterRng(1, 100, cat))
                    g, _, _ = sample_on_mesh(sc.instance.mesh(cat), 5000,
                                             CounterRng(2, 100, cat))
                    row.append(chamfer(a, g))
                cds.append(row)
                ivs.append(intersection_volume([meshes[0], meshes[1]], voxel_res=96))
            cds = np.asarray(cds)
            print(f"[v7-{tag}] {ckpt.stem}: CDmax {cds.max():.2f} "
                  f"CDmean {cds.mean():.2f} cat1max {cds[:,1].max():.2f} "
                  f"IVmean {np.mean(ivs):.3f} IVs {np.round(ivs,3).tolist()}", flush=True)


if __name__ == "__main__":
    sys.exit(main())
