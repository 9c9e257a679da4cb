#!/usr/bin/env python3
"""Calibration harness: trains toy models and reports acceptance-style numbers.

Not part of the package; used to pick widths/epochs for the acceptance suite.
"""

import argparse
import json
import sys
import time

import numpy as np
import torch

from multisdf import (
    CentroidPrior, FitConfig, LossWeights, ModelConfig, ModelState, TrainConfig,
    build_archive, chamfer, fit_latent, init_codes, intersection_volume,
    reconstruct_instance, recover_missing, train,
)
from multisdf.rng import CounterRng
from multisdf.shape_data.sampling import sample_on_mesh
from multisdf.toys import make_blob_family


def instance_cd(state, codes, scene, resolution=96, n_pts=6000):
    meshes = dict(reconstruct_instance(state, codes, resolution=resolution))
    cds = []
    for cat, prim in scene.primitives:
        rec = meshes[cat]
        if len(rec.faces) == 0:
            return [float("inf")] * len(scene.primitives)
        pts_rec, _, _ = sample_on_mesh(rec, n_pts, CounterRng(1, 100, cat))
        pts_gt, _, _ = sample_on_mesh(scene.instance.mesh(cat), n_pts, CounterRng(2, 100, cat))
        cds.append(chamfer(pts_rec, pts_gt))
    return cds, meshes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--tw", type=int, default=48)
    ap.add_argument("--dw", type=int, default=32)
    ap.add_argument("--code", type=int, default=64)
    ap.add_argument("--feat", type=int, default=32)
    ap.add_argument("--psurf", type=int, default=20000)
    ap.add_argument("--pfree", type=int, default=25000)
    ap.add_argument("--ablate", action="store_true")
    ap.add_argument("--skip-extras", action="store_true")
    ap.add_argument("--tag", default="run")
    args = ap.parse_args()
    torch.set_num_threads(2)

    t_all = time.time()
    scenes = make_blob_family(10, m=2, seed=7, contact=True)
    train_scenes, held = scenes[:8], scenes[8]
    archives = {}
    for sc in train_scenes:
        cfg = sc.sampling_config(args.psurf, args.pfree, seed=11)
        archives[sc.instance.instance_id] = build_archive(sc.instance, cfg)
    held_archive = build_archive(held.instance, held.sampling_config(args.psurf, args.pfree, seed=13))
    print(f"[{args.tag}] data ready {time.time()-t_all:.0f}s; contacts",
          [a.n_contact for a in archives.values()], flush=True)

    mc = ModelConfig(m=2, code_dim=args.code, feature_dim=args.feat,
                     template_hidden=(args.tw, 3), deform_hidden=(args.dw, 2),
                     refine_hidden=(64, 2), hyper_hidden=64,
                     use_refinement=not args.ablate)
    weights = LossWeights.training_preset()
    if args.ablate:
        weights = LossWeights(lambda_contact=0.0, lambda_refreg=0.0)
    state = ModelState(mc, seed=1)
    bank = init_codes(sorted(archives), 2, seed=3, code_dim=args.code)
    tc = TrainConfig(epochs=args.epochs, batch_instances=8,
                     points_per_instance=args.points, lr=args.lr, seed=5)
    t0 = time.time()
    state, bank, hist = train(archives, state, bank, tc, weights)
    t_train = time.time() - t0
    print(f"[{args.tag}] train {t_train/60:.1f} min; total {hist[0]['total']:.2f} -> {hist[-1]['total']:.2f}", flush=True)
    print(f"[{args.tag}] fsdf {hist[-1].get('fsdf'):.4f} sdf0 {hist[-1].get('sdf/0'):.4f} contact {hist[-1].get('contact', -1):.4f}", flush=True)

    # training-instance CD + IV
    all_cd, ivs = [], []
    for sc in train_scenes[:4]:
        cds, meshes = instance_cd(state, bank[sc.instance.instance_id], sc)
        all_cd.append(cds)
        ivs.append(intersection_volume([meshes[0], meshes[1]], voxel_res=128))
    all_cd = np.array(all_cd)
    print(f"[{args.tag}] train CD x1e4 per obj: {np.round(all_cd,2).tolist()}", flush=True)
    print(f"[{args.tag}] train IV (kilo): {np.round(ivs,5).tolist()}", flush=True)

    # held-out fit
    t0 = time.time()
    fit_codes, fh = fit_latent(state, held_archive, FitConfig(iterations=600, points_per_instance=args.points, seed=21))
    cds_h, meshes_h = instance_cd(state, fit_codes, held)
    print(f"[{args.tag}] heldout fit {time.time()-t0:.0f}s CD: {np.round(cds_h,2).tolist()} loss {fh[0]['total']:.2f}->{fh[-1]['total']:.2f}", flush=True)

    if not args.skip_extras:
        # recovery: mask category 1 on held-out
        t0 = time.time()
        rec_codes, _ = recover_missing(state, held_archive,
                                       FitConfig(iterations=600, points_per_instance=args.points,
                                                 missing_categories=(1,), seed=22))
        meshes_r = dict(reconstruct_instance(state, rec_codes, resolution=96))
        rec = meshes_r[1]
        if len(rec.faces):
            centroid = rec.vertices.mean(axis=0)
            gt_center = held.primitives[1][1].center
            vol_r = rec.signed_volume()
            iv_r = intersection_volume([meshes_r[0], meshes_r[1]], voxel_res=128)
            cds_present, _ = instance_cd(state, rec_codes, held)
            print(f"[{args.tag}] recover {time.time()-t0:.0f}s center err {np.linalg.norm(centroid-gt_center):.4f} "
                  f"IV/vol% {iv_r/1e3/max(vol_r,1e-9)*100:.3f} presentCD {cds_present[0]:.2f}", flush=True)
        else:
            print(f"[{args.tag}] recover -> EMPTY recovered mesh", flush=True)

    print(f"[{args.tag}] wall total {(time.time()-t_all)/60:.1f} min", flush=True)


if __name__ == "__main__":
    sys.exit(main())
