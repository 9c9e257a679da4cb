#!/usr/bin/env python3
"""Full acceptance-shaped calibration: full + ablated trainings with held-out
IV, recovery, and the sphere-family correspondence protocol."""

import json
import sys
import time

import numpy as np
import torch

from multisdf import (
    FitConfig, LossWeights, ModelConfig, ModelState, TrainConfig,
    build_archive, chamfer, correspond, fit_latent, init_codes,
    intersection_volume, reconstruct_instance, recover_missing, train,
)
from multisdf.fields import save_checkpoint, load_checkpoint
from multisdf.reconstruction import to_template_space
from multisdf.rng import CounterRng
from multisdf.shape_data.sampling import sample_on_mesh
from multisdf.toys import make_blob_family


def cds_and_meshes(state, codes, scene, resolution=96, n_pts=6000):
    meshes = dict(reconstruct_instance(state, codes, resolution=resolution))
    cds = []
    for cat, prim in scene.primitives:
        rec = meshes[cat]
        if len(rec.faces) == 0:
            return [float("inf")] * len(scene.primitives), meshes
        pts_rec, _, _ = sample_on_mesh(rec, n_pts, CounterRng(1, 100, cat))
        pts_gt, _, _ = sample_on_mesh(scene.instance.mesh(cat), n_pts, CounterRng(2, 100, cat))
        cds.append(chamfer(pts_rec, pts_gt))
    return cds, meshes


def train_variant(tag, archives, ablate, epochs=900, points=1536):
    mc = ModelConfig(m=2, code_dim=64, feature_dim=32, template_hidden=(64, 3),
                     deform_hidden=(48, 2), refine_hidden=(128, 2), hyper_hidden=64,
                     use_refinement=not ablate)
    weights = LossWeights(lambda_contact=0.0, lambda_refreg=0.0) if ablate \
        else LossWeights.training_preset()
    state = ModelState(mc, seed=1)
    bank = init_codes(sorted(archives), 2, seed=3, code_dim=64)
    tc = TrainConfig(epochs=epochs, batch_instances=8, points_per_instance=points,
                     lr=1e-3, seed=5)
    t0 = time.time()
    state, bank, hist = train(archives, state, bank, tc, weights)
    print(f"[{tag}] train {(time.time()-t0)/60:.1f} min; "
          f"{hist[0]['total']:.1f} -> {hist[-1]['total']:.2f} "
          f"(epoch200: {hist[min(200, len(hist)-1)]['total']:.2f})", flush=True)
    return state, bank, weights


def main():
    torch.set_num_threads(2)
    t_all = time.time()
    scenes = make_blob_family(10, m=2, seed=7, contact=True, eps_c=0.01)
    train_scenes, held = scenes[:8], scenes[8:10]
    archives = {}
    for sc in train_scenes:
        archives[sc.instance.instance_id] = build_archive(
            sc.instance, sc.sampling_config(20000, 25000, seed=11))
    held_archives = [build_archive(sc.instance, sc.sampling_config(20000, 25000, seed=13 + i))
                     for i, sc in enumerate(held)]
    print("[v6] contacts:", [a.n_contact for a in archives.values()],
          [a.n_contact for a in held_archives], flush=True)

    results = {}
    for tag, ablate in (("full", False), ("abl", True)):
        state, bank, _ = train_variant(f"v6-{tag}", archives, ablate)
        save_checkpoint(state, f"/tmp/v6_{tag}.ckpt", codes=bank)
        train_cd, train_iv = [], []
        for sc in train_scenes:
            cds, meshes = cds_and_meshes(state, bank[sc.instance.instance_id], sc)
            train_cd.append(cds)
            train_iv.append(intersection_volume([meshes[0], meshes[1]], voxel_res=128))
        fit_weights = (LossWeights(lambda_contact=0.0, lambda_refreg=0.0,
                                   lambda_correg=0.0, lambda_normal=0.0,
                                   lambda_smooth=0.0, lambda_centroid=0.0)
                       if ablate else LossWeights.reconstruction_preset())
        held_cd, held_iv = [], []
        for sc, archive in zip(held, held_archives):
            codes, _ = fit_latent(state, archive,
                                  FitConfig(iterations=800, points_per_instance=1536,
                                            seed=21, weights=fit_weights))
            cds, meshes = cds_and_meshes(state, codes, sc)
            held_cd.append(cds)
            held_iv.append(intersection_volume([meshes[0], meshes[1]], voxel_res=128))
        results[tag] = dict(train_cd=train_cd, train_iv=train_iv,
                            held_cd=held_cd, held_iv=held_iv)
        print(f"[v6-{tag}] trainCD {np.round(train_cd,2).tolist()}", flush=True)
        print(f"[v6-{tag}] trainIV {np.round(train_iv,4).tolist()} "
              f"heldCD {np.round(held_cd,2).tolist()} heldIV {np.round(held_iv,4).tolist()}", flush=True)

    # recovery on the full model
    state, bank, _ = load_checkpoint("/tmp/v6_full.ckpt")
    t0 = time.time()
    rec_codes, _ = recover_missing(state, held_archives[0],
                                   FitConfig(iterations=800, points_per_instance=1536,
                                             missing_categories=(1,), seed=22))
    meshes_r = dict(reconstruct_instance(state, rec_codes, resolution=96))
    rec = meshes_r[1]
    centroid = rec.vertices.mean(axis=0)
    gt_center = held[0].primitives[1][1].center
    iv_r = intersection_volume([meshes_r[0], meshes_r[1]], voxel_res=128)
    cds_present, _ = cds_and_meshes(state, rec_codes, held[0])
    print(f"[v6-recover] {time.time()-t0:.0f}s center err {np.linalg.norm(centroid-gt_center):.4f} "
          f"IV/vol% {iv_r/1e3/max(rec.signed_volume(),1e-9)*100:.3f} presentCD {cds_present[0]:.2f}", flush=True)

    # sphere family for correspondence + the 200-epoch convergence example
    spheres = make_blob_family(4, m=2, seed=9, contact=False, kinds=("sphere", "sphere"))
    sph_archives = {sc.instance.instance_id: build_archive(
        sc.instance, sc.sampling_config(15000, 18000, seed=17)) for sc in spheres}
    mc = ModelConfig(m=2, code_dim=64, feature_dim=32, template_hidden=(48, 3),
                     deform_hidden=(32, 2), refine_hidden=(64, 2), hyper_hidden=64)
    state_s = ModelState(mc, seed=2)
    bank_s = init_codes(sorted(sph_archives), 2, seed=4, code_dim=64)
    t0 = time.time()
    state_s, bank_s, hist_s = train(sph_archives, state_s, bank_s,
                                    TrainConfig(epochs=500, batch_instances=4,
                                                points_per_instance=1024, lr=1e-3, seed=6))
    print(f"[v6-sph] train {(time.time()-t0)/60:.1f} min; "
          f"{hist_s[0]['total']:.1f} -> {hist_s[-1]['total']:.2f}; "
          f"epoch200 ratio {hist_s[200]['total']/hist_s[0]['total']:.3f}", flush=True)
    save_checkpoint(state_s, "/tmp/v6_sph.ckpt", codes=bank_s)

    # correspondence round-trip IoU between instances 0 and 1, category 0
    ids = sorted(sph_archives)
    codes_a, codes_b = bank_s[ids[0]], bank_s[ids[1]]
    mesh_a = dict(reconstruct_instance(state_s, codes_a, resolution=96))[0]
    src, _, _ = sample_on_mesh(mesh_a, 3000, CounterRng(5, 100, 0))
    cmap = correspond(state_s, codes_a, codes_b, 0, src, n_surface_b=40000,
                      resolution=96, seed=6)
    # template annotation: upper cap in template space, threshold = median z
    z0 = np.median(cmap.template_source[:, 2])
    label_a = cmap.template_source[:, 2] > z0
    label_b = cmap.template_target[:, 2] > z0
    inter = (label_a & label_b).sum()
    union = (label_a | label_b).sum()
    print(f"[v6-sph] correspondence IoU {inter/union:.4f}; "
          f"median tpl distance {np.median(cmap.distance):.5f}", flush=True)

    # angular preservation on spheres: two instances differing mostly by
    # translation/scale -> matched points keep their direction from center
    ca = dict(reconstruct_instance(state_s, codes_a, resolution=96))[0].vertices.mean(0)
    cb = dict(reconstruct_instance(state_s, codes_b, resolution=96))[0].vertices.mean(0)
    da = cmap.source - ca
    db = cmap.target - cb
    da /= np.linalg.norm(da, axis=1, keepdims=True)
    db /= np.linalg.norm(db, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip((da * db).sum(1), -1, 1)))
    print(f"[v6-sph] angular median {np.median(ang):.2f} deg", flush=True)

    print(f"[v6] wall total {(time.time()-t_all)/60:.1f} min", flush=True)


if __name__ == "__main__":
    sys.exit(main())
