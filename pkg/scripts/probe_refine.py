#!/usr/bin/env python3
"""Quick probes: isolate the refinement-width effect on per-category CD."""

import sys
import time

import numpy as np
import torch

from multisdf import (LossWeights, ModelConfig, ModelState, TrainConfig,
                      build_archive, chamfer, init_codes, intersection_volume,
                      reconstruct_instance, train)
from multisdf.rng import CounterRng
from multisdf.shape_data.sampling import sample_on_mesh
from multisdf.toys import make_blob_family


def measure(state, bank, scenes, tag):
    cds, ivs = [], []
    for sc in scenes[:4]:
        meshes = dict(reconstruct_instance(state, bank[sc.instance.instance_id], resolution=96))
        row = []
        for cat, _ in sc.primitives:
            rec = meshes[cat]
            if len(rec.faces) == 0:
                row.append(float("inf"))
                continue
            a, _, _ = sample_on_mesh(rec, 6000, CounterRng(1, 100, cat))
            g, _, _ = sample_on_mesh(sc.instance.mesh(cat), 6000, CounterRng(2, 100, cat))
            row.append(chamfer(a, g))
        cds.append(row)
        ivs.append(intersection_volume([meshes[0], meshes[1]], voxel_res=96))
    print(f"[{tag}] CD {np.round(cds,2).tolist()} IV {np.round(ivs,4).tolist()}", flush=True)


def main():
    torch.set_num_threads(2)
    scenes = make_blob_family(10, m=2, seed=7, contact=True, eps_c=0.01)[:8]
    archives = {sc.instance.instance_id: build_archive(
        sc.instance, sc.sampling_config(20000, 25000, seed=11)) for sc in scenes}
    for tag, refine in (("probeA-r64", (64, 2)), ("probeC-r128", (128, 2))):
        mc = ModelConfig(m=2, code_dim=64, feature_dim=32, template_hidden=(64, 3),
                         deform_hidden=(48, 2), refine_hidden=refine, hyper_hidden=64)
        state = ModelState(mc, seed=1)
        bank = init_codes(sorted(archives), 2, seed=3, code_dim=64)
        t0 = time.time()
        state, bank, hist = train(archives, state, bank,
                                  TrainConfig(epochs=450, batch_instances=8,
                                              points_per_instance=1536, lr=1e-3, seed=5))
        print(f"[{tag}] {(time.time()-t0)/60:.1f} min, total {hist[-1]['total']:.2f} "
              f"contact {hist[-1].get('contact', -1):.3f} fsdf {hist[-1]['fsdf']:.4f}", flush=True)
        measure(state, bank, scenes, tag)


if __name__ == "__main__":
    sys.exit(main())
