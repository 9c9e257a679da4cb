"""End-to-end CLI flows that need a trained checkpoint (tiny, smoke-level)."""

import json

import numpy as np
import pytest

from multisdf.cli import main


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("flow")
    toy_dir = root / "toys"
    assert main(["make-toy", "--out", str(toy_dir), "--n-instances", "2", "--m", "2",
                 "--seed", "3", "--tessellation", "1", "--archives",
                 "--n-surface", "500", "--n-free", "800"]) == 0
    config = root / "cfg.json"
    config.write_text(json.dumps({
        "model": {"code_dim": 16, "feature_dim": 8, "template_hidden": [16, 2],
                  "deform_hidden": [16, 1], "refine_hidden": [16, 1],
                  "hyper_hidden": 16},
        "train": {"epochs": 10, "batch_instances": 2, "points_per_instance": 256},
    }))
    ckpt_dir = root / "ckpt"
    assert main(["train", "--data", str(toy_dir), "--config", str(config),
                 "--out", str(ckpt_dir), "--seed", "5"]) == 0
    family = json.loads((toy_dir / "family.json").read_text())
    return root, toy_dir, ckpt_dir / "final.ckpt", family


def test_reconstruct_by_archive_fits_codes(trained):
    root, toy_dir, ckpt, family = trained
    archive = toy_dir / f"{family[1]['instance_id']}.msdf"
    out = root / "rec_fit"
    rc = main(["reconstruct", "--checkpoint", str(ckpt), "--archive", str(archive),
               "--resolution", "20", "--out", str(out),
               "--fit-iterations", "8", "--fit-points", "128", "--seed", "2"])
    assert rc == 0
    codes = np.asarray(json.loads((out / "codes.json").read_text()))
    assert codes.shape == (2, 16)
    assert (out / "run_manifest.json").exists()


def test_recover_cli(trained):
    root, toy_dir, ckpt, family = trained
    archive = toy_dir / f"{family[0]['instance_id']}.msdf"
    out = root / "recovered"
    rc = main(["recover", "--checkpoint", str(ckpt), "--archive", str(archive),
               "--missing", "1", "--resolution", "20", "--out", str(out),
               "--fit-iterations", "8", "--fit-points", "128", "--seed", "2"])
    assert rc == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["missing"] == [1]
    assert (out / "cat0.ply").exists() and (out / "cat1.ply").exists()


def test_recover_requires_missing(trained):
    root, toy_dir, ckpt, family = trained
    rc = main(["recover", "--checkpoint", str(ckpt), "--archive", "x.msdf",
               "--missing", "", "--out", str(root / "r2")])
    assert rc == 1


def test_augment_cli(trained):
    root, toy_dir, ckpt, family = trained
    out = root / "aug"
    rc = main(["augment", "--checkpoint", str(ckpt),
               "--instance-id", family[0]["instance_id"],
               "--towards", family[1]["instance_id"], "--category", "0",
               "--magnitude", "0.5", "--resolution", "20", "--out", str(out)])
    assert rc == 0
    edited = np.asarray(json.loads((out / "codes.json").read_text()))
    # midpoint of the two banks' category-0 codes
    from multisdf.fields import load_checkpoint

    _, bank, _ = load_checkpoint(ckpt)
    a = np.asarray(bank[family[0]["instance_id"]])
    b = np.asarray(bank[family[1]["instance_id"]])
    np.testing.assert_allclose(edited[0], a[0] + 0.5 * (b[0] - a[0]), atol=1e-6)
    np.testing.assert_allclose(edited[1], a[1], atol=0)


def test_augment_unknown_instance(trained):
    root, toy_dir, ckpt, family = trained
    rc = main(["augment", "--checkpoint", str(ckpt), "--instance-id", "nope",
               "--category", "0", "--out", str(root / "aug2")])
    assert rc == 1
