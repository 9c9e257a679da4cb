"""Command-line surface: scene generation, preprocessing, training,
reconstruction, recovery, correspondence, evaluation, augmentation.

Every command writes a run manifest into its --out directory, seeds all
randomness from --seed, and exits 0 on success, 1 on validation errors,
2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .shape_data.archive import ArchiveFormatError, read_archive, write_archive
from .shape_data.mesh import (MeshError, TriMesh, load_instance_manifest, load_mesh,
                              normalize_instance, save_instance_manifest, save_ply)
from .shape_data.sampling import SamplingConfig, build_archive
from . import kernel_bridge


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


def _load_config_file(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(text)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            try:
                import tomli as tomllib
            except ImportError:
                raise UsageError(
                    "TOML configs need Python 3.11+ or the tomli package; "
                    "JSON configs work everywhere"
                ) from None
        return tomllib.loads(text.decode())
    raise UsageError(f"config must be .toml or .json, got {path.suffix}")


def _write_run_manifest(out_dir: Path, command: str, config: dict,
                        inputs: dict, outputs: list[str], t0: float, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "command": command,
        "version": f"multisdf-{__version__}",
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "wall_seconds": round(time.time() - t0, 3),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0, help="0 = library default")
    parser.add_argument("--kernel", choices=["auto", "reference", "native"],
                        default="reference")


def _args_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# --- subcommands ---------------------------------------------------------------

def cmd_make_toy(args) -> int:
    from .toys import make_blob_family, make_chair

    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if args.family == "blob":
        kinds = tuple(args.kinds.split(",")) if args.kinds else None
        scenes = make_blob_family(
            args.n_instances, m=args.m, seed=args.seed, contact=args.contact,
            kinds=kinds, tessellation=args.tessellation,
        )
    else:
        scenes = [make_chair(args.seed + i, tessellation=args.tessellation)
                  for i in range(args.n_instances)]
    family = []
    for scene in scenes:
        manifest = save_instance_manifest(scene.instance, out)
        outputs.append(manifest.name)
        family.append({
            "instance_id": scene.instance.instance_id,
            "manifest": manifest.name,
            "eps_c": scene.eps_c,
            "m": scene.instance.m,
        })
        if args.archives:
            cfg = scene.sampling_config(args.n_surface, args.n_free, seed=args.seed)
            archive = build_archive(scene.instance, cfg)
            apath = out / f"{scene.instance.instance_id}.msdf"
            write_archive(archive, apath)
            outputs.append(apath.name)
    (out / "family.json").write_text(json.dumps(family, indent=2))
    outputs.append("family.json")
    _write_run_manifest(out, "make-toy", _args_snapshot(args), {}, outputs, t0, args.seed)
    return 0


def cmd_preprocess(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    kernel = kernel_bridge.find_kernel(args.kernel)
    if kernel is not None:
        kernel_bridge.kernel_preprocess(
            kernel, Path(args.manifest), out, seed=args.seed,
            n_surface=args.n_surface, n_free=args.n_free,
            bounds=args.bounds, eps_c=args.eps_c,
        )
    else:
        instance_id, raw = load_instance_manifest(args.manifest)
        instance, _ = normalize_instance(raw, instance_id=instance_id)
        cfg = SamplingConfig(n_surface=args.n_surface, n_free=args.n_free,
                             bounds=args.bounds, eps_c=args.eps_c, seed=args.seed)
        write_archive(build_archive(instance, cfg), out)
    _write_run_manifest(out.parent, "preprocess",
                        {"n_surface": args.n_surface, "n_free": args.n_free,
                         "bounds": args.bounds, "eps_c": args.eps_c,
                         "kernel": args.kernel},
                        {"manifest": str(args.manifest)}, [out.name], t0, args.seed)
    return 0


def _model_config_from(section: dict, m: int):
    from .fields import ModelConfig

    kwargs = dict(section)
    kwargs.setdefault("m", m)
    for key in ("template_hidden", "deform_hidden", "refine_hidden"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return ModelConfig(**kwargs)


def _dataclass_from(cls, section: dict):
    import dataclasses

    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**section)


def cmd_train(args) -> int:
    import torch

    from .fields import ModelState, save_checkpoint
    from .figures import save_loss_curves
    from .losses import LossWeights
    from .training import TrainConfig, init_codes, train

    t0 = time.time()
    cfg_file = _load_config_file(args.config) if args.config else {}
    data_dir = Path(args.data)
    paths = sorted(data_dir.glob("*.msdf"))
    if not paths:
        raise UsageError(f"no .msdf archives under {data_dir}")
    archives = {p.stem: read_archive(p) for p in paths}
    m = next(iter(archives.values())).m
    if any(a.m != m for a in archives.values()):
        raise UsageError("archives disagree on category count")

    if args.threads > 0:
        torch.set_num_threads(args.threads)
    model_cfg = _model_config_from(cfg_file.get("model", {}), m)
    train_section = dict(cfg_file.get("train", {}))
    train_section.setdefault("seed", args.seed)
    train_cfg = _dataclass_from(TrainConfig, train_section)
    weights = _dataclass_from(LossWeights, cfg_file.get("weights", {}))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = ModelState(model_cfg, seed=train_cfg.seed)
    bank = init_codes(sorted(archives), m, train_cfg.seed, model_cfg.code_dim)
    log_path = out / "loss_log.jsonl"
    log_path.unlink(missing_ok=True)
    state, bank, history = train(
        archives, state, bank, train_cfg, weights,
        log_path=log_path, checkpoint_dir=out,
    )
    save_checkpoint(state, out / "final.ckpt", codes=bank,
                    extra={"train_config": train_section})
    save_loss_curves(history, out / "loss_curve.png")
    _write_run_manifest(
        out, "train",
        {"model": model_cfg.to_dict(), "train": train_section,
         "weights": weights.__dict__},
        {"data": str(data_dir), "archives": [p.name for p in paths]},
        ["final.ckpt", "loss_log.jsonl", "loss_curve.png"], t0, train_cfg.seed)
    return 0


def _load_codes(args, state, bank, attr_archive="archive", attr_iid="instance_id"):
    from .training import FitConfig, fit_latent

    archive_path = getattr(args, attr_archive.replace("-", "_"), None)
    iid = getattr(args, attr_iid.replace("-", "_"), None)
    if iid:
        if iid not in bank:
            raise UsageError(f"instance {iid!r} not in checkpoint code bank "
                             f"(has {sorted(bank)})")
        return np.asarray(bank[iid]), iid
    if archive_path:
        archive = read_archive(archive_path)
        fit_cfg = FitConfig(iterations=args.fit_iterations, lr=args.fit_lr,
                            points_per_instance=args.fit_points, seed=args.seed)
        codes, _ = fit_latent(state, archive, fit_cfg)
        return codes, Path(archive_path).stem
    raise UsageError("need --instance-id or --archive")


def cmd_reconstruct(args) -> int:
    from .fields import load_checkpoint
    from .figures import save_grid_slices
    from .reconstruction import SdfGrid, evaluate_grid, extract_iso_mesh, make_field

    t0 = time.time()
    state, bank, _ = load_checkpoint(args.checkpoint)
    codes, iid = _load_codes(args, state, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = evaluate_grid(make_field(state, codes), args.resolution, args.bounds)
    outputs = []
    for j in range(state.config.m):
        mesh = extract_iso_mesh(grid, j)
        name = f"cat{j}.ply"
        save_ply(mesh, out / name)
        outputs.append(name)
    save_grid_slices(grid, out / "grid_slices.png")
    (out / "codes.json").write_text(json.dumps(codes.tolist()))
    outputs += ["grid_slices.png", "codes.json"]
    _write_run_manifest(out, "reconstruct",
                        {"resolution": args.resolution, "bounds": args.bounds},
                        {"checkpoint": args.checkpoint, "instance": iid},
                        outputs, t0, args.seed)
    return 0


def cmd_recover(args) -> int:
    from .fields import load_checkpoint
    from .figures import save_grid_slices
    from .reconstruction import evaluate_grid, extract_iso_mesh, make_field
    from .training import FitConfig, recover_missing

    t0 = time.time()
    missing = tuple(int(tok) for tok in args.missing.split(",") if tok != "")
    if not missing:
        raise UsageError("--missing must list at least one category id")
    state, _, _ = load_checkpoint(args.checkpoint)
    archive = read_archive(args.archive)
    fit_cfg = FitConfig(iterations=args.fit_iterations, lr=args.fit_lr,
                        points_per_instance=args.fit_points,
                        missing_categories=missing, seed=args.seed)
    codes, _history = recover_missing(state, archive, fit_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = evaluate_grid(make_field(state, codes), args.resolution, args.bounds)
    outputs = []
    for j in range(state.config.m):
        name = f"cat{j}.ply"
        save_ply(extract_iso_mesh(grid, j), out / name)
        outputs.append(name)
    save_grid_slices(grid, out / "grid_slices.png")
    (out / "codes.json").write_text(json.dumps(codes.tolist()))
    outputs += ["grid_slices.png", "codes.json"]
    _write_run_manifest(out, "recover",
                        {"missing": list(missing), "resolution": args.resolution,
                         "fit_iterations": args.fit_iterations},
                        {"checkpoint": args.checkpoint, "archive": args.archive},
                        outputs, t0, args.seed)
    return 0


def cmd_correspond(args) -> int:
    from .fields import load_checkpoint
    from .reconstruction import correspond, reconstruct_instance
    from .shape_data.sampling import sample_on_mesh
    from .rng import CounterRng, STREAM_EVAL_SURFACE

    t0 = time.time()
    state, bank, _ = load_checkpoint(args.checkpoint)
    codes_a, iid_a = _load_codes_pair(args, state, bank, "a")
    codes_b, iid_b = _load_codes_pair(args, state, bank, "b")
    mesh_a = dict(reconstruct_instance(state, codes_a, args.resolution))[args.category]
    if len(mesh_a.faces) == 0:
        raise UsageError(f"category {args.category} of A reconstructs empty")
    src, _, _ = sample_on_mesh(
        mesh_a, args.n_source, CounterRng(args.seed, STREAM_EVAL_SURFACE, args.category, 3)
    )
    cmap = correspond(state, codes_a, codes_b, args.category, src,
                      n_surface_b=args.n_target, resolution=args.resolution,
                      seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cmap.to_csv(out / "correspondences.csv")
    _write_run_manifest(out, "correspond",
                        {"category": args.category, "n_source": args.n_source,
                         "n_target": args.n_target, "resolution": args.resolution},
                        {"checkpoint": args.checkpoint, "a": iid_a, "b": iid_b},
                        ["correspondences.csv"], t0, args.seed)
    return 0


def _load_codes_pair(args, state, bank, suffix: str):
    from .training import FitConfig, fit_latent

    iid = getattr(args, f"instance_id_{suffix}")
    archive_path = getattr(args, f"archive_{suffix}")
    if iid:
        if iid not in bank:
            raise UsageError(f"instance {iid!r} not in checkpoint code bank")
        return np.asarray(bank[iid]), iid
    if archive_path:
        archive = read_archive(archive_path)
        codes, _ = fit_latent(
            state, archive,
            FitConfig(iterations=args.fit_iterations, lr=args.fit_lr,
                      points_per_instance=args.fit_points, seed=args.seed),
        )
        return codes, Path(archive_path).stem
    raise UsageError(f"need --instance-id-{suffix} or --archive-{suffix}")


def _collect_meshes(directory: Path) -> dict[int, TriMesh]:
    out = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in (".ply", ".obj") and path.stem.startswith("cat"):
            out[int(path.stem[3:])] = load_mesh(path)
    if not out:
        raise UsageError(f"no cat<j>.ply/obj meshes under {directory}")
    return out


def cmd_eval(args) -> int:
    from .figures import save_metric_figure
    from .metrics import MetricConfig, MetricReport, chamfer, emd, evaluate_reconstruction

    t0 = time.time()
    pred = _collect_meshes(Path(args.pred))
    gt = _collect_meshes(Path(args.gt))
    missing = {int(tok) for tok in args.missing.split(",") if tok != ""}
    cfg = MetricConfig(n_points=args.n_points, emd_sub=args.emd_sub,
                       voxel_res=args.voxel_res, iv_bounds=args.iv_bounds,
                       seed=args.seed)
    kernel = kernel_bridge.find_kernel(args.kernel)
    if kernel is not None:
        report = _eval_via_kernel(kernel, Path(args.pred), Path(args.gt), pred, gt,
                                  missing, cfg)
    else:
        report = evaluate_reconstruction(pred, gt, cfg, missing=missing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    save_metric_figure(report, out / "metrics.png")
    if args.per_instance:
        print(json.dumps(report.rows, indent=2))
    _write_run_manifest(out, "eval", report.config | {"kernel": args.kernel},
                        {"pred": str(args.pred), "gt": str(args.gt),
                         "missing": sorted(missing)},
                        ["report.json", "report.csv", "metrics.png"], t0, args.seed)
    return 0


def _eval_via_kernel(kernel, pred_dir: Path, gt_dir: Path, pred, gt, missing, cfg):
    from .metrics import MetricReport

    def mesh_path(directory, cat):
        for ext in (".ply", ".obj"):
            p = directory / f"cat{cat}{ext}"
            if p.exists():
                return p
        raise UsageError(f"no mesh for category {cat} under {directory}")

    result = kernel_bridge.run_kernel(
        kernel, "metrics",
        "--pred", ",".join(str(mesh_path(pred_dir, c)) for c in sorted(pred)),
        "--gt", ",".join(str(mesh_path(gt_dir, c)) for c in sorted(gt)),
        "--n-points", str(cfg.n_points), "--emd-sub", str(cfg.emd_sub),
        "--voxel-res", str(cfg.voxel_res), "--iv-bounds", repr(cfg.iv_bounds),
        "--seed", str(cfg.seed),
    )
    rows = [
        {"category": int(row["category"]),
         "group": "miss" if int(row["category"]) in missing else "pres",
         "cd": float(row["cd"]), "emd": float(row["emd"])}
        for row in result["rows"]
    ]
    return MetricReport(
        rows=rows, iv=float(result["iv"]),
        aggregates=MetricReport.aggregate(rows),
        config={"n_points": cfg.n_points, "emd_sub": cfg.emd_sub,
                "voxel_res": cfg.voxel_res, "iv_bounds": cfg.iv_bounds,
                "seed": cfg.seed},
    )


def cmd_augment(args) -> int:
    from .fields import load_checkpoint
    from .reconstruction import edit_codes, reconstruct_instance
    from .rng import CounterRng

    t0 = time.time()
    state, bank, _ = load_checkpoint(args.checkpoint)
    codes, iid = _load_codes(args, state, bank)
    if args.towards:
        if args.towards not in bank:
            raise UsageError(f"instance {args.towards!r} not in code bank")
        direction = np.asarray(bank[args.towards])[args.category] - codes[args.category]
    else:
        direction = CounterRng(args.seed, 9, args.category).normals(0, state.config.code_dim)
        direction = direction / np.linalg.norm(direction)
    edited = edit_codes(codes, args.category, direction, args.magnitude)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for j, mesh in reconstruct_instance(state, edited, args.resolution):
        name = f"cat{j}.ply"
        save_ply(mesh, out / name)
        outputs.append(name)
    (out / "codes.json").write_text(json.dumps(edited.tolist()))
    outputs.append("codes.json")
    _write_run_manifest(out, "augment",
                        {"category": args.category, "magnitude": args.magnitude,
                         "towards": args.towards, "resolution": args.resolution},
                        {"checkpoint": args.checkpoint, "instance": iid},
                        outputs, t0, args.seed)
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="multisdf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"multisdf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="generate synthetic scene families")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--family", choices=["blob", "chairs"], default="blob")
    p.add_argument("--n-instances", type=int, default=8)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--contact", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--kinds", default=None, help="comma list, e.g. box,box,sphere")
    p.add_argument("--tessellation", type=int, default=3)
    p.add_argument("--archives", action="store_true", help="also build MSDF1 archives")
    p.add_argument("--n-surface", type=int, default=200_000)
    p.add_argument("--n-free", type=int, default=250_000)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("preprocess", help="meshes -> MSDF1 sample archive")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-surface", type=int, default=200_000)
    p.add_argument("--n-free", type=int, default=250_000)
    p.add_argument("--bounds", type=float, default=1.5)
    p.add_argument("--eps-c", type=float, default=0.01)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="joint optimization of networks and codes")
    _add_common(p)
    p.add_argument("--data", required=True, help="directory of .msdf archives")
    p.add_argument("--config", default=None, help="TOML or JSON config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    def fit_args(p):
        p.add_argument("--fit-iterations", type=int, default=800)
        p.add_argument("--fit-lr", type=float, default=1e-2)
        p.add_argument("--fit-points", type=int, default=16384)

    p = sub.add_parser("reconstruct", help="extract meshes for an instance")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance-id", default=None)
    p.add_argument("--archive", default=None, help="fit codes for this archive")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--bounds", type=float, default=1.1)
    p.add_argument("--out", required=True)
    fit_args(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("recover", help="fit with missing categories recovered")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--missing", required=True, help="comma list of category ids")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--bounds", type=float, default=1.1)
    p.add_argument("--out", required=True)
    fit_args(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("correspond", help="dense correspondence via template space")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance-id-a", default=None)
    p.add_argument("--archive-a", default=None)
    p.add_argument("--instance-id-b", default=None)
    p.add_argument("--archive-b", default=None)
    p.add_argument("--category", type=int, required=True)
    p.add_argument("--n-source", type=int, default=2000)
    p.add_argument("--n-target", type=int, default=100_000)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--out", required=True)
    fit_args(p)
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("eval", help="CD/EMD/IV report for reconstructed meshes")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--missing", default="", help="comma list of recovered categories")
    p.add_argument("--n-points", type=int, default=10_000)
    p.add_argument("--emd-sub", type=int, default=512)
    p.add_argument("--voxel-res", type=int, default=256)
    p.add_argument("--iv-bounds", type=float, default=1.0)
    p.add_argument("--per-instance", action="store_true",
                   help="print per-category rows to stdout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="latent-code editing")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance-id", default=None)
    p.add_argument("--archive", default=None)
    p.add_argument("--category", type=int, required=True)
    p.add_argument("--magnitude", type=float, default=1.0)
    p.add_argument("--towards", default=None,
                   help="interpolate toward another instance's code")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--out", required=True)
    fit_args(p)
    p.set_defaults(func=cmd_augment)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 1
    try:
        if getattr(args, "threads", 0) > 0:
            import torch

            torch.set_num_threads(args.threads)
        return args.func(args)
    except (UsageError, MeshError, ArchiveFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
