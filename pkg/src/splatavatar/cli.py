"""Command-line entry point: ``splatavatar <verb> [flags]``.

Every verb accepts ``--config FILE``; its ``key=value`` lines (keys spelled
like the long flags, with ``-`` or ``_``) override the flags given on the
command line. Logs go to stdout as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import apply_flat, read_kv

LOSS_FIELDS = ("l1", "ssim", "lpips", "mouth", "xyz", "scale")


def _log(line: str) -> None:
    print(line, flush=True)


def _images_arg(values) -> list[str]:
    out = []
    for v in values or []:
        out += [s for s in v.split(",") if s]
    return out


def apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    actions = {a.dest: a for a in parser._actions}
    for key, raw in read_kv(args.config).items():
        dest = key.replace("-", "_").replace(".", "_")
        act = actions.get(dest)
        if act is None or dest in ("help", "config"):
            raise SystemExit(f"error=unknown_config_key key={key}")
        if isinstance(act, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(act, argparse._AppendAction):
            val = [raw]
        else:
            val = act.type(raw) if act.type else raw
        setattr(args, dest, val)
    return args


# -- verbs ------------------------------------------------------------------------------

def cmd_datagen(args) -> int:
    from .data import generate_dataset

    m = generate_dataset(args.out, args.ids, args.expressions, args.views, seed=args.seed,
                         image_size=args.image_size, uv_res=args.uv_res, rig_seed=args.rig_seed,
                         distance=args.distance, elevation_deg=args.elevation, log=_log)
    _log(f"event=datagen out={args.out} frames={len(m.frames)}")
    return 0


def _train_config(args):
    from .losses import LossWeights
    from .pipeline import TrainConfig

    weights = LossWeights(**{f: getattr(args, f"weight_{f}") for f in LOSS_FIELDS})
    return TrainConfig(steps=args.steps, lr=args.lr, seed=args.seed, min_inputs=args.min_inputs,
                       max_inputs=args.max_inputs, supervision_views=args.supervision_views,
                       checkpoint_every=args.checkpoint_every, log_every=args.log_every, sampler=args.sampler,
                       k_anchor=args.k_anchor, random_per_id=args.random_per_id, metric=args.metric,
                       holdout=tuple(_images_arg(args.holdout)), weights=weights)


def cmd_train(args) -> int:
    from .data import load_manifest
    from .model import AvatarModel, ModelConfig
    from .pipeline import train

    manifest = load_manifest(args.data)
    cfg = _train_config(args)
    if args.init:
        model = AvatarModel.load(args.init, rig=manifest.rig)
    else:
        mc = ModelConfig(seed=args.model_seed)
        mc.recon.uv_res = manifest.uv_res
        mc.recon.image_size = int(manifest.meta["image_size"])
        if args.model_config:
            apply_flat(mc, read_kv(args.model_config))
        model = AvatarModel(mc, rig=manifest.rig)
    train(manifest, cfg, args.out, model=model, log=_log)
    _log(f"event=train_done out={args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    from .asset import save_asset
    from .model import AvatarModel
    from .pipeline import load_images, reconstruct_asset

    paths = _images_arg(args.images)
    if not paths:
        raise SystemExit("error=no_images")
    model = AvatarModel.load(args.weights)
    asset = reconstruct_asset(model, load_images(paths), args.weights, log=_log)
    save_asset(asset, args.out)
    _log(f"event=asset_written path={args.out}")
    return 0


def cmd_refine(args) -> int:
    from .asset import load_asset, save_asset
    from .data import read_camera_csv, read_expression_csv
    from .pipeline import load_images, model_for_asset, refine

    asset = load_asset(args.asset)
    model = model_for_asset(asset, args.weights)
    images = load_images(_images_arg(args.images))
    cams = read_camera_csv(args.cameras)
    exprs = read_expression_csv(args.expressions) if args.expressions else None
    out, rep = refine(model, asset, images, cams, exprs, iters=args.iters, lr=args.lr, scope=args.scope, log=_log)
    save_asset(out, args.out)
    _log(f"event=refine_done path={args.out} l1_before={rep.l1_before:.6g} l1_after={rep.l1_after:.6g} "
         f"seconds={rep.seconds:.4g}")
    return 0


def cmd_animate(args) -> int:
    from .asset import load_asset
    from .data import read_camera_csv, read_expression_csv
    from .pipeline import animate, model_for_asset

    asset = load_asset(args.asset)
    model = model_for_asset(asset, args.weights)
    animate(model, asset, read_expression_csv(args.expressions), read_camera_csv(args.cameras), args.out, log=_log)
    return 0


def cmd_benchmark(args) -> int:
    from .asset import load_asset
    from .pipeline import benchmark, benchmark_lines, model_for_asset, write_benchmark_csv

    asset = load_asset(args.asset)
    model = model_for_asset(asset, args.weights)
    rep = benchmark(model, asset, args.frames, seed=args.seed)
    for line in benchmark_lines(rep):
        _log(line)
    if args.csv:
        write_benchmark_csv(rep, args.csv)
    return 0


def cmd_gradcheck(args) -> int:
    from . import losses  # noqa: F401  registers the loss entries
    from .autodiff import CATALOG, grad_check

    names = _images_arg(args.ops) or sorted(CATALOG)
    failed = 0
    for name in names:
        worst = max(grad_check(name, seed=s) for s in range(args.seeds))
        ok = worst < args.tol
        failed += not ok
        _log(f"event=gradcheck op={name} max_rel_err={worst:.3e} pass={str(ok).lower()}")
    _log(f"event=gradcheck_summary ops={len(names)} failed={failed}")
    return 1 if failed else 0


def cmd_pca_plot(args) -> int:
    from .data import (build_adjusted_sampler, load_manifest, pca_project, planted_cluster_table,
                       select_anchors)

    if args.data:
        table = load_manifest(args.data).table()
    else:
        table = planted_cluster_table(seed=args.seed)[0]
    anchors = select_anchors(table, args.k_anchor)
    res = pca_project(table, anchors)
    plan = build_adjusted_sampler(table, args.k_anchor, args.random_per_id, seed=args.seed, anchors=anchors)
    lookup = {(int(i), int(f)): r for r, (i, f) in enumerate(zip(table.ids, table.frames))}
    picked = np.array([lookup[p] for p in plan.pairs()])
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise SystemExit("error=matplotlib_missing hint=pip_install_matplotlib")
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.scatter(res.coords[:, 0], res.coords[:, 1], s=4, c="0.7", label="all frames")
    ax.scatter(res.coords[picked, 0], res.coords[picked, 1], s=8, c="tab:blue", label="sampled")
    ax.scatter(res.anchor_coords[:, 0], res.anchor_coords[:, 1], s=40, marker="*", c="tab:red", label="anchors")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    _log(f"event=pca_plot out={args.out} rows={len(table)} anchors={len(anchors)}")
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatavatar", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="verb", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def verb(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        sp.add_argument("--config", default=None, help="key=value file overriding these flags")
        sp.set_defaults(fn=fn)
        return sp

    sp = verb("datagen", cmd_datagen, "render a synthetic multi-view expression dataset")
    sp.add_argument("--out", required=True, help="dataset directory")
    sp.add_argument("--ids", type=int, default=1, help="number of identities")
    sp.add_argument("--expressions", type=int, default=8, help="frames per identity (frame 0 is neutral)")
    sp.add_argument("--views", type=int, default=8, help="cameras on the orbit")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--image-size", type=int, default=128)
    sp.add_argument("--uv-res", type=int, default=64)
    sp.add_argument("--rig-seed", type=int, default=0)
    sp.add_argument("--distance", type=float, default=0.55, help="camera distance in meters")
    sp.add_argument("--elevation", type=float, default=15.0, help="orbit elevation in degrees")

    sp = verb("train", cmd_train, "train the reconstruction and dynamic networks")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="run directory for checkpoints and loss.csv")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--lr", type=float, default=3e-5)
    sp.add_argument("--seed", type=int, default=0, help="sampling seed")
    sp.add_argument("--model-seed", type=int, default=0, help="weight initialization seed")
    sp.add_argument("--init", default=None, help="start from this checkpoint")
    sp.add_argument("--model-config", default=None, help="key=value model architecture overrides, e.g. recon.token_dim=64")
    sp.add_argument("--min-inputs", type=int, default=1)
    sp.add_argument("--max-inputs", type=int, default=4)
    sp.add_argument("--supervision-views", type=int, default=4)
    sp.add_argument("--checkpoint-every", type=int, default=500)
    sp.add_argument("--log-every", type=int, default=50)
    sp.add_argument("--sampler", choices=("auto", "adjusted", "uniform"), default="auto")
    sp.add_argument("--k-anchor", type=int, default=20)
    sp.add_argument("--random-per-id", type=int, default=6)
    sp.add_argument("--metric", default="gradient_pyramid", help="registered perceptual metric")
    sp.add_argument("--holdout", action="append", default=None, help="id:frame:view to exclude (repeatable)")
    from .losses import LossWeights

    for f in fields(LossWeights):
        sp.add_argument(f"--weight-{f.name}", type=float, default=f.default, help=f"weight of the {f.name} term")

    sp = verb("reconstruct", cmd_reconstruct, "encode 1-4 images into an avatar asset")
    sp.add_argument("--weights", required=True, help="model checkpoint")
    sp.add_argument("--images", action="append", required=True, help="image paths (repeat or comma-separate)")
    sp.add_argument("--out", required=True, help="asset path")

    sp = verb("refine", cmd_refine, "test-time optimization of an asset on its input views")
    sp.add_argument("--asset", required=True)
    sp.add_argument("--images", action="append", required=True)
    sp.add_argument("--cameras", required=True, help="camera CSV, one row per image")
    sp.add_argument("--expressions", default=None, help="expression CSV, one row per image (default neutral)")
    sp.add_argument("--weights", default=None, help="model checkpoint (default: the one the asset names)")
    sp.add_argument("--iters", type=int, default=20)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--scope", choices=("all", "decoder"), default="all")
    sp.add_argument("--out", required=True, help="refined asset path")

    sp = verb("animate", cmd_animate, "render an expression sequence along a camera path")
    sp.add_argument("--asset", required=True)
    sp.add_argument("--expressions", required=True, help="expression sequence CSV")
    sp.add_argument("--cameras", required=True, help="camera path CSV (one row, or one per frame)")
    sp.add_argument("--weights", default=None)
    sp.add_argument("--out", required=True, help="output directory for frames and timing.csv")

    sp = verb("benchmark", cmd_benchmark, "per-stage timings of the drive path")
    sp.add_argument("--asset", required=True)
    sp.add_argument("--weights", default=None)
    sp.add_argument("--frames", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", default=None, help="also write per-frame timings here")

    sp = verb("gradcheck", cmd_gradcheck, "finite-difference check of every registered op")
    sp.add_argument("--ops", action="append", default=None, help="restrict to these ops")
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--tol", type=float, default=1e-4)

    sp = verb("pca-plot", cmd_pca_plot, "scatter of expressions and sampler anchors in PCA space")
    sp.add_argument("--data", default=None, help="dataset directory (default: a planted-cluster table)")
    sp.add_argument("--out", required=True, help="PNG path")
    sp.add_argument("--k-anchor", type=int, default=20)
    sp.add_argument("--random-per-id", type=int, default=6)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.verb]
    args = apply_config_file(sub, args)
    try:
        return int(args.fn(args) or 0)
    except (ValueError, FileNotFoundError, KeyError) as e:
        msg = str(e).replace(" ", "_")
        _log(f"event=error verb={args.verb} kind={type(e).__name__} message={msg}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
