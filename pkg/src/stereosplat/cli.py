"""Command-line surface: make-synthetic, init-points, train, render, eval."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cloud import load_ply, save_ply
from .losses import psnr, ssim
from .renderer import render
from .sceneio import (
    SceneFormatError,
    load_scene,
    save_depth_png16,
    save_image,
    write_pfm,
)
from .synthetic import SyntheticSceneSpec, make_scene
from .trainer import TrainConfig, TrainingDiverged, build_init_cloud, train


def _add_make_synthetic(sub):
    p = sub.add_parser("make-synthetic", help="generate a synthetic test scene")
    p.add_argument("--out", required=True, help="scene directory to create")
    p.add_argument(
        "--kind",
        default="textured-plane",
        choices=["textured-plane", "two-layer", "random-blob-cloud"],
    )
    p.add_argument("--gaussians", type=int, default=900)
    p.add_argument("--cameras", type=int, default=5)
    p.add_argument("--image-size", type=int, default=48)
    p.add_argument("--ring-radius", type=float, default=0.12)
    p.add_argument("--texture-frequency", type=float, default=1.2)
    p.add_argument("--seed", type=int, default=0)


def _add_init_points(sub):
    p = sub.add_parser("init-points", help="build an initial Gaussian cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output Gaussian PLY path")
    p.add_argument("--mode", default="auto", choices=["auto", "dense", "sparse", "random"])
    p.add_argument("--random-count", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)


def _add_train(sub):
    p = sub.add_parser("train", help="optimize a Gaussian cloud for a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON training config to start from")
    p.add_argument("--iters", type=int, help="override total iterations")
    p.add_argument("--seed", type=int, help="override RNG seed")
    p.add_argument("--opacity-decay", type=float, help="override decay coefficient")
    p.add_argument("--d-max", type=float, help="override max camera shift")
    p.add_argument("--consis-start", type=int, help="override consistency start iteration")
    p.add_argument("--init", default="auto", choices=["auto", "dense", "sparse", "random", "ply"])
    p.add_argument("--init-ply", help="Gaussian PLY to start from (with --init ply)")


def _add_render(sub):
    p = sub.add_parser("render", help="render color/depth for a view")
    p.add_argument("--scene", required=True)
    p.add_argument("--cloud", required=True, help="Gaussian PLY checkpoint")
    p.add_argument("--view", required=True, help="view id to render")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--depth-format", default="pfm", choices=["pfm", "png16"])


def _add_eval(sub):
    p = sub.add_parser("eval", help="PSNR/SSIM metrics over test views")
    p.add_argument("--scene", required=True)
    p.add_argument("--cloud", required=True, help="Gaussian PLY checkpoint")
    p.add_argument("--views", nargs="*", help="view ids (default: test split)")
    p.add_argument("--out", help="optional JSON metrics output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereosplat",
        description="Sparse-view Gaussian splatting with binocular consistency",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_make_synthetic(sub)
    _add_init_points(sub)
    _add_train(sub)
    _add_render(sub)
    _add_eval(sub)
    return parser


def _cmd_make_synthetic(args) -> int:
    spec = SyntheticSceneSpec(
        kind=args.kind,
        n_gaussians=args.gaussians,
        n_cameras=args.cameras,
        image_size=args.image_size,
        ring_radius=args.ring_radius,
        texture_frequency=args.texture_frequency,
        seed=args.seed,
        look_at=(0.0, 0.0, 2.0) if args.kind == "random-blob-cloud" else None,
    )
    scene = make_scene(spec, args.out)
    print(
        f"wrote scene '{args.kind}' with {len(scene.bundle.cameras)} views "
        f"({len(scene.bundle.train_ids)} train / {len(scene.bundle.test_ids)} test) to {args.out}"
    )
    return 0


def _cmd_init_points(args) -> int:
    bundle = load_scene(args.scene)
    config = TrainConfig(seed=args.seed, random_init_count=args.random_count)
    cloud = build_init_cloud(bundle, config, args.mode)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_ply(cloud))
    print(f"initialized {len(cloud)} Gaussians -> {out}")
    return 0


def _cmd_train(args) -> int:
    bundle = load_scene(args.scene)
    if args.config:
        config = TrainConfig.from_json(Path(args.config).read_text())
    else:
        config = TrainConfig()
    overrides = {
        "total_iters": args.iters,
        "seed": args.seed,
        "opacity_decay": args.opacity_decay,
        "d_max": args.d_max,
        "consis_start_iter": args.consis_start,
    }
    for key, value in overrides.items():
        if value is not None:
            config = TrainConfig(**{**json.loads(config.to_json()), key: value})
    init_cloud = None
    init_mode = args.init
    if args.init == "ply":
        if not args.init_ply:
            print("error: --init ply requires --init-ply", file=sys.stderr)
            return 2
        init_cloud = load_ply(Path(args.init_ply).read_bytes())
        init_mode = "auto"
    cloud, log = train(bundle, config, init_cloud=init_cloud, init_mode=init_mode, out_dir=args.out)
    final = log.steps()[-1] if log.steps() else None
    summary = f"trained {config.total_iters} iters, {len(cloud)} Gaussians"
    if final is not None:
        summary += f", final color loss {final['l_color']:.5f}"
    print(summary + f" -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    bundle = load_scene(args.scene)
    if args.view not in bundle.cameras:
        print(f"error: unknown view {args.view!r}", file=sys.stderr)
        return 1
    cloud = load_ply(Path(args.cloud).read_bytes())
    fb, _ = render(cloud, bundle.cameras[args.view])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / f"{args.view}_color.png", np.clip(fb.color, 0.0, 1.0))
    if args.depth_format == "pfm":
        write_pfm(out / f"{args.view}_depth.pfm", fb.depth)
    else:
        save_depth_png16(out / f"{args.view}_depth.png", fb.depth)
    print(f"rendered view {args.view} -> {out}")
    return 0


def _fmt(value: float) -> str:
    return "inf" if np.isinf(value) else f"{value:.4f}"


def _cmd_eval(args) -> int:
    bundle = load_scene(args.scene)
    cloud = load_ply(Path(args.cloud).read_bytes())
    ids = args.views if args.views else bundle.test_ids
    if not ids:
        print("error: no views to evaluate", file=sys.stderr)
        return 1
    rows = []
    for vid in ids:
        if vid not in bundle.cameras:
            print(f"error: unknown view {vid!r}", file=sys.stderr)
            return 1
        fb, _ = render(cloud, bundle.cameras[vid])
        target = bundle.image(vid)
        rows.append((vid, psnr(fb.color, target), ssim(fb.color, target)))
    print(f"{'view':<10} {'PSNR':>10} {'SSIM':>10}")
    for vid, p, s in rows:
        print(f"{vid:<10} {_fmt(p):>10} {s:>10.4f}")
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    print(f"{'mean':<10} {_fmt(mean_psnr):>10} {mean_ssim:>10.4f}")
    # LPIPS needs a pretrained network and is intentionally not reported.
    if args.out:
        doc = {
            "views": {vid: {"psnr": p, "ssim": s} for vid, p, s in rows},
            "mean_psnr": mean_psnr,
            "mean_ssim": mean_ssim,
        }
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1))
    return 0


_COMMANDS = {
    "make-synthetic": _cmd_make_synthetic,
    "init-points": _cmd_init_points,
    "train": _cmd_train,
    "render": _cmd_render,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SceneFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
