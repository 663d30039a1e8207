"""Command-line entry point: ``unitymvs <subcommand> [options]``."""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import os
import sys

import numpy as np

from . import io
from .fusion import evaluate, fuse, photometric_filter
from .geometry import DepthMap, sample_hypotheses_uniform
from .loss import gradient_check
from .optim import fit_unity, random_unity_problem, scaling_experiment
from .pipeline import run_pipeline
from .synth import render_scene
from .unity import UnityVolume, generate_unity, regress_unity


def _name(i: int) -> str:
    return f"{i:08d}"


def load_config(args) -> io.Config:
    cfg = io.read_config(args.config) if args.config else io.Config()
    if args.seed is not None:
        cfg.scene = dataclasses.replace(cfg.scene, seed=args.seed)
    return cfg


def _scene_views(scene_dir: str):
    names = sorted(f[:-4] for f in os.listdir(os.path.join(scene_dir, "images")) if f.endswith(".pfm"))
    if len(names) < 2:
        raise ValueError(f"{scene_dir}: need at least two images")
    images, cams = [], []
    for name in names:
        image = io.read_pfm(os.path.join(scene_dir, "images", name + ".pfm")).astype(np.float64)
        cam, d_min, interval = io.read_camera(os.path.join(scene_dir, "cams", name + "_cam.txt"), image.shape[:2])
        images.append(image)
        cams.append((cam, d_min, interval))
    return names, images, cams


def cmd_synth(args, cfg: io.Config) -> None:
    scene = render_scene(cfg.scene)
    out = args.out
    for sub in ("images", "cams", "depths_gt"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    d_min = cfg.scene.depth_range[0]
    interval = cfg.pipeline.base_interval(cfg.scene.depth_range)
    for i, (image, cam, depth) in enumerate(zip(scene.images, scene.cameras, scene.depths)):
        io.write_pfm(os.path.join(out, "images", _name(i) + ".pfm"), image)
        io.write_camera(os.path.join(out, "cams", _name(i) + "_cam.txt"), cam, d_min, interval)
        io.write_pfm(os.path.join(out, "depths_gt", _name(i) + ".pfm"), depth)
    io.write_ply(os.path.join(out, "gt.ply"), scene.cloud)
    io.write_config(os.path.join(out, "config.ini"), cfg)
    print(f"wrote {len(scene.images)} views and {len(scene.cloud)} ground-truth points to {out}")


def cmd_depth(args, cfg: io.Config) -> None:
    names, images, cams = _scene_views(args.scene)
    first = cfg.pipeline.stages[0]
    os.makedirs(os.path.join(args.out, "depth"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "confidence"), exist_ok=True)
    cameras = [c for c, _, _ in cams]
    views = range(len(names)) if args.view is None else [args.view]
    for i in views:
        if not 0 <= i < len(names):
            raise ValueError(f"view {i} out of range")
        _, d_min, interval = cams[i]
        depth_range = (d_min, d_min + interval * first.ratio * (first.M - 1))
        depth = run_pipeline(cfg.pipeline, images, cameras, depth_range, ref_index=i)[-1].depth
        io.write_pfm(os.path.join(args.out, "depth", names[i] + ".pfm"), depth)
        io.write_pfm(os.path.join(args.out, "confidence", names[i] + ".pfm"), np.where(depth.mask, depth.confidence, 0.0))
        print(f"view {names[i]}: {int(depth.mask.sum())} valid pixels")


def cmd_fuse(args, cfg: io.Config) -> None:
    names, images, cams = _scene_views(args.scene)
    params = cfg.pipeline.filter
    if args.dynamic:
        params = dataclasses.replace(params, dynamic=True)
    views = []
    for name, image, (cam, _, _) in zip(names, images, cams):
        values = io.read_pfm(os.path.join(args.depth, "depth", name + ".pfm")).astype(np.float64)
        conf = io.read_pfm(os.path.join(args.depth, "confidence", name + ".pfm")).astype(np.float64)
        depth = photometric_filter(DepthMap(values, confidence=conf), params.conf_threshold)
        views.append((cam, depth, image))
    cloud = fuse(views, params)
    io.write_ply(args.out, cloud)
    print(f"fused {len(cloud)} points into {args.out}")


def cmd_eval(args, cfg: io.Config) -> int:
    recon = io.read_ply(args.recon)
    gt = io.read_ply(args.gt)
    cap = args.dist_cap
    if cap is None:
        finest = cfg.pipeline.base_interval(cfg.scene.depth_range) * cfg.pipeline.stages[-1].ratio
        cap = 20.0 * finest
    acc, comp, overall = evaluate(recon, gt, cap)
    print(f"accuracy {acc:.6f} completeness {comp:.6f} overall {overall:.6f}")
    if args.max_overall is not None and not overall < args.max_overall:
        print(f"error: overall {overall:.6f} not below {args.max_overall:g}", file=sys.stderr)
        return 1
    return 0


def cmd_unity(args, cfg: io.Config) -> None:
    if args.action == "generate":
        gt = io.read_depth(args.input)
        hyp = sample_hypotheses_uniform(args.d_min, args.interval, args.M, gt.shape)
        io.write_unity(args.out, generate_unity(gt, hyp))
    else:
        vol = io.read_unity(args.input)
        hyp = sample_hypotheses_uniform(args.d_min, args.interval, vol.M, vol.mask.shape)
        depth = regress_unity(UnityVolume(vol.values, vol.mask), hyp)
        io.write_pfm(args.out, depth)
        if args.confidence:
            io.write_pfm(args.confidence, np.where(depth.mask, depth.confidence, 0.0))
    print(f"wrote {args.out}")


def cmd_gradcheck(args, cfg: io.Config) -> int:
    err = gradient_check(cfg.pipeline.loss, n=args.grid)
    print(f"max relative error {err:.3e}")
    return 0 if err < args.tol else 1


def cmd_fit_unity(args, cfg: io.Config) -> None:
    seed = cfg.scene.seed
    hyp, gt, labels = random_unity_problem(tuple(args.shape), args.M, seed)
    fit = fit_unity(labels, cfg.pipeline.loss, lr=args.lr, iters=args.iters, loss_kind=args.kind,
                    stage=args.stage, hyp=hyp, gt=gt)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["iter", "loss", "mae"])
        for it, loss, mae in fit.trace:
            writer.writerow([it, repr(loss), repr(mae)])
    finally:
        if args.out:
            out.close()


def cmd_scaling_stats(args, cfg: io.Config) -> None:
    stats = scaling_experiment(args.samples, args.M, cfg.scene.seed)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["bin", "count", "sum"])
    for label, n, s in zip(stats.labels(), stats.counts, stats.sums):
        writer.writerow([label, int(n), repr(float(s))])
    print(f"# count peak {stats.labels()[int(np.argmax(stats.counts))]} "
          f"sum peak {stats.labels()[int(np.argmax(stats.sums))]}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the scene / experiment seed")

    parser = argparse.ArgumentParser(prog="unitymvs", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic scene to disk")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("depth", parents=[common], help="estimate depth maps for a scene directory")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--view", type=int, help="only this view (default: all)")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("fuse", parents=[common], help="filter and fuse depth maps into a PLY cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--depth", required=True, help="output directory of the depth command")
    p.add_argument("--out", required=True)
    p.add_argument("--dynamic", action="store_true", help="use dynamic consistency checking")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="accuracy / completeness against a ground-truth cloud")
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--dist-cap", type=float)
    p.add_argument("--max-overall", type=float, help="exit 1 unless overall is below this")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("unity", parents=[common], help="generate or regress unity volumes")
    p.add_argument("action", choices=("generate", "regress"))
    p.add_argument("--input", required=True, help="depth PFM (generate) or unity volume (regress)")
    p.add_argument("--out", required=True)
    p.add_argument("--d-min", type=float, required=True)
    p.add_argument("--interval", type=float, required=True)
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--confidence", help="also write the confidence map here (regress)")
    p.set_defaults(func=cmd_unity)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the loss gradient")
    p.add_argument("--grid", type=int, default=91)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fit-unity", parents=[common], help="fit free scores to random unity labels")
    p.add_argument("--kind", default="ufl", choices=("bce", "fl", "gfl", "ufl_naive", "ufl"))
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--stage", type=int, default=0)
    p.add_argument("--shape", type=int, nargs=2, default=(16, 16), metavar=("H", "W"))
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_fit_unity)

    p = sub.add_parser("scaling-stats", parents=[common], help="scaling-factor histogram experiment")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--M", type=int, default=32)
    p.set_defaults(func=cmd_scaling_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        cfg.pipeline.validate()
        status = args.func(args, cfg)
    except (ValueError, OSError, KeyError, IndexError, FloatingPointError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
