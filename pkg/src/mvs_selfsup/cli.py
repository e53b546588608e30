"""Command-line driver: ``synth``, ``optimize``, ``coseg`` and ``eval``.

Exit codes: 0 on success, 2 on usage or parse errors, 1 on runtime failures.
The ``MVS_SELFSUP_THREADS`` environment variable caps BLAS worker threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import coseg, io
from .geometry import DepthMap
from .metrics import DEFAULT_OUTLIER_CAP, EmptyCloudError, depth_to_points, evaluate
from .optimizer import OptimizationAborted, OptimizeConfig, SceneBundle, depth_error, optimize
from .synth import RenderedScene, SceneSpec, render

log = logging.getLogger("mvs_selfsup")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or unparsable input files (exit code 2)."""


def _thread_limit():
    n = os.environ.get("MVS_SELFSUP_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_scene(scene: RenderedScene, out: Path, spec: SceneSpec | None = None) -> dict:
    """Write PNG images, PFM depths, camera files and a manifest."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "lossless").mkdir(exist_ok=True)
    views = []
    for i, (img, depth, cam) in enumerate(zip(scene.images, scene.depths, scene.cameras)):
        names = {
            "image": f"view_{i:02d}.png",
            "image_pfm": f"lossless/view_{i:02d}.pfm",
            "depth": f"depth_{i:02d}.pfm",
            "camera": f"cam_{i:02d}.txt",
        }
        io.write_png(out / names["image"], img)
        io.write_pfm(out / names["image_pfm"], img)
        io.write_pfm(out / names["depth"], depth.values)
        io.write_camera(out / names["camera"], cam)
        views.append(names)
    manifest = {"n_views": scene.n_views, "d_min": scene.d_min, "d_max": scene.d_max, "views": views}
    if spec is not None:
        manifest["spec"] = spec.to_dict()
    _dump(out / "manifest.json", manifest)
    return manifest


def load_scene(scene_dir) -> RenderedScene:
    """Read a directory written by ``write_scene``."""
    scene_dir = Path(scene_dir)
    manifest = _load_json(scene_dir / "manifest.json")
    images, depths, cams = [], [], []
    for v in manifest["views"]:
        pfm = v.get("image_pfm")
        if pfm and (scene_dir / pfm).exists():
            images.append(io.read_pfm(scene_dir / pfm))
        else:
            images.append(io.read_png(scene_dir / v["image"]))
        cam = io.read_camera(scene_dir / v["camera"])
        cams.append(cam)
        if v.get("depth") and (scene_dir / v["depth"]).exists():
            depths.append(DepthMap(io.read_pfm(scene_dir / v["depth"]), cam.depth_min, cam.depth_max))
    return RenderedScene(images, depths, cams, manifest["d_min"], manifest["d_max"])


def cmd_synth(args) -> int:
    try:
        spec = SceneSpec.from_dict(_load_json(args.spec))
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"invalid scene spec: {exc}") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    scene = render(spec)
    manifest = write_scene(scene, Path(args.out), spec)
    log.info("wrote %d views to %s", manifest["n_views"], args.out)
    return EXIT_OK


def _run_config(args) -> dict:
    cfg = _load_json(args.config) if args.config else {}
    if args.scene:
        cfg["scene_dir"] = args.scene
    if args.out:
        cfg["out_dir"] = args.out
    if "scene_dir" not in cfg:
        raise UsageError("no scene directory given (config 'scene_dir' or --scene)")
    opt = dict(cfg.get("optimize", {}))
    if "weights" in cfg:
        opt["weights"] = cfg["weights"]
    if "augment" in cfg:
        opt["augment"] = cfg["augment"]
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" in cfg:
        opt["seed"] = cfg["seed"]
    if args.disable_sc:
        opt["enable_sc"] = False
    if args.disable_da:
        opt["enable_da"] = False
    if args.levels is not None:
        opt["pyramid_levels"] = args.levels
    try:
        cfg["optimize"] = OptimizeConfig.from_dict(opt)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid optimizer config: {exc}") from exc
    cfg.setdefault("out_dir", "optimize_out")
    cfg.setdefault("init", {"mode": "gt_scale", "scale": 1.1})
    return cfg


def _initial_depth(scene: RenderedScene, init: dict) -> DepthMap:
    mode = init.get("mode", "gt_scale")
    if mode == "gt_scale":
        if not scene.depths:
            raise UsageError("init mode 'gt_scale' needs ground-truth depth in the scene")
        gt = scene.depths[0]
        vals = np.clip(gt.values * float(init.get("scale", 1.1)), scene.d_min, scene.d_max)
    elif mode == "constant":
        h, w = scene.images[0].shape[:2]
        vals = np.full((h, w), float(init.get("value", (scene.d_min + scene.d_max) / 2)))
    else:
        raise UsageError(f"unknown init mode {mode!r}")
    return DepthMap(vals, scene.d_min, scene.d_max)


def cmd_optimize(args) -> int:
    cfg = _run_config(args)
    config: OptimizeConfig = cfg["optimize"]
    scene = load_scene(cfg["scene_dir"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    init = _initial_depth(scene, cfg["init"])
    bundle = SceneBundle(scene.images, scene.cameras)
    try:
        depth, trace = optimize(init, bundle, config)
        failed = None
    except OptimizationAborted as exc:
        depth, trace, failed = None, exc.trace, str(exc)
    with open(out / "trace.jsonl", "w") as f:
        for bd in trace.breakdowns:
            f.write(json.dumps(bd.to_dict(), sort_keys=True) + "\n")
    if failed:
        log.error("optimization aborted: %s", failed)
        return EXIT_RUNTIME
    io.write_pfm(out / "depth.pfm", depth.values)
    for k, snap in enumerate(trace.level_depths):
        io.write_pfm(out / f"depth_level{k}.pfm", snap)
    cam0 = scene.cameras[0]
    io.write_ply(out / "recon.ply", depth_to_points(depth, cam0))
    summary = {
        "config": config.to_dict(),
        "iterations": len(trace.breakdowns),
        "final": trace.level_breakdowns[-1].to_dict() if trace.level_breakdowns else None,
        "multiscale": trace.multiscale.to_dict() if trace.multiscale else None,
    }
    if scene.depths:
        gt = scene.depths[0]
        err = depth_error(depth, gt)
        summary["depth_error"] = {
            "mean_abs": err,
            "mean_abs_init": depth_error(init, gt),
            "relative_to_range": err / (gt.d_max - gt.d_min),
        }
        io.write_ply(out / "gt.ply", depth_to_points(gt, cam0))
    _dump(out / "summary.json", summary)
    log.info("optimization finished in %.2fs", trace.wall_time)
    return EXIT_OK


def cmd_coseg(args) -> int:
    scene = load_scene(args.scene)
    k = args.k
    if not 1 <= k <= coseg.N_FEATURES:
        raise UsageError(f"--k must be in [1, {coseg.N_FEATURES}] (feature channels), got {k}")
    seed = 0 if args.seed is None else args.seed
    maps, factors = coseg.cosegment(scene.images, kc=k, downsample=args.downsample, max_iters=args.iters, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(maps):
        io.write_png(out / f"labels_{i:02d}.png", coseg.label_image(m))
    report = {
        "k": k,
        "iterations": factors.iterations,
        "final_error": factors.final_error,
        "error_trace": factors.error_trace,
        "simplex_max_deviation": float(np.max(np.abs(maps.sum(-1) - 1))),
        "cluster_fractions": np.bincount(maps.argmax(-1).ravel(), minlength=k).tolist(),
    }
    _dump(out / "report.json", report)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        recon, _ = io.read_ply(args.recon)
        gt, _ = io.read_ply(args.gt)
    except (io.FormatError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        res = evaluate(recon, gt, args.cap)
    except EmptyCloudError as exc:
        raise UsageError(str(exc)) from exc
    print(json.dumps(res.to_dict(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvs-selfsup", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a procedural scene")
    s.add_argument("spec", help="scene spec JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    o = sub.add_parser("optimize", help="optimize the reference depth of a scene")
    o.add_argument("--config", help="run config JSON")
    o.add_argument("--scene", help="scene directory (overrides config)")
    o.add_argument("--out", help="output directory (overrides config)")
    o.add_argument("--seed", type=int)
    o.add_argument("--disable-sc", action="store_true")
    o.add_argument("--disable-da", action="store_true")
    o.add_argument("--levels", type=int)
    o.set_defaults(func=cmd_optimize)

    c = sub.add_parser("coseg", help="co-segment the views of a scene")
    c.add_argument("scene")
    c.add_argument("--k", type=int, default=coseg.DEFAULT_KC)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--iters", type=int, default=200)
    c.add_argument("--downsample", type=int, default=1)
    c.set_defaults(func=cmd_coseg)

    e = sub.add_parser("eval", help="accuracy/completeness of two PLY clouds")
    e.add_argument("recon")
    e.add_argument("gt")
    e.add_argument("--cap", type=float, default=DEFAULT_OUTLIER_CAP)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
