"""Command-line entry point: ``mvsopt {synth,depth,fuse,eval-pc,eval-depth,gradcheck}``.

Exit status is 0 on success, 1 when an input violates a contract (bad
values, malformed files, degenerate scenes, failed audits) and 2 on I/O
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evalkit, fusion, scene_io
from .config import Config, load_config
from .gradcheck import audit_gradients
from .losses import TERMS
from .scene_io import Scene
from .solver import initial_depth, solve_depth
from .features import build_handcrafted_pyramid
from .synthetic import parse_scene_spec, render_synthetic_scene

log = logging.getLogger("mvsopt")

GRADCHECK_MIN_PASS = 0.95


class AuditFailed(ValueError):
    pass


def source_views(cameras, ref: int, num_src: int) -> list[int]:
    """The ``num_src`` views whose centres are closest to the reference's (ties by index)."""
    c = cameras[ref].center
    others = [j for j in range(len(cameras)) if j != ref]
    others.sort(key=lambda j: (float(np.linalg.norm(cameras[j].center - c)), j))
    return others[:num_src]


def _load_scene(scene_dir, cfg: Config) -> Scene:
    scene = scene_io.load_scene_dir(scene_dir)
    return Scene(scene.images, [cfg.apply_depth_range(c) for c in scene.cameras])


def _reference_scene(scene: Scene, ref: int, cfg: Config) -> Scene:
    return scene.subset([ref] + source_views(scene.cameras, ref, cfg.num_src))


# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: Config):
    spec = parse_scene_spec(Path(args.spec).read_text(encoding="utf-8"))
    scene, depths = render_synthetic_scene(spec)
    scene_io.save_scene_dir(scene, args.out, gt_depths=depths)
    print(f"views={len(scene.images)}")


def _depth_job(scene: Scene, ref: int, cfg: Config, out: Path):
    name = scene_io.view_name(ref)
    sub = _reference_scene(scene, ref, cfg)
    report = solve_depth(sub, cfg.solver_config())
    scene_io.save_depth_pfm(report.depth, out / "depth" / f"{name}.pfm")
    scene_io.save_depth_pfm(report.initial_depth, out / "init" / f"{name}.pfm")
    scene_io.save_depth_pfm(report.confidence, out / "confidence" / f"{name}.pfm")
    scene_io.save_feature_map(report.normals.normals, out / "normals" / f"{name}.pfc")
    scene_io.save_image((report.normals.normals + 1) / 2, out / "normals" / f"{name}.png")
    scene_io._atomic_write(out / "traces" / f"{name}.csv", report.trace_csv().encode("ascii"))
    return ref, report.trace[-1].total, len(report.trace) - 1


def cmd_depth(args, cfg: Config):
    scene = _load_scene(args.scene_dir, cfg)
    if len(scene.images) < 2:
        raise ValueError("a scene needs at least two views")
    out = Path(args.out)
    for sub in ("depth", "init", "confidence", "normals", "traces"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    views = range(len(scene.images)) if args.view is None else [args.view]
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(lambda r: _depth_job(scene, r, cfg, out), views))
    for ref, total, iters in results:
        print(f"view={ref} loss={float(total)!r} iters={iters}")


def cmd_fuse(args, cfg: Config):
    scene = _load_scene(args.scene_dir, cfg)
    ddir = Path(args.depth_dir)
    ids = scene_io.scene_views(args.scene_dir)
    depths = [scene_io.load_depth_pfm(ddir / "depth" / f"{scene_io.view_name(i)}.pfm") for i in ids]
    confs = [scene_io.load_depth_pfm(ddir / "confidence" / f"{scene_io.view_name(i)}.pfm") for i in ids]
    params = cfg.fusion_params()
    filtered, stats, _ = fusion.filter_depths(depths, confs, scene.cameras, params)
    cloud = fusion.fuse_to_cloud(filtered, scene.cameras, scene.images, params)
    scene_io.save_pointcloud_ply(cloud, args.out)
    report = {}
    for i, (kept, total) in zip(ids, stats):
        report[f"view_{scene_io.view_name(i)}_kept"] = kept
        report[f"view_{scene_io.view_name(i)}_total"] = total
    report["points"] = len(cloud)
    scene_io.write_report(report, str(args.out) + ".stats.txt")
    print(scene_io.write_report(report), end="")


def cmd_eval_pc(args, cfg: Config):
    rec = scene_io.load_pointcloud_ply(args.rec)
    ref = scene_io.load_pointcloud_ply(args.ref)
    acc, comp, overall = evalkit.cloud_metrics(rec, ref, cfg.max_dist, cfg.voxel_size)
    print(scene_io.write_report({"acc": acc, "comp": comp, "overall": overall}), end="")
    if args.out:
        _write_csv(args.out, ["acc", "comp", "overall"], [acc, comp, overall])


def cmd_eval_depth(args, cfg: Config):
    est = scene_io.load_depth_pfm(args.est)
    gt = scene_io.load_depth_pfm(args.gt)
    thresholds = args.thresholds or list(cfg.thresholds)
    pct = evalkit.depth_metrics(est, gt, thresholds)
    keys = [f"pct_{t:g}" for t in thresholds]
    print(scene_io.write_report(dict(zip(keys, pct))), end="")
    if args.out:
        _write_csv(args.out, keys, pct)


def cmd_gradcheck(args, cfg: Config):
    scene = _reference_scene(_load_scene(args.scene_dir, cfg), 0, cfg)
    depth, _ = initial_depth(scene, cfg.temperature)
    rng = np.random.default_rng(args.seed)
    cam = scene.cameras[0]
    depth = np.clip(depth + rng.normal(0, cam.depth_interval, depth.shape), cam.depth_min, cam.depth_max)
    pyramids = [build_handcrafted_pyramid(img, cfg.feature_scales) for img in scene.images]
    samples = args.samples or cfg.gradcheck_samples
    audit = audit_gradients(scene, depth, pyramids, cfg.loss_weights(), samples, args.seed)
    failed = []
    for term in TERMS:
        a = audit[term]
        ok = a.pass_fraction >= GRADCHECK_MIN_PASS
        print(f"{term}: pass={a.pass_fraction:.4f} excluded={int(a.excluded.sum())} "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(term)
    if failed:
        raise AuditFailed(f"gradient audit failed for: {', '.join(failed)}")


def _write_csv(path, header, row):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerow([repr(float(v)) for v in row])
    scene_io._atomic_write(path, buf.getvalue().encode("ascii"))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=1, help="concurrent per-view jobs")

    p = argparse.ArgumentParser(prog="mvsopt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic scene")
    s.add_argument("spec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("depth", parents=[common], help="estimate a depth map per view")
    s.add_argument("scene_dir")
    s.add_argument("--out", required=True)
    s.add_argument("--view", type=int, default=None, help="only this reference view")
    s.set_defaults(func=cmd_depth)

    s = sub.add_parser("fuse", parents=[common], help="filter and fuse depth maps into a PLY")
    s.add_argument("depth_dir")
    s.add_argument("scene_dir")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval-pc", parents=[common], help="accuracy / completeness of a cloud")
    s.add_argument("rec")
    s.add_argument("ref")
    s.add_argument("--out", help="also write a CSV row here")
    s.set_defaults(func=cmd_eval_pc)

    s = sub.add_parser("eval-depth", parents=[common], help="depth error percentages")
    s.add_argument("est")
    s.add_argument("gt")
    s.add_argument("--thresholds", type=float, nargs="+")
    s.add_argument("--out", help="also write a CSV row here")
    s.set_defaults(func=cmd_eval_depth)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    s.add_argument("scene_dir")
    s.add_argument("--samples", type=int, default=None)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        args.func(args, cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
