"""Command-line entry point: ``dynfeat <subcommand> ...``.

Exit status is 0 on success and 2 on any input or validation error.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import synth
from .config import ConfigError, PipelineConfig, load_config
from .dynamic_filter import (filter_dynamic, load_detections_json, load_keypoints_csv,
                             save_detections_json, save_keypoints_csv, save_mask_csv)
from .hdbscan import condense, build_mst, extract_clusters, extract_two_clusters
from .ingest import (ParseError, PosedFrame, associate_image_lists, backproject, load_association,
                     load_intrinsics, load_trajectory, read_depth_png, save_association, save_intrinsics,
                     save_trajectory, write_depth_png)
from .pipeline import preprocess, run_sequence
from .pointcloud import MAGIC, load_cloud, save_cloud
from .traj_eval import ate_with_alignment, rpe, write_aligned_csv


class UsageError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _emit(obj, out=None):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_ingest(args):
    cfg = _config(args)
    stride = args.stride or cfg.stride

    def intrinsics():
        if not args.intrinsics:
            raise UsageError("back-projection needs --intrinsics")
        return load_intrinsics(args.intrinsics)

    if args.depth:
        if not args.out:
            raise UsageError("--depth needs --out")
        cloud = backproject(read_depth_png(args.depth), intrinsics(), stride)
        save_cloud(args.out, cloud)
        _emit({"points": int(len(cloud)), "out": args.out})
        return
    if args.seq:
        assoc = os.path.join(args.seq, "associations.txt")
        if not os.path.isfile(assoc):
            frames = associate_image_lists(os.path.join(args.seq, "rgb.txt"),
                                           os.path.join(args.seq, "depth.txt"))
            rel = [PosedFrame(f.timestamp, os.path.relpath(f.depth_path, args.seq),
                              os.path.relpath(f.rgb_path, args.seq), f.rgb_timestamp) for f in frames]
            save_association(assoc, rel)
        args.assoc = assoc
    if not args.assoc:
        raise UsageError("ingest needs --depth, --assoc or --seq")
    frames = load_association(args.assoc)
    if not args.out:
        _emit({"frames": len(frames), "associations": args.assoc})
        return
    K = intrinsics()
    os.makedirs(args.out, exist_ok=True)
    counts = []
    for frame in frames:
        cloud = backproject(frame.load_depth(), K, stride)
        save_cloud(os.path.join(args.out, f"{frame.timestamp:.6f}.pc3d"), cloud)
        counts.append(int(len(cloud)))
    _emit({"frames": len(frames), "points": counts, "out": args.out})


def cmd_preprocess(args):
    cfg = _config(args)
    cloud = load_cloud(args.inp)
    timings = {}
    out = preprocess(cloud, cfg, cfg.seed, timings)
    save_cloud(args.out, out)
    _emit({"input_points": int(len(cloud)), "output_points": int(len(out))})


def cmd_cluster(args):
    cfg = _config(args)
    with open(args.inp, "rb") as fh:
        binary = fh.read(4) == MAGIC
    if binary:
        X = load_cloud(args.inp)
    else:
        X = np.loadtxt(args.inp, ndmin=2, comments="#", delimiter=args.delimiter)
    k = args.k or cfg.min_pts
    mcs = args.min_cluster_size or cfg.min_cluster_size
    if args.two:
        res = extract_two_clusters(X, k, mcs)
    else:
        res = extract_clusters(condense(build_mst(X, k), mcs, n_points=len(X)))
    with open(args.out, "w") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(res.labels):
            fh.write(f"{i},{int(lab)}\n")
    _emit({"points": int(len(X)), "clusters": res.n_clusters, "degenerate": res.degenerate})


def cmd_filter(args):
    cfg = _config(args)
    K = load_intrinsics(args.intrinsics)
    kps = load_keypoints_csv(args.keypoints)
    dets = load_detections_json(args.detections, cfg.dynamic_classes) if args.detections else []
    mask = filter_dynamic(kps, dets, K, cfg.filter_params)
    save_mask_csv(args.out, mask)
    _emit({"keypoints": int(len(kps)), "dynamic": int((mask == 1).sum())})


def cmd_eval_ate(args):
    cfg = _config(args)
    est, gt = load_trajectory(args.est), load_trajectory(args.gt)
    max_dt = args.max_dt or cfg.max_dt
    report, T, pairs, _ = ate_with_alignment(est, gt, max_dt)
    if args.aligned_out:
        write_aligned_csv(args.aligned_out, est, gt, T, pairs)
    _emit({"ate": report.to_dict(), "alignment": T.tolist()}, args.out)


def cmd_eval_rpe(args):
    cfg = _config(args)
    est, gt = load_trajectory(args.est), load_trajectory(args.gt)
    trans, rot = rpe(est, gt, args.delta or cfg.rpe_delta, args.max_dt or cfg.max_dt)
    _emit({"delta": args.delta or cfg.rpe_delta, "translational_m": trans.to_dict(),
           "rotational_deg": rot.to_dict()}, args.out)


def write_scene(out_dir, scene):
    os.makedirs(out_dir, exist_ok=True)
    write_depth_png(os.path.join(out_dir, "depth.png"), scene.depth)
    save_cloud(os.path.join(out_dir, "cloud.pc3d"), scene.cloud)
    save_keypoints_csv(os.path.join(out_dir, "keypoints.csv"), scene.keypoints)
    save_detections_json(os.path.join(out_dir, "detections.json"), scene.detections)
    save_mask_csv(os.path.join(out_dir, "truth.csv"), scene.truth)
    save_intrinsics(os.path.join(out_dir, "intrinsics.txt"), scene.intrinsics)


def write_sequence(out_dir, frames: int, seed: int, rate: float = 30.0):
    """A synthetic TUM-layout sequence; the person slides across the image."""
    for sub in ("depth", "keypoints", "detections", "truth"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    lines = ["# timestamp rgb timestamp depth"]
    for i in range(frames):
        t = 1.0 + i / rate
        name = f"{t:.6f}"
        shift = int(round(120 * np.sin(2 * np.pi * i / max(frames, 2))))
        spec = synth.SceneSpec(
            person_rect=(260 + shift, 120, 380 + shift, 400),
            box_rect=(200 + shift, 80, 440 + shift, 420),
            seed=(seed * 1_000_003 + i) & 0xFFFFFFFFFFFFFFFF,
        )
        scene = synth.generate_scene(spec)
        write_depth_png(os.path.join(out_dir, "depth", name + ".png"), scene.depth)
        save_keypoints_csv(os.path.join(out_dir, "keypoints", name + ".csv"), scene.keypoints)
        save_detections_json(os.path.join(out_dir, "detections", name + ".json"), scene.detections)
        save_mask_csv(os.path.join(out_dir, "truth", name + ".csv"), scene.truth)
        lines.append(f"{name} rgb/{name}.png {name} depth/{name}.png")
    with open(os.path.join(out_dir, "associations.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    save_intrinsics(os.path.join(out_dir, "intrinsics.txt"), synth.TUM_FR3)


def cmd_synth(args):
    seed = _config(args).seed
    if args.kind == "scene":
        spec = synth.SceneSpec(
            person_depth=args.person_depth, background_depth=args.background_depth,
            person_spread=args.spread, background_spread=args.spread, seed=seed,
        )
        scene = synth.generate_scene(spec)
        write_scene(args.out, scene)
        _emit({"keypoints": int(len(scene.keypoints)), "dynamic": int(scene.truth.sum()), "out": args.out})
    elif args.kind == "traj":
        spec = synth.TrajSpec(duration=args.duration, rate=args.rate, shape=args.shape,
                              sigma_t=args.sigma_t, sigma_r=args.sigma_r, drift=args.drift, seed=seed)
        gt, est = synth.generate_trajectory(spec)
        os.makedirs(args.out, exist_ok=True)
        save_trajectory(os.path.join(args.out, "groundtruth.txt"), gt)
        save_trajectory(os.path.join(args.out, "estimate.txt"), est)
        _emit({"poses": len(gt), "out": args.out})
    else:
        write_sequence(args.out, args.frames, seed)
        _emit({"frames": args.frames, "out": args.out})


def cmd_pipeline(args):
    cfg = _config(args)
    intr = args.intrinsics or os.path.join(args.seq, "intrinsics.txt")
    K = load_intrinsics(intr)
    summary, timing = run_sequence(args.seq, args.out, K, cfg, jobs=args.jobs, assoc_name=args.assoc)
    report = {k: summary[k] for k in ("frames", "keypoints", "dynamic_keypoints", "dynamic_ratio")}
    report["latency"] = timing
    _emit(report)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value pipeline configuration file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker threads (pipeline)")

    p = argparse.ArgumentParser(prog="dynfeat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="back-project depth images to point clouds")
    s.add_argument("--intrinsics")
    s.add_argument("--depth", help="single 16-bit depth PNG")
    s.add_argument("--assoc", help="TUM association file")
    s.add_argument("--seq", help="TUM sequence directory; builds associations.txt from rgb.txt/depth.txt if missing")
    s.add_argument("--stride", type=int)
    s.add_argument("--out", help="cloud file (--depth) or directory (--assoc, --seq)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("preprocess", parents=[common], help="voxel, ground-plane and outlier filtering")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("cluster", parents=[common], help="HDBSCAN labels for a points file")
    s.add_argument("--in", dest="inp", required=True, help="one vector per line")
    s.add_argument("--out", required=True, help="labels CSV (index,label)")
    s.add_argument("--k", type=int)
    s.add_argument("--min-cluster-size", type=int)
    s.add_argument("--two", action="store_true", help="force a two-cluster split")
    s.add_argument("--delimiter", default=None)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("filter", parents=[common], help="label keypoints dynamic/static")
    s.add_argument("--keypoints", required=True)
    s.add_argument("--detections")
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("eval-ate", parents=[common], help="absolute trajectory error")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--max-dt", type=float)
    s.add_argument("--out")
    s.add_argument("--aligned-out", help="CSV of aligned estimate vs ground truth")
    s.set_defaults(func=cmd_eval_ate)

    s = sub.add_parser("eval-rpe", parents=[common], help="relative pose error")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--delta", type=float)
    s.add_argument("--max-dt", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_rpe)

    s = sub.add_parser("synth", parents=[common], help="synthetic scene, trajectory or sequence")
    s.add_argument("kind", choices=("scene", "traj", "sequence"))
    s.add_argument("--out", required=True)
    s.add_argument("--person-depth", type=float, default=1.5)
    s.add_argument("--background-depth", type=float, default=4.0)
    s.add_argument("--spread", type=float, default=0.05)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--rate", type=float, default=30.0)
    s.add_argument("--shape", default="circle")
    s.add_argument("--sigma-t", type=float, default=0.0)
    s.add_argument("--sigma-r", type=float, default=0.0)
    s.add_argument("--drift", type=float, default=0.0)
    s.add_argument("--frames", type=int, default=10)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pipeline", parents=[common], help="per-frame filtering over a sequence")
    s.add_argument("--seq", required=True, help="sequence directory")
    s.add_argument("--assoc", default="associations.txt", help="association file inside --seq")
    s.add_argument("--intrinsics", help="defaults to <seq>/intrinsics.txt")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (UsageError, ConfigError, ParseError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"dynfeat {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
