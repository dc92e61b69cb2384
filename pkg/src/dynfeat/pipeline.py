"""Per-frame geometric path and the streaming sequence runner behind ``pipeline``."""
import json
import os
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .config import PipelineConfig
from .dynamic_filter import (DYNAMIC, UNKNOWN_DEPTH, dynamic_flags, filter_dynamic,
                             load_detections_json, load_keypoints_csv, save_mask_csv)
from .ingest import CameraIntrinsics, DepthImage, backproject, load_association
from .pointcloud import radius_outlier_removal, ransac_plane, remove_plane_inliers, voxel_downsample

STAGES = ("backproject", "voxel", "ground", "outliers", "filter", "total")


@dataclass
class FrameResult:
    timestamp: float
    mask: np.ndarray
    cloud: np.ndarray
    timings: Dict[str, float] = field(default_factory=dict)


def preprocess(cloud, cfg: PipelineConfig, seed: int = 0, timings=None):
    """Voxel downsampling, ground-plane removal, radius outlier removal."""
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    cloud = voxel_downsample(cloud, cfg.voxel)
    t1 = time.perf_counter()
    if len(cloud) >= 3:
        plane, _ = ransac_plane(cloud, cfg.ransac_threshold, cfg.ransac_iterations, seed)
        cloud = remove_plane_inliers(cloud, plane, cfg.ransac_threshold)
    t2 = time.perf_counter()
    cloud = radius_outlier_removal(cloud, cfg.radius, cfg.min_neighbors)
    t3 = time.perf_counter()
    timings.update(voxel=t1 - t0, ground=t2 - t1, outliers=t3 - t2)
    return cloud


def grid_keypoints(depth: DepthImage, K: CameraIntrinsics, step: int) -> np.ndarray:
    """Stand-in keypoints on a regular pixel grid, depth read from the image."""
    vv, uu = np.mgrid[step // 2:depth.height:step, step // 2:depth.width:step]
    u, v = uu.ravel(), vv.ravel()
    d = depth.values[v, u].astype(np.float64) / K.depth_scale
    return np.column_stack((u, v, d)).astype(np.float64)


def process_frame(depth: DepthImage, K: CameraIntrinsics, keypoints, detections,
                  cfg: PipelineConfig, seed: int = 0, timestamp: float = 0.0) -> FrameResult:
    timings = {}
    start = time.perf_counter()
    cloud = backproject(depth, K, cfg.stride)
    timings["backproject"] = time.perf_counter() - start
    cloud = preprocess(cloud, cfg, seed, timings)
    t = time.perf_counter()
    mask = filter_dynamic(keypoints, detections, K, cfg.filter_params)
    timings["filter"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - start
    return FrameResult(timestamp, mask, cloud, timings)


def _frame_stem(frame) -> str:
    return os.path.splitext(os.path.basename(frame.depth_path))[0]


def _run_one(index, frame, seq_dir, K, cfg):
    depth = frame.load_depth()
    stem = _frame_stem(frame)
    kp_path = os.path.join(seq_dir, "keypoints", stem + ".csv")
    det_path = os.path.join(seq_dir, "detections", stem + ".json")
    if os.path.isfile(kp_path):
        kps = load_keypoints_csv(kp_path)
    else:
        kps = grid_keypoints(depth, K, cfg.keypoint_grid)
    dets = load_detections_json(det_path, cfg.dynamic_classes) if os.path.isfile(det_path) else []
    return process_frame(depth, K, kps, dets, cfg, seed=cfg.seed + index, timestamp=frame.timestamp)


def run_sequence(seq_dir, out_dir, K: CameraIntrinsics, cfg: PipelineConfig, jobs: int = 1,
                 assoc_name: str = "associations.txt", progress=None):
    """Run every frame of ``seq_dir`` and write ``out_dir/masks/<t>.csv``,
    ``summary.json`` (deterministic) and ``timing.json`` (wall-clock).

    At most ``2 * jobs`` frames are in flight at once. Returns (summary, timing).
    """
    frames = load_association(os.path.join(seq_dir, assoc_name))
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(mask_dir, exist_ok=True)
    jobs = max(1, int(jobs))
    window = 2 * jobs
    per_frame = {}
    peak = 0

    def finish(res: FrameResult):
        name = f"{res.timestamp:.6f}.csv"
        save_mask_csv(os.path.join(mask_dir, name), res.mask)
        flags = dynamic_flags(res.mask, cfg.unknown_as_dynamic)
        per_frame[res.timestamp] = {
            "mask": name,
            "keypoints": int(len(res.mask)),
            "dynamic": int(flags.sum()),
            "dynamic_strict": int((res.mask == DYNAMIC).sum()),
            "unknown_depth": int((res.mask == UNKNOWN_DEPTH).sum()),
            "cloud_points": int(len(res.cloud)),
            "timings": res.timings,
        }
        if progress:
            progress(res)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending = set()
        for index, frame in enumerate(frames):
            if len(pending) >= window:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    finish(fut.result())
            pending.add(pool.submit(_run_one, index, frame, seq_dir, K, cfg))
            peak = max(peak, len(pending))
        for fut in pending:
            finish(fut.result())

    stamps = sorted(per_frame)
    total_kp = sum(per_frame[t]["keypoints"] for t in stamps)
    total_dyn = sum(per_frame[t]["dynamic"] for t in stamps)
    summary = {
        "frames": len(stamps),
        "keypoints": total_kp,
        "dynamic_keypoints": total_dyn,
        "dynamic_ratio": (total_dyn / total_kp) if total_kp else 0.0,
        "per_frame": [
            {"timestamp": t, **{k: v for k, v in per_frame[t].items() if k != "timings"}} for t in stamps
        ],
        "config": cfg.dumps().splitlines(),
    }
    timing = latency_summary([per_frame[t]["timings"] for t in stamps])
    timing["max_frames_in_flight"] = peak
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "timing.json"), "w") as fh:
        json.dump(timing, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary, timing


def latency_summary(timings) -> dict:
    """Median and p95 per stage, in milliseconds."""
    out = {}
    for stage in STAGES:
        vals = np.array([t[stage] for t in timings if stage in t]) * 1e3
        if len(vals):
            out[stage] = {"median_ms": float(np.median(vals)), "p95_ms": float(np.percentile(vals, 95))}
    return out
