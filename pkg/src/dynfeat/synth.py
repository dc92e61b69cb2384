"""Seeded synthetic scenes and trajectories with known ground truth.

Every generator draws from a Philox stream keyed by (seed, purpose, index), so
independent draws never depend on call order.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .detection import Box3D
from .dynamic_filter import DYNAMIC, STATIC, DetectedObject
from .ingest import TUM_FR3, CameraIntrinsics, DepthImage, backproject
from .trajectory import Trajectory

_STREAMS = {"scene": 1, "traj": 2, "points": 3, "misc": 4}


def rng_for(seed: int, purpose: str = "misc", index: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, purpose, index) stream."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _STREAMS[purpose], int(index)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SceneSpec:
    """A person-sized rectangle in front of a wall, plus an optional floor.

    A depth spread is the largest deviation from the nominal depth: noise is
    Gaussian with sigma = spread / 2, truncated at +/- spread. ``person_rect``
    and ``box_rect`` are pixel rectangles (u0, v0, u1, v1); the 3D detection box
    encloses the ``box_rect`` frustum over the whole depth range of the person
    and the wall behind it.
    """

    person_depth: float = 1.5
    person_spread: float = 0.05
    background_depth: float = 4.0
    background_spread: float = 0.05
    n_foreground: int = 150
    n_background_in_box: int = 150
    n_background_out: int = 200
    width: int = 640
    height: int = 480
    person_rect: Tuple[int, int, int, int] = (260, 120, 380, 400)
    box_rect: Tuple[int, int, int, int] = (200, 80, 440, 420)
    floor_row: int = 440
    camera_height: float = 1.2
    intrinsics: CameraIntrinsics = field(default=TUM_FR3)
    extra_boxes: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (self.person_depth > 0 and self.background_depth > 0):
            raise ValueError("depths must be positive")
        if self.person_spread < 0 or self.background_spread < 0:
            raise ValueError("depth spreads must be non-negative")
        if self.background_depth <= self.person_depth:
            raise ValueError("background must lie behind the person")
        if min(self.n_foreground, self.n_background_in_box, self.n_background_out) <= 0:
            raise ValueError("keypoint counts must be positive")
        pu0, pv0, pu1, pv1 = self.person_rect
        bu0, bv0, bu1, bv1 = self.box_rect
        if not (0 <= bu0 <= pu0 < pu1 <= bu1 <= self.width and 0 <= bv0 <= pv0 < pv1 <= bv1 <= self.height):
            raise ValueError("person_rect must sit inside box_rect, inside the image")
        if not bv1 <= self.floor_row <= self.height:
            raise ValueError("floor must start below the detection box")
        pixels_fg = (pu1 - pu0) * (pv1 - pv0)
        pixels_ring = (bu1 - bu0) * (bv1 - bv0) - pixels_fg
        if self.n_foreground > pixels_fg or self.n_background_in_box > pixels_ring:
            raise ValueError("more keypoints requested than pixels available")


@dataclass
class Scene:
    depth: DepthImage
    cloud: np.ndarray
    keypoints: np.ndarray
    detections: list
    truth: np.ndarray
    intrinsics: CameraIntrinsics


def _truncated_normal(rng, mean, spread, size):
    if spread == 0:
        return np.full(size, float(mean))
    z = rng.standard_normal(size)
    return mean + spread * np.clip(z / 2, -1.0, 1.0)


def render_depth(spec: SceneSpec, rng) -> np.ndarray:
    """Metric depth map: wall, floor below ``floor_row``, person rectangle."""
    K = spec.intrinsics
    depth = _truncated_normal(rng, spec.background_depth, spec.background_spread, (spec.height, spec.width))
    v = np.arange(spec.height, dtype=np.float64)
    below = v >= spec.floor_row
    # floor plane y = camera_height (camera y axis points down)
    with np.errstate(divide="ignore"):
        zf = spec.camera_height * K.fy / (v - K.cy)
    rows = np.flatnonzero(below & (v > K.cy))
    for r in rows:
        depth[r] = np.minimum(depth[r], zf[r])
    pu0, pv0, pu1, pv1 = spec.person_rect
    depth[pv0:pv1, pu0:pu1] = _truncated_normal(
        rng, spec.person_depth, spec.person_spread, (pv1 - pv0, pu1 - pu0)
    )
    return depth


def detection_box(spec: SceneSpec) -> Box3D:
    K = spec.intrinsics
    zmin = spec.person_depth - spec.person_spread - 0.02
    zmax = spec.background_depth + spec.background_spread + 0.02
    bu0, bv0, bu1, bv1 = spec.box_rect
    corners = np.array([K.unproject([u], [v], [z])[0] for u in (bu0, bu1) for v in (bv0, bv1) for z in (zmin, zmax)])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    return Box3D(tuple((lo + hi) / 2), tuple(hi - lo), 0.0, "person")


def _pick_pixels(rng, rect, n, exclude=None):
    u0, v0, u1, v1 = rect
    uu, vv = np.meshgrid(np.arange(u0, u1), np.arange(v0, v1))
    uu, vv = uu.ravel(), vv.ravel()
    if exclude is not None:
        eu0, ev0, eu1, ev1 = exclude
        keep = ~((uu >= eu0) & (uu < eu1) & (vv >= ev0) & (vv < ev1))
        uu, vv = uu[keep], vv[keep]
    sel = rng.choice(len(uu), size=n, replace=False)
    sel.sort()
    return uu[sel], vv[sel]


def generate_scene(spec: SceneSpec, stride: int = 4) -> Scene:
    """Depth frame, its point cloud, keypoints, detections and true labels.

    Foreground (person) keypoints are DYNAMIC; everything else is STATIC.
    ``extra_boxes`` adds static-class detections elsewhere in the frame.
    """
    rng = rng_for(spec.seed, "scene")
    K = spec.intrinsics
    z = render_depth(spec, rng)
    raw = np.clip(np.round(z * K.depth_scale), 1, 65535).astype(np.uint16)
    depth = DepthImage(raw)

    fg = _pick_pixels(rng, spec.person_rect, spec.n_foreground)
    ring = _pick_pixels(rng, spec.box_rect, spec.n_background_in_box, exclude=spec.person_rect)
    out = _pick_pixels(rng, (0, 0, spec.width, spec.height), spec.n_background_out, exclude=spec.box_rect)
    u = np.concatenate([fg[0], ring[0], out[0]])
    v = np.concatenate([fg[1], ring[1], out[1]])
    truth = np.concatenate([
        np.full(spec.n_foreground, DYNAMIC),
        np.full(spec.n_background_in_box + spec.n_background_out, STATIC),
    ]).astype(np.int64)
    kd = raw[v, u].astype(np.float64) / K.depth_scale
    kps = np.column_stack((u, v, kd)).astype(np.float64)

    dets = [DetectedObject(detection_box(spec), "person", True)]
    for b in range(spec.extra_boxes):
        cx = float(rng.uniform(-1.5, 1.5))
        dets.append(DetectedObject(Box3D((cx, -0.5, spec.background_depth - 0.4), (0.6, 0.6, 0.6), 0.0, "chair"),
                                   "chair", False))
    cloud = backproject(depth, K, stride)
    return Scene(depth, cloud, kps, dets, truth, K)


@dataclass(frozen=True)
class TrajSpec:
    duration: float = 10.0
    rate: float = 30.0
    shape: str = "circle"
    sigma_t: float = 0.0
    sigma_r: float = 0.0  # degrees
    drift: float = 0.0  # meters per pose along world x
    seed: int = 0

    def __post_init__(self):
        if not (self.duration > 0 and self.rate > 0):
            raise ValueError("duration and rate must be positive")
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("noise levels must be non-negative")
        if self.shape not in ("line", "circle", "helix"):
            raise ValueError(f"unknown path shape {self.shape!r}")


def _gt_path(spec: TrajSpec, t: np.ndarray):
    w = 2 * np.pi / spec.duration
    if spec.shape == "line":
        pos = np.column_stack((0.5 * t, 0.1 * t, 0.05 * t))
        yaw = np.full_like(t, 0.3)
        pitch = 0.1 * np.sin(w * t)
    else:
        pos = np.column_stack((np.cos(w * t), np.sin(w * t), np.zeros_like(t)))
        yaw = w * t + np.pi / 2
        pitch = np.zeros_like(t)
        if spec.shape == "helix":
            pos[:, 2] = 0.2 * t
            pitch = 0.2 * np.sin(2 * w * t)
    rot = Rotation.from_euler("zyx", np.column_stack((yaw, pitch, 0.05 * np.sin(3 * w * t))))
    return pos, rot


def generate_trajectory(spec: TrajSpec):
    """(ground truth, estimate). The estimate adds per-pose Gaussian noise and a
    linear drift of ``drift`` meters per pose along world x."""
    n = int(round(spec.duration * spec.rate)) + 1
    t = np.arange(n) / spec.rate
    pos, rot = _gt_path(spec, t)
    gt = Trajectory(t, pos, rot.as_quat())
    rng = rng_for(spec.seed, "traj")
    est_pos = gt.positions + spec.sigma_t * rng.standard_normal((n, 3))
    est_pos[:, 0] += spec.drift * np.arange(n)
    rotvec = np.radians(spec.sigma_r) * rng.standard_normal((n, 3))
    if spec.sigma_r == 0:
        q = gt.quaternions
    else:
        q = (rot * Rotation.from_rotvec(rotvec)).as_quat()
        q /= np.linalg.norm(q, axis=1, keepdims=True)
    return gt, Trajectory(t, est_pos, q)


def random_cloud(n: int, seed: int, low=-1.0, high=1.0) -> np.ndarray:
    return rng_for(seed, "points").uniform(low, high, size=(n, 3))
