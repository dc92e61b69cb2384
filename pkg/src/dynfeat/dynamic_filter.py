"""Per-frame dynamic/static keypoint labelling.

Keypoints inside a dynamic-class detection are clustered in (u, v, depth) space
into two groups; the nearer group is dynamic.
"""
import json
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .detection import Box3D, box_contains, box_corners
from .hdbscan import extract_two_clusters
from .ingest import CameraIntrinsics

STATIC = 0
DYNAMIC = 1
UNKNOWN_DEPTH = 2
LABEL_NAMES = {STATIC: "STATIC", DYNAMIC: "DYNAMIC", UNKNOWN_DEPTH: "UNKNOWN_DEPTH"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}


@dataclass(frozen=True)
class DetectedObject:
    box: Box3D
    class_id: str = "person"
    is_dynamic_class: bool = True


@dataclass(frozen=True)
class FilterParams:
    k: int = 10
    min_cluster_size: int = 10
    depth_weight: float = 1.0
    margin: float = 0.05

    def __post_init__(self):
        if self.k < 1 or self.min_cluster_size < 2:
            raise ValueError("k must be >= 1 and min_cluster_size >= 2")
        if not (self.depth_weight > 0 and self.margin >= 0):
            raise ValueError("depth_weight must be positive and margin non-negative")


def as_keypoints(kps) -> np.ndarray:
    """(n, 3) array of (u, v, depth_m); depth 0 means unknown."""
    arr = np.asarray(kps, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3))
    arr = arr.reshape(-1, 3)
    if not np.all(np.isfinite(arr)) or np.any(arr[:, 2] < 0):
        raise ValueError("keypoints must be finite with non-negative depth")
    return arr


def gather_box_keypoints(kps, det: DetectedObject, K: CameraIntrinsics, margin: float = 0.05):
    """Indices of keypoints with known depth whose back-projection lies in the box."""
    kps = as_keypoints(kps)
    known = np.flatnonzero(kps[:, 2] > 0)
    if len(known) == 0:
        return known
    pts = K.unproject(kps[known, 0], kps[known, 1], kps[known, 2])
    return known[box_contains(det.box, pts, margin)]


def box_image_region(box: Box3D, K: CameraIntrinsics, margin: float = 0.0):
    """Pixel bounding rectangle (u0, v0, u1, v1) of the box, or None when the
    box lies entirely behind the camera. Boxes straddling the image plane map to
    the unbounded rectangle."""
    grown = Box3D(box.center, tuple(s + 2 * margin for s in box.size), box.yaw)
    corners = box_corners(grown)
    front = corners[:, 2] > 1e-6
    if not front.any():
        return None
    if not front.all():
        return (-np.inf, -np.inf, np.inf, np.inf)
    uv = K.project(corners)
    return (uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())


def _standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def classify_box(kps: np.ndarray, idx: np.ndarray, p: FilterParams) -> np.ndarray:
    """DYNAMIC/STATIC labels for the in-box keypoints ``kps[idx]``."""
    n = len(idx)
    out = np.full(n, DYNAMIC, dtype=np.int64)
    if n < 2 * p.min_cluster_size:
        return out
    X = _standardize(kps[idx])
    X[:, 2] *= p.depth_weight
    res = extract_two_clusters(X, min(p.k, n - 1), p.min_cluster_size)
    if res.degenerate:
        return out
    depth = kps[idx, 2]
    d0 = depth[res.labels == 0].mean()
    d1 = depth[res.labels == 1].mean()
    if d0 == d1:
        return out
    far = 1 if d1 > d0 else 0
    out[res.labels == far] = STATIC
    return out


def filter_dynamic(kps, dets: Sequence[DetectedObject], K: CameraIntrinsics,
                   p: FilterParams = FilterParams()) -> np.ndarray:
    """Label every keypoint STATIC, DYNAMIC or UNKNOWN_DEPTH.

    DYNAMIC from any detection wins; UNKNOWN_DEPTH marks zero-depth keypoints in
    the image footprint of a dynamic-class box.
    """
    kps = as_keypoints(kps)
    mask = np.full(len(kps), STATIC, dtype=np.int64)
    unknown = kps[:, 2] == 0
    for det in dets:
        if not det.is_dynamic_class:
            continue
        idx = gather_box_keypoints(kps, det, K, p.margin)
        labels = classify_box(kps, idx, p)
        mask[idx[labels == DYNAMIC]] = DYNAMIC
        region = box_image_region(det.box, K, p.margin)
        if region is not None and unknown.any():
            u0, v0, u1, v1 = region
            inside = unknown & (kps[:, 0] >= u0) & (kps[:, 0] <= u1) & (kps[:, 1] >= v0) & (kps[:, 1] <= v1)
            mask[inside & (mask == STATIC)] = UNKNOWN_DEPTH
    return mask


def dynamic_flags(mask, unknown_as_dynamic: bool = True) -> np.ndarray:
    mask = np.asarray(mask)
    flags = mask == DYNAMIC
    if unknown_as_dynamic:
        flags |= mask == UNKNOWN_DEPTH
    return flags


def load_keypoints_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if lineno == 1 and fields[0].lower() == "u":
                continue
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected u,v,depth")
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad number") from None
    return as_keypoints(np.array(rows))


def save_keypoints_csv(path, kps):
    with open(path, "w") as fh:
        fh.write("u,v,depth\n")
        for u, v, d in as_keypoints(kps).tolist():
            fh.write(f"{u!r},{v!r},{d!r}\n")


def load_detections_json(path, dynamic_classes: Iterable[str] = ("person",)) -> List[DetectedObject]:
    with open(path) as fh:
        recs = json.load(fh)
    if not isinstance(recs, list):
        raise ValueError(f"{path}: detections must be a JSON array")
    dyn = set(dynamic_classes)
    out = []
    for i, rec in enumerate(recs):
        try:
            box = Box3D.from_json(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: detection {i}: {exc}") from None
        cls = str(rec.get("class", ""))
        out.append(DetectedObject(box, cls, cls in dyn))
    return out


def save_detections_json(path, dets: Sequence[DetectedObject]):
    recs = []
    for d in dets:
        rec = d.box.to_json()
        rec["class"] = d.class_id
        recs.append(rec)
    with open(path, "w") as fh:
        json.dump(recs, fh, indent=1)
        fh.write("\n")


def save_mask_csv(path, mask):
    with open(path, "w") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(np.asarray(mask)):
            fh.write(f"{i},{LABEL_NAMES[int(lab)]}\n")


def load_mask_csv(path) -> np.ndarray:
    labels = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            if line.strip():
                labels.append(LABEL_CODES[line.strip().split(",")[1]])
    return np.array(labels, dtype=np.int64)
