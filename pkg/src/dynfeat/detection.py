"""3D boxes, part-location targets, detection losses, containment and IoU.

Yaw convention: a point offset (dx, dy) from the box center is expressed in the
box frame as (dx cos t - dy sin t, dx sin t + dy cos t). The box's own x axis
therefore points along (cos t, -sin t), i.e. yaw is measured clockwise in the
top view. ``box_contains``, ``box_corners`` and both part encoders share it.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

EPS = 1e-7


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.remainder(theta, 2 * math.pi)
    return math.pi if t == -math.pi else t


@dataclass(frozen=True)
class Box3D:
    center: tuple
    size: tuple  # (w, l, h) along the box x, y, z axes
    yaw: float = 0.0
    label: Optional[str] = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("box center and size need 3 components")
        if not all(math.isfinite(v) for v in c + s + (self.yaw,)):
            raise ValueError("box parameters must be finite")
        if min(s) <= 0:
            raise ValueError("box dimensions must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def to_json(self) -> dict:
        return {"center": list(self.center), "size": list(self.size), "yaw": self.yaw,
                "class": self.label}

    @classmethod
    def from_json(cls, rec: dict) -> "Box3D":
        return cls(tuple(rec["center"]), tuple(rec["size"]), float(rec.get("yaw", 0.0)),
                   rec.get("class"))

    @property
    def volume(self) -> float:
        w, l, h = self.size
        return w * l * h


def _to_box_frame(points, box: Box3D) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dx = p[:, 0] - box.center[0]
    dy = p[:, 1] - box.center[1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.column_stack((dx * c - dy * s, dx * s + dy * c, p[:, 2] - box.center[2]))


def box_corners(box: Box3D) -> np.ndarray:
    """(8, 3) corners; bit i of the row index selects the +/- side of axis i."""
    w, l, h = box.size
    signs = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)]) * 2.0 - 1.0
    local = signs * np.array([w, l, h]) / 2
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = local[:, 0] * c + local[:, 1] * s
    y = -local[:, 0] * s + local[:, 1] * c
    return np.column_stack((x, y, local[:, 2])) + np.array(box.center)


def encode_part_location_paper(p, box: Box3D) -> np.ndarray:
    """Literal part-location target: size-normalized box-frame offset plus the center."""
    t = _to_box_frame(p, box)
    w, l, h = box.size
    out = t / np.array([w, l, h]) + np.array(box.center)
    return out[0] if np.ndim(p) == 1 else out


def encode_part_location_normalized(p, box: Box3D) -> np.ndarray:
    """Part location in [0, 1]^3: 0.5 at the center, 0 / 1 on the faces, clamped."""
    t = _to_box_frame(p, box)
    out = np.clip(t / np.array(box.size) + 0.5, 0.0, 1.0)
    return out[0] if np.ndim(p) == 1 else out


def decode_part_location_normalized(f, box: Box3D) -> np.ndarray:
    single = np.ndim(f) == 1
    f = np.asarray(f, dtype=np.float64).reshape(-1, 3)
    t = (f - 0.5) * np.array(box.size)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = t[:, 0] * c + t[:, 1] * s + box.center[0]
    y = -t[:, 0] * s + t[:, 1] * c + box.center[1]
    out = np.column_stack((x, y, t[:, 2] + box.center[2]))
    return out[0] if single else out


def part_location_bce(pred, target):
    """Summed binary cross-entropy over the three part coordinates.

    Returns ``(loss, d loss / d pred)``. Log arguments are clamped below at EPS,
    which keeps the loss finite and makes exact predictions cost exactly zero;
    the gradient is zero where a clamp is active.
    """
    u = np.asarray(target, dtype=np.float64)
    q = np.asarray(pred, dtype=np.float64)
    if u.shape != q.shape:
        raise ValueError("pred and target shapes differ")
    if np.any(u < 0) or np.any(u > 1) or not np.all(np.isfinite(u)):
        raise ValueError("part-location targets must lie in [0, 1]")
    q = np.clip(q, 0.0, 1.0)
    pos_arg = np.maximum(q, EPS)
    neg_arg = np.maximum(1.0 - q, EPS)
    pos = np.where(u > 0, -u * np.log(pos_arg), 0.0)
    neg = np.where(u < 1, -(1 - u) * np.log(neg_arg), 0.0)
    loss = float(np.sum(pos + neg))
    grad = (np.where(q > EPS, -u / pos_arg, 0.0)
            + np.where(1.0 - q > EPS, (1 - u) / neg_arg, 0.0))
    return loss, grad


@dataclass(frozen=True)
class LossWeights:
    lc: float = 1.0
    ld: float = 1.0
    lar: float = 1.0
    lac: float = 1.0
    ls: float = 1.0

    def __post_init__(self):
        for name in ("lc", "ld", "lar", "lac", "ls"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0")


def _check_distribution(name, p, tol=1e-9):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} must be a probability vector")
    return p


@dataclass(frozen=True)
class PredictedBox:
    center: np.ndarray
    dims: np.ndarray
    angle_class: np.ndarray
    angle_residual: float
    class_probs: np.ndarray

    def __post_init__(self):
        for name in ("center", "dims"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape != (3,) or np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"predicted {name} must lie in [0, 1]^3")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "angle_class", _check_distribution("angle_class", self.angle_class))
        object.__setattr__(self, "class_probs", _check_distribution("class_probs", self.class_probs))


@dataclass(frozen=True)
class GroundTruthBox:
    center: np.ndarray
    dims: np.ndarray
    angle_class: np.ndarray  # one-hot over angle bins
    angle_residual: float
    class_onehot: np.ndarray  # one-hot over K + 1 classes

    def __post_init__(self):
        for name in ("center", "dims", "angle_class", "class_onehot"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        for name in ("angle_class", "class_onehot"):
            v = getattr(self, name)
            if not (np.all((v == 0) | (v == 1)) and v.sum() == 1):
                raise ValueError(f"ground-truth {name} must be one-hot")


@dataclass
class DetectionLossGrad:
    center: np.ndarray
    dims: np.ndarray
    angle_class: np.ndarray
    angle_residual: float
    class_probs: np.ndarray


def huber(e: float, delta: float):
    """Huber value and derivative."""
    if abs(e) <= delta:
        return 0.5 * e * e, e
    return delta * (abs(e) - 0.5 * delta), delta * math.copysign(1.0, e)


def _xent(target, probs):
    pc = np.clip(probs, EPS, None)
    val = -float(np.sum(np.where(target != 0, target * np.log(pc), 0.0)))
    grad = np.where(probs > EPS, -target / pc, 0.0)
    return val, grad


def detection_loss(pred: PredictedBox, gt: GroundTruthBox, weights: LossWeights = LossWeights(),
                   huber_delta: float = 1.0):
    """Weighted sum of L1 center/size, Huber angle residual and the two
    cross-entropies. Returns ``(loss, DetectionLossGrad)``."""
    return detection_loss_arrays(pred.center, pred.dims, pred.angle_class, pred.angle_residual,
                                 pred.class_probs, gt, weights, huber_delta)


def detection_loss_arrays(center, dims, angle_class, angle_residual, class_probs,
                          gt: GroundTruthBox, weights: LossWeights = LossWeights(),
                          huber_delta: float = 1.0):
    """``detection_loss`` on raw prediction arrays, without the range and simplex checks."""
    if not huber_delta > 0:
        raise ValueError("huber_delta must be positive")
    center, dims, angle_class, class_probs = (
        np.asarray(v, dtype=np.float64).reshape(-1) for v in (center, dims, angle_class, class_probs))
    for name, a, b in (("center", center, gt.center), ("dims", dims, gt.dims),
                       ("angle_class", angle_class, gt.angle_class),
                       ("class", class_probs, gt.class_onehot)):
        if a.shape != b.shape:
            raise ValueError(f"{name}: prediction has {a.shape[0]} entries, ground truth {b.shape[0]}")
    dc = center - gt.center
    dd = dims - gt.dims
    h, dh = huber(float(angle_residual) - float(gt.angle_residual), huber_delta)
    ac, g_ac = _xent(gt.angle_class, angle_class)
    sc, g_sc = _xent(gt.class_onehot, class_probs)
    w = weights
    loss = (w.lc * float(np.abs(dc).sum()) + w.ld * float(np.abs(dd).sum()) + w.lar * h
            + w.lac * ac + w.ls * sc)
    grad = DetectionLossGrad(
        center=w.lc * np.sign(dc),
        dims=w.ld * np.sign(dd),
        angle_class=w.lac * g_ac,
        angle_residual=w.lar * dh,
        class_probs=w.ls * g_sc,
    )
    return loss, grad


def box_contains(box: Box3D, points, margin: float = 0.0):
    """Whether each point lies within the box grown by ``margin`` on every side."""
    t = _to_box_frame(points, box)
    half = np.array(box.size) / 2 + margin
    inside = np.all(np.abs(t) <= half, axis=1)
    return bool(inside[0]) if np.ndim(points) == 1 else inside


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of a polygon by a counter-clockwise convex polygon."""
    out = list(subject)
    for k in range(len(clip)):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % len(clip)]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp, out = out, []
        for i in range(len(inp)):
            cur, prev = inp[i], inp[i - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
    return out


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2


def _footprint(box: Box3D):
    # corners 0, 1, 3, 2 walk the bottom face; orientation fixed to CCW below
    c = box_corners(box)[[0, 1, 3, 2], :2]
    pts = [tuple(p) for p in c]
    area2 = sum(pts[i - 1][0] * pts[i][1] - pts[i][0] * pts[i - 1][1] for i in range(4))
    return pts if area2 > 0 else pts[::-1]


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU of two yaw-rotated boxes (top-view polygon clip x height overlap)."""
    zlo = max(a.center[2] - a.size[2] / 2, b.center[2] - b.size[2] / 2)
    zhi = min(a.center[2] + a.size[2] / 2, b.center[2] + b.size[2] / 2)
    dz = zhi - zlo
    if dz <= 0:
        return 0.0
    area = _polygon_area(_clip_polygon(_footprint(a), _footprint(b)))
    inter = area * dz
    union = a.volume + b.volume - inter
    return float(min(1.0, max(0.0, inter / union)))
