"""TUM RGB-D style inputs: association files, trajectories, depth PNGs,
intrinsics files, and pinhole back-projection of depth to metric points."""
import math
import os
import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from PIL import Image

from .trajectory import Trajectory


class ParseError(ValueError):
    """Raised for malformed input files. Carries the path and line number."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 5000.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "depth_scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"intrinsics {name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("intrinsics fx, fy must be positive")
        if self.depth_scale <= 0:
            raise ValueError("intrinsics depth_scale must be positive")

    def project(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points (n, 3) to pixel coordinates (n, 2)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        z = points[:, 2]
        return np.column_stack(
            (points[:, 0] * self.fx / z + self.cx, points[:, 1] * self.fy / z + self.cy)
        )

    def unproject(self, u, v, depth) -> np.ndarray:
        """Pixel coordinates and metric depth to camera-frame points (n, 3)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z = np.asarray(depth, dtype=np.float64)
        return np.column_stack(((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z))


# Freiburg 3 defaults; the fr3 sequences ship pre-rectified.
TUM_FR3 = CameraIntrinsics(fx=535.4, fy=539.2, cx=320.1, cy=247.6)


def load_intrinsics(path) -> CameraIntrinsics:
    """Read a ``key=value`` intrinsics file (fx, fy, cx, cy, depth_scale)."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"intrinsics file not found: {path}")
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, lineno, "expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in ("fx", "fy", "cx", "cy", "depth_scale"):
                raise ParseError(path, lineno, f"unknown intrinsics key {key!r}")
            try:
                values[key] = float(val)
            except ValueError:
                raise ParseError(path, lineno, f"bad number for {key!r}: {val!r}") from None
    missing = {"fx", "fy", "cx", "cy"} - set(values)
    if missing:
        raise ParseError(path, None, f"missing intrinsics keys: {', '.join(sorted(missing))}")
    try:
        return CameraIntrinsics(**values)
    except ValueError as exc:
        raise ParseError(path, None, str(exc)) from None


def save_intrinsics(path, K: CameraIntrinsics):
    with open(path, "w") as fh:
        for key in ("fx", "fy", "cx", "cy", "depth_scale"):
            fh.write(f"{key}={float(getattr(K, key))!r}\n")


@dataclass(frozen=True)
class DepthImage:
    """Raw 16-bit depth samples, row-major. A raw value of 0 means no measurement."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("depth image must be 2-D (height, width)")
        if v.dtype != np.uint16:
            if np.any(v < 0) or np.any(v > 65535) or np.any(v != np.round(v)):
                raise ValueError("depth values must be 16-bit unsigned integers")
            v = v.astype(np.uint16)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def read_depth_png(path) -> DepthImage:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise ParseError(path, None, "depth PNG must be single-channel")
    return DepthImage(arr.astype(np.uint16))


def write_depth_png(path, depth: DepthImage):
    Image.fromarray(depth.values.astype(np.uint16)).save(path)


@dataclass(frozen=True)
class PosedFrame:
    timestamp: float
    depth_path: str
    rgb_path: Optional[str] = None
    rgb_timestamp: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError("frame timestamp must be finite and non-negative")

    def load_depth(self) -> DepthImage:
        return read_depth_png(self.depth_path)


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split()


def _float(path, lineno, text):
    try:
        val = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {text!r}") from None
    if not math.isfinite(val):
        raise ParseError(path, lineno, f"non-finite value: {text!r}")
    return val


def load_association(path) -> List[PosedFrame]:
    """Parse ``t_rgb rgb_path t_depth depth_path`` lines.

    Relative image paths are resolved against the association file's directory.
    Frames come back sorted by depth timestamp.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"association file not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    frames = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(fields)}")
        t_rgb = _float(path, lineno, fields[0])
        t_depth = _float(path, lineno, fields[2])
        if t_depth < 0:
            raise ParseError(path, lineno, "negative timestamp")
        frames.append(
            PosedFrame(
                timestamp=t_depth,
                depth_path=os.path.join(base, fields[3]),
                rgb_path=os.path.join(base, fields[1]),
                rgb_timestamp=t_rgb,
            )
        )
    if not frames:
        raise ParseError(path, None, "association file has no frames")
    frames.sort(key=lambda f: f.timestamp)
    return frames


def _load_image_list(path):
    """``timestamp filename`` lines of a TUM rgb.txt / depth.txt."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"image list not found: {path}")
    out = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 2:
            raise ParseError(path, lineno, f"expected 2 fields, got {len(fields)}")
        out.append((_float(path, lineno, fields[0]), fields[1]))
    return out


def associate_image_lists(rgb_list, depth_list, max_dt: float = 0.02) -> List[PosedFrame]:
    """Pair a TUM rgb.txt with depth.txt, greedily by smallest time difference."""
    base = os.path.dirname(os.path.abspath(depth_list))
    rgb = _load_image_list(rgb_list)
    depth = _load_image_list(depth_list)
    rgb_t = np.array([t for t, _ in rgb])
    cands = []
    for j, (td, _) in enumerate(depth):
        lo, hi = np.searchsorted(rgb_t, [td - max_dt, td + max_dt], side="left")
        for i in range(lo, min(hi + 1, len(rgb))):
            if abs(rgb_t[i] - td) <= max_dt:
                cands.append((abs(rgb_t[i] - td), i, j))
    cands.sort()
    used_r, used_d, frames = set(), set(), []
    for _, i, j in cands:
        if i in used_r or j in used_d:
            continue
        used_r.add(i)
        used_d.add(j)
        frames.append(PosedFrame(depth[j][0], os.path.join(base, depth[j][1]),
                                 os.path.join(base, rgb[i][1]), rgb[i][0]))
    if not frames:
        raise ValueError(f"no rgb/depth pairs within {max_dt} s")
    frames.sort(key=lambda f: f.timestamp)
    return frames


def save_association(path, frames: List[PosedFrame]):
    """Write frames as ``t_rgb rgb_path t_depth depth_path`` lines (paths as stored)."""
    with open(path, "w") as fh:
        for f in frames:
            t_rgb = f.timestamp if f.rgb_timestamp is None else f.rgb_timestamp
            fh.write(f"{t_rgb:.6f} {f.rgb_path or '-'} {f.timestamp:.6f} {f.depth_path}\n")


def load_trajectory(path) -> Trajectory:
    """Parse a TUM ``t tx ty tz qx qy qz qw`` file into a time-sorted trajectory."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"trajectory file not found: {path}")
    rows = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 8:
            raise ParseError(path, lineno, f"expected 8 fields, got {len(fields)}")
        vals = [_float(path, lineno, f) for f in fields]
        norm = math.sqrt(sum(q * q for q in vals[4:]))
        if abs(norm - 1.0) > 1e-3:
            raise ParseError(path, lineno, f"quaternion norm {norm:.6g} is not unit")
        rows.append(vals)
    if not rows:
        raise ParseError(path, None, "trajectory file has no poses")
    data = np.array(rows, dtype=np.float64)
    # stable sort keeps the first occurrence of a duplicate timestamp first
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    keep = np.ones(len(data), dtype=bool)
    keep[1:] = data[1:, 0] != data[:-1, 0]
    if not keep.all():
        warnings.warn(f"{path}: dropped {int((~keep).sum())} pose(s) with duplicate timestamps")
        data = data[keep]
    q = data[:, 4:8] / np.linalg.norm(data[:, 4:8], axis=1, keepdims=True)
    return Trajectory(data[:, 0], data[:, 1:4], q)


def save_trajectory(path, traj: Trajectory):
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
            fh.write(" ".join(repr(float(x)) for x in (t, *p, *q)) + "\n")


def backproject(depth: DepthImage, K: CameraIntrinsics, stride: int = 4) -> np.ndarray:
    """Back-project every ``stride``-th pixel with non-zero depth to an (n, 3) cloud.

    Points are emitted in row-major pixel order.
    """
    if int(stride) != stride or stride < 1:
        raise ValueError("stride must be a positive integer")
    stride = int(stride)
    raw = depth.values[::stride, ::stride]
    vv, uu = np.nonzero(raw)
    r = raw[vv, uu].astype(np.float64)
    z = r / K.depth_scale
    return K.unproject(uu * stride, vv * stride, z)
