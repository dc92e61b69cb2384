"""Flat ``key=value`` pipeline configuration."""
import dataclasses
from dataclasses import dataclass, fields
from typing import Tuple

from .detection import LossWeights
from .dynamic_filter import FilterParams
from .pointcloud import VoxelSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    stride: int = 4
    voxel_size: float = 0.05
    ransac_threshold: float = 0.02
    ransac_iterations: int = 1000
    radius: float = 0.10
    min_neighbors: int = 5
    min_pts: int = 10
    min_cluster_size: int = 10
    depth_weight: float = 1.0
    margin: float = 0.05
    dynamic_classes: Tuple[str, ...] = ("person",)
    unknown_as_dynamic: bool = True
    keypoint_grid: int = 16
    lc: float = 1.0
    ld: float = 1.0
    lar: float = 1.0
    lac: float = 1.0
    ls: float = 1.0
    huber_delta: float = 1.0
    angle_bins: int = 12
    rpe_delta: float = 1.0
    max_dt: float = 0.02
    seed: int = 0

    def __post_init__(self):
        checks = {
            "stride": self.stride >= 1,
            "voxel_size": self.voxel_size > 0,
            "ransac_threshold": self.ransac_threshold > 0,
            "ransac_iterations": self.ransac_iterations >= 1,
            "radius": self.radius > 0,
            "min_neighbors": self.min_neighbors >= 0,
            "min_pts": self.min_pts >= 1,
            "min_cluster_size": self.min_cluster_size >= 2,
            "depth_weight": self.depth_weight > 0,
            "margin": self.margin >= 0,
            "dynamic_classes": len(self.dynamic_classes) > 0,
            "keypoint_grid": self.keypoint_grid >= 1,
            "huber_delta": self.huber_delta > 0,
            "angle_bins": self.angle_bins >= 1,
            "rpe_delta": self.rpe_delta > 0,
            "max_dt": self.max_dt > 0,
            "seed": self.seed >= 0,
        }
        for w in ("lc", "ld", "lar", "lac", "ls"):
            checks[w] = getattr(self, w) >= 0
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid value for {key}: {getattr(self, key)!r}")

    @property
    def voxel(self) -> VoxelSpec:
        return VoxelSpec.cube(self.voxel_size)

    @property
    def filter_params(self) -> FilterParams:
        return FilterParams(self.min_pts, self.min_cluster_size, self.depth_weight, self.margin)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lc, self.ld, self.lar, self.lac, self.ls)

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


def _coerce(key, kind, text):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return tuple(s.strip() for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}") from None


_KINDS = {f.name: f.type if f.type in (int, float, bool) else tuple for f in fields(PipelineConfig)}


def parse_config(text: str, base: PipelineConfig = PipelineConfig(), source="<config>") -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KINDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, _KINDS[key], val)
    return dataclasses.replace(base, **values)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, source=str(path))
