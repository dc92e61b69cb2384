"""Point-cloud preprocessing: voxel centroids, RANSAC ground plane, radius outliers.

Clouds are plain ``(n, 3)`` float64 arrays in meters.
"""
import struct
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

MAGIC = b"PC3D"


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3))
    pts = pts.reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class VoxelSpec:
    dx: float = 0.05
    dy: float = 0.05
    dz: float = 0.05

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0 and self.dz > 0):
            raise ValueError("voxel sizes must be positive")

    @classmethod
    def cube(cls, size: float) -> "VoxelSpec":
        return cls(size, size, size)


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``a x + b y + c z + d = 0`` with unit normal (a, b, c)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if abs(self.a**2 + self.b**2 + self.c**2 - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def distances(self, cloud) -> np.ndarray:
        """Signed point-to-plane distances."""
        cloud = as_cloud(cloud)
        return cloud[:, 0] * self.a + cloud[:, 1] * self.b + cloud[:, 2] * self.c + self.d


def voxel_downsample(cloud, spec: VoxelSpec) -> np.ndarray:
    """Replace the points of each occupied voxel by their centroid.

    Voxel (i, j, k) = floor(x / dx), floor(y / dy), floor(z / dz). Output rows are
    ordered lexicographically by voxel index.
    """
    cloud = as_cloud(cloud)
    if len(cloud) == 0:
        return cloud
    idx = np.floor(cloud / np.array([spec.dx, spec.dy, spec.dz])).astype(np.int64)
    lo = idx.min(axis=0)
    span = idx.max(axis=0) - lo + 1
    if float(span[0]) * float(span[1]) * float(span[2]) < 2.0**62:
        # packed key preserves lexicographic (i, j, k) order
        rel = idx - lo
        key = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
        uniq, inverse = np.unique(key, return_inverse=True)
        keys = np.empty((len(uniq), 3), dtype=np.int64)
        keys[:, 2] = uniq % span[2]
        keys[:, 1] = (uniq // span[2]) % span[1]
        keys[:, 0] = uniq // (span[2] * span[1])
    else:
        keys, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = len(keys)
    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    out = np.empty((m, 3))
    for axis in range(3):
        out[:, axis] = np.bincount(inverse, weights=cloud[:, axis], minlength=m) / counts
    return out


def _plane_from_triples(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n, axis=-1)
    return n, norm


def _sample_triples(rng, n, iterations):
    """Three distinct indices per iteration, drawn without replacement."""
    a = rng.integers(0, n, size=iterations)
    b = rng.integers(0, n - 1, size=iterations)
    c = rng.integers(0, n - 2, size=iterations)
    b = b + (b >= a)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return a, b, c


@numba.njit(cache=True)
def _best_hypothesis(cloud, normals, offsets, valid, threshold):
    """Index of the first hypothesis with the most inliers. A hypothesis is
    abandoned once it can no longer strictly beat the current best."""
    best, best_k = -1, -1
    n_pts = cloud.shape[0]
    for k in range(normals.shape[0]):
        if not valid[k]:
            continue
        a, b, c, d = normals[k, 0], normals[k, 1], normals[k, 2], offsets[k]
        n = 0
        for start in range(0, n_pts, 512):
            stop = min(start + 512, n_pts)
            for i in range(start, stop):
                if abs(cloud[i, 0] * a + cloud[i, 1] * b + cloud[i, 2] * c + d) <= threshold:
                    n += 1
            if n + (n_pts - stop) <= best:
                break
        if n > best:
            best, best_k = n, k
    return best_k


def ransac_plane(cloud, dist_threshold=0.02, iterations=1000, seed=0):
    """Fit a plane to the largest consensus set of 3-point hypotheses.

    Returns ``(PlaneModel, inlier_indices)``. Ties on inlier count go to the
    earliest iteration; no refit on the consensus set is done.
    """
    cloud = as_cloud(cloud)
    n = len(cloud)
    if n < 3:
        raise ValueError(f"ransac_plane needs at least 3 points, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    a, b, c = _sample_triples(rng, n, iterations)
    normals, norms = _plane_from_triples(cloud[a], cloud[b], cloud[c])
    # collinear (or coincident) triples do not define a plane
    scale = np.maximum.reduce(
        [np.linalg.norm(cloud[b] - cloud[a], axis=1), np.linalg.norm(cloud[c] - cloud[a], axis=1)]
    )
    valid = norms > 1e-12 * np.maximum(scale, 1e-300) ** 2
    if not valid.any():
        raise ValueError(f"all {iterations} sampled triples were collinear")
    unit = np.zeros_like(normals)
    unit[valid] = normals[valid] / norms[valid, None]
    offsets = -np.einsum("ij,ij->i", unit, cloud[a])

    best_iter = int(_best_hypothesis(cloud, unit, offsets, valid, float(dist_threshold)))
    nrm = unit[best_iter]
    plane = PlaneModel(float(nrm[0]), float(nrm[1]), float(nrm[2]), float(offsets[best_iter]))
    inliers = np.flatnonzero(np.abs(plane.distances(cloud)) <= dist_threshold)
    return plane, inliers


def remove_plane_inliers(cloud, plane: PlaneModel, dist_threshold=0.02) -> np.ndarray:
    cloud = as_cloud(cloud)
    return cloud[np.abs(plane.distances(cloud)) > dist_threshold]


def neighbor_counts(cloud, radius) -> np.ndarray:
    """Number of other points within Euclidean distance <= radius of each point."""
    cloud = as_cloud(cloud)
    n = len(cloud)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    tree = cKDTree(cloud)
    # the tree only proposes candidates; membership is decided by the exact test below
    pairs = tree.query_pairs(radius * (1 + 1e-9) + 1e-12, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(n, dtype=np.int64)
    diff = cloud[pairs[:, 0]] - cloud[pairs[:, 1]]
    keep = (diff * diff).sum(axis=1) <= radius * radius
    pairs = pairs[keep]
    return np.bincount(pairs[:, 0], minlength=n) + np.bincount(pairs[:, 1], minlength=n)


def radius_outlier_removal(cloud, radius=0.10, min_neighbors=5) -> np.ndarray:
    """Keep points with at least ``min_neighbors`` other points within ``radius``.

    Counts are taken on the input cloud, so removal is not incremental.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    cloud = as_cloud(cloud)
    return cloud[neighbor_counts(cloud, radius) >= min_neighbors]


def save_cloud_binary(path, cloud):
    cloud = as_cloud(cloud)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(cloud)))
        fh.write(cloud.astype("<f8").tobytes())


def load_cloud_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a PC3D file")
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated header")
    (count,) = struct.unpack("<Q", blob[4:12])
    body = blob[12:]
    if len(body) != count * 24:
        raise ValueError(f"{path}: expected {count} points, payload has {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(-1, 3).astype(np.float64)


def save_cloud_text(path, cloud):
    cloud = as_cloud(cloud)
    with open(path, "w") as fh:
        for x, y, z in cloud.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def load_cloud_text(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad number") from None
    return as_cloud(np.array(rows, dtype=np.float64))


def load_cloud(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return load_cloud_binary(path) if head == MAGIC else load_cloud_text(path)


def save_cloud(path, cloud):
    if str(path).endswith((".txt", ".xyz", ".csv")):
        save_cloud_text(path, cloud)
    else:
        save_cloud_binary(path, cloud)
