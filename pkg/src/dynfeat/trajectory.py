"""Timestamped SE(3) trajectories and small rigid-motion helpers."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class Trajectory:
    """Time-sorted poses. Quaternions are stored as (qx, qy, qz, qw)."""

    timestamps: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        p = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(self.quaternions, dtype=np.float64).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise ValueError("timestamps, positions and quaternions differ in length")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
            raise ValueError("trajectory contains non-finite values")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        norms = np.linalg.norm(q, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("trajectory quaternions must have unit norm")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "quaternions", q)

    def __len__(self):
        return len(self.timestamps)

    def rotations(self) -> np.ndarray:
        """(n, 3, 3) rotation matrices."""
        return Rotation.from_quat(self.quaternions).as_matrix()

    def matrices(self) -> np.ndarray:
        """(n, 4, 4) homogeneous pose matrices."""
        T = np.tile(np.eye(4), (len(self), 1, 1))
        T[:, :3, :3] = self.rotations()
        T[:, :3, 3] = self.positions
        return T

    @classmethod
    def from_matrices(cls, timestamps, matrices) -> "Trajectory":
        matrices = np.asarray(matrices, dtype=np.float64)
        q = Rotation.from_matrix(matrices[:, :3, :3]).as_quat()
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return cls(timestamps, matrices[:, :3, 3].copy(), q)

    def subset(self, idx) -> "Trajectory":
        idx = np.asarray(idx, dtype=np.int64)
        return Trajectory(self.timestamps[idx], self.positions[idx], self.quaternions[idx])


def transform_trajectory(traj: Trajectory, T: np.ndarray) -> Trajectory:
    """Left-multiply every pose by the 4x4 rigid transform ``T``."""
    return Trajectory.from_matrices(traj.timestamps, np.einsum("ij,njk->nik", T, traj.matrices()))


def rigid_matrix(R: np.ndarray, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def invert_rigid(T: np.ndarray) -> np.ndarray:
    """Inverse of one (4, 4) or a stack of (n, 4, 4) rigid transforms."""
    T = np.asarray(T, dtype=np.float64)
    R = T[..., :3, :3]
    t = T[..., :3, 3]
    out = np.zeros_like(T)
    Rt = np.swapaxes(R, -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, t)
    out[..., 3, 3] = 1.0
    return out
