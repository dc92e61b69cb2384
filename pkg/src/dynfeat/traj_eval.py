"""Absolute trajectory error and relative pose error, TUM-benchmark style."""
from dataclasses import dataclass, asdict

import numpy as np

from .trajectory import Trajectory, invert_rigid


@dataclass(frozen=True)
class MetricReport:
    """Error statistics; ``sd`` is the population standard deviation."""

    rmse: float
    mean: float
    median: float
    sd: float
    count: int

    @classmethod
    def from_errors(cls, errors) -> "MetricReport":
        e = np.asarray(errors, dtype=np.float64)
        if len(e) == 0:
            raise ValueError("no errors to summarize")
        return cls(
            rmse=float(np.sqrt(np.mean(e * e))),
            mean=float(np.mean(e)),
            median=float(np.median(e)),
            sd=float(np.std(e)),
            count=int(len(e)),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02):
    """Greedy one-to-one nearest-timestamp matching.

    Candidate pairs within ``max_dt`` are taken in order of increasing |dt|.
    Returns (est_index, gt_index) pairs sorted by est index.
    """
    if not max_dt > 0:
        raise ValueError("max_dt must be positive")
    te, tg = est.timestamps, gt.timestamps
    lo = np.searchsorted(tg, te - max_dt, side="left")
    hi = np.searchsorted(tg, te + max_dt, side="right")
    cands = []
    for i in range(len(te)):
        for j in range(lo[i], hi[i]):
            dt = abs(te[i] - tg[j])
            if dt <= max_dt:
                cands.append((dt, i, j))
    cands.sort()
    used_e, used_g = set(), set()
    pairs = []
    for _, i, j in cands:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        pairs.append((i, j))
    if not pairs:
        raise ValueError(f"no timestamp pairs within max_dt={max_dt}")
    pairs.sort()
    return pairs


def align_rigid(est_pts, gt_pts):
    """Least-squares R, t with ``R @ est + t ~ gt`` (no scale). Returns a 4x4 matrix."""
    X = np.asarray(est_pts, dtype=np.float64).reshape(-1, 3)
    Y = np.asarray(gt_pts, dtype=np.float64).reshape(-1, 3)
    if len(X) != len(Y):
        raise ValueError("point sets differ in length")
    if len(X) < 3:
        raise ValueError("rigid alignment needs at least 3 point pairs")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    for A in (Xc, Yc):
        s = np.linalg.svd(A, compute_uv=False)
        if s[0] == 0 or s[1] <= 1e-10 * s[0]:
            raise ValueError("degenerate (collinear or coincident) alignment points")
    H = Xc.T @ Yc
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = my - R @ mx
    return T


def ate_with_alignment(est: Trajectory, gt: Trajectory, max_dt: float = 0.02):
    """ATE report plus the alignment transform, matched pairs and per-pair residuals."""
    pairs = associate(est, gt, max_dt)
    ie = [i for i, _ in pairs]
    ig = [j for _, j in pairs]
    P = est.positions[ie]
    Q = gt.positions[ig]
    T = align_rigid(P, Q)
    aligned = P @ T[:3, :3].T + T[:3, 3]
    err = np.linalg.norm(aligned - Q, axis=1)
    return MetricReport.from_errors(err), T, pairs, err


def ate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> MetricReport:
    return ate_with_alignment(est, gt, max_dt)[0]


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Rotation angle in radians of one or many 3x3 matrices, accurate near zero."""
    R = np.asarray(R)
    v = np.stack(
        (R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]),
        axis=-1,
    )
    tr = R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2]
    return np.arctan2(np.linalg.norm(v, axis=-1), tr - 1.0)


def rpe_pairs(stamps: np.ndarray, delta: float, tol: float):
    """Index pairs (i, j) with stamps[j] the stamp nearest to stamps[i] + delta."""
    out = []
    last = stamps[-1]
    for i, t in enumerate(stamps):
        target = t + delta
        if target > last + tol:
            break
        j = int(np.searchsorted(stamps, target))
        if j == len(stamps) or (j > 0 and target - stamps[j - 1] <= stamps[j] - target):
            j -= 1
        if j > i:
            out.append((i, j))
    return out


def rpe(est: Trajectory, gt: Trajectory, delta: float = 1.0, max_dt: float = 0.02):
    """Translational (m) and rotational (deg) relative pose error over ``delta`` seconds."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    pairs = associate(est, gt, max_dt)
    P = est.matrices()[[i for i, _ in pairs]]
    Q = gt.matrices()[[j for _, j in pairs]]
    stamps = est.timestamps[[i for i, _ in pairs]]
    idx = rpe_pairs(stamps, delta, max_dt)
    if not idx:
        raise ValueError(f"no pose pairs {delta} s apart")
    a = np.array([i for i, _ in idx])
    b = np.array([j for _, j in idx])
    rel_gt = invert_rigid(Q[a]) @ Q[b]
    rel_est = invert_rigid(P[a]) @ P[b]
    # trans(E) = R_gt^T (t_est - t_gt); the rotation drops out of the norm
    trans = np.linalg.norm(rel_est[:, :3, 3] - rel_gt[:, :3, 3], axis=1)
    R_err = np.swapaxes(rel_gt[:, :3, :3], 1, 2) @ rel_est[:, :3, :3]
    rot = np.degrees(rotation_angle(R_err))
    return MetricReport.from_errors(trans), MetricReport.from_errors(rot)


def write_aligned_csv(path, est: Trajectory, gt: Trajectory, T, pairs):
    """Aligned estimate next to ground truth, one matched pair per row."""
    with open(path, "w") as fh:
        fh.write("timestamp,est_x,est_y,est_z,gt_x,gt_y,gt_z\n")
        for i, j in pairs:
            p = T[:3, :3] @ est.positions[i] + T[:3, 3]
            q = gt.positions[j]
            fh.write(",".join(repr(float(v)) for v in (est.timestamps[i], *p, *q)) + "\n")


def rmse_identity_gap(report: MetricReport) -> float:
    """|rmse^2 - (mean^2 + sd^2)|; zero up to rounding for population sd."""
    return abs(report.rmse**2 - (report.mean**2 + report.sd**2))

