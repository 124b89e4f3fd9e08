"""Trajectory evaluation: APE, RPE, and the plane-normal diagnostic.

Estimated trajectories (TUM-format files) are associated to a reference by
nearest timestamp, optionally aligned with the closed-form least-squares
rigid/similarity transform, and scored with translational error statistics.
The plane-normal diagnostic compares externally estimated surface normals
against normals fitted to an error-free reference cloud, localizing frames
where registration went wrong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import quat_conjugate, quat_multiply, quat_normalize, quat_rotate


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray     # (N,) strictly increasing
    pos: np.ndarray   # (N, 3)
    quat: np.ndarray  # (N, 4) wxyz, unit

    def __post_init__(self):
        if len(self.t) != len(self.pos) or len(self.t) != len(self.quat):
            raise EvaluationError("trajectory arrays must have equal length")
        if len(self.t) >= 2 and np.any(np.diff(self.t) <= 0):
            raise EvaluationError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @staticmethod
    def from_tum(path: str | Path) -> "Trajectory":
        """Read `t x y z qx qy qz qw` rows (the ground_truth.txt format)."""
        rows = []
        path = Path(path)
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 8:
                    raise EvaluationError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
                try:
                    rows.append([float(p) for p in parts])
                except ValueError:
                    raise EvaluationError(f"{path}:{lineno}: non-numeric field") from None
        if not rows:
            raise EvaluationError(f"{path}: empty trajectory")
        arr = np.asarray(rows)
        quat = np.stack([arr[:, 7], arr[:, 4], arr[:, 5], arr[:, 6]], axis=1)
        return Trajectory(t=arr[:, 0], pos=arr[:, 1:4], quat=quat_normalize(quat))

    def to_tum(self, path: str | Path):
        with open(path, "w") as fh:
            for i in range(len(self)):
                w, x, y, z = self.quat[i]
                px, py, pz = self.pos[i]
                fh.write(
                    " ".join("%.9f" % v for v in (self.t[i], px, py, pz, x, y, z, w)) + "\n"
                )


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    median: float
    std: float
    min: float
    max: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("rmse", "mean", "median", "std", "min", "max")}


def error_stats(errors: np.ndarray) -> ErrorStats:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise EvaluationError("empty error series")
    return ErrorStats(
        rmse=float(np.sqrt(np.mean(e * e))),
        mean=float(np.mean(e)),
        median=float(np.median(e)),
        std=float(np.std(e)),
        min=float(np.min(e)),
        max=float(np.max(e)),
    )


@dataclass(frozen=True)
class AlignmentTransform:
    rotation: np.ndarray     # unit quaternion wxyz
    translation: np.ndarray  # (3,)
    scale: float = 1.0

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.scale * quat_rotate(self.rotation, pts) + self.translation


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------

def associate(est: Trajectory, ref: Trajectory, max_dt: float = 0.01):
    """Match each estimate pose to the nearest-in-time reference pose.

    Greedy one-to-one matching, smallest |dt| first (ties to earlier index);
    returns (est_indices, ref_indices) in time order. Raises on zero matches.
    """
    if len(est) == 0 or len(ref) == 0:
        raise EvaluationError("empty trajectory")
    if max_dt <= 0:
        raise EvaluationError("max_dt must be positive")
    right = np.searchsorted(ref.t, est.t)
    cands = []
    for i in range(len(est)):
        best_j, best_d = -1, math.inf
        for j in (right[i] - 1, right[i]):
            if 0 <= j < len(ref):
                d = abs(ref.t[j] - est.t[i])
                if d < best_d:
                    best_j, best_d = j, d
        if best_j >= 0 and best_d <= max_dt:
            cands.append((best_d, i, best_j))
    cands.sort(key=lambda c: (c[0], c[1]))
    used_ref = set()
    pairs = []
    for _d, i, j in cands:
        if j in used_ref:
            continue
        used_ref.add(j)
        pairs.append((i, j))
    if not pairs:
        raise EvaluationError("zero matches between trajectories (disjoint time ranges?)")
    pairs.sort()
    idx = np.asarray(pairs, dtype=np.int64)
    return idx[:, 0], idx[:, 1]


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def umeyama_align(est_pts: np.ndarray, ref_pts: np.ndarray, with_scale: bool = False) -> AlignmentTransform:
    """Least-squares transform minimizing ||ref - (s R est + t)||^2.

    Closed form via SVD of the cross-covariance with determinant sign
    correction. Requires >= 3 non-collinear point pairs; numpy's SVD is
    deterministic, so the recovered transform is too.
    """
    est = np.asarray(est_pts, dtype=float)
    ref = np.asarray(ref_pts, dtype=float)
    if est.shape != ref.shape or est.ndim != 2 or est.shape[1] != 3:
        raise EvaluationError("point sets must both be (N, 3)")
    n = len(est)
    if n < 3:
        raise EvaluationError(f"need >= 3 point pairs, got {n}")
    mu_e = est.mean(axis=0)
    mu_r = ref.mean(axis=0)
    de = est - mu_e
    dr = ref - mu_r
    cov = dr.T @ de / n
    U, D, Vt = np.linalg.svd(cov)
    # collinear or coincident point sets leave a rotation unobservable
    var_e = float(np.mean(np.sum(de * de, axis=1)))
    if var_e < 1e-24 or D[1] < 1e-12 * max(D[0], 1e-300):
        raise EvaluationError("degenerate point configuration (coincident or collinear)")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(D) @ S) / var_e) if with_scale else 1.0
    t = mu_r - scale * (R @ mu_e)
    return AlignmentTransform(rotation=_mat_to_quat(R), translation=t, scale=scale)


def _mat_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to wxyz quaternion (Shepperd's stable branch pick)."""
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricResult:
    metric: str
    stats: ErrorStats
    t: np.ndarray        # timestamp per error sample
    errors: np.ndarray
    align: str = "none"
    transform: AlignmentTransform | None = None


def ape(est: Trajectory, ref: Trajectory, align: str = "none", max_dt: float = 0.01) -> MetricResult:
    """Absolute pose error: per-pose translational distance to the reference.

    align: "none" compares in the shared world frame, "se3" removes the best
    rigid transform first, "sim3" also solves for scale.
    """
    if align not in ("none", "se3", "sim3"):
        raise EvaluationError(f"unknown alignment {align!r}")
    ie, ir = associate(est, ref, max_dt)
    p_est = est.pos[ie]
    p_ref = ref.pos[ir]
    transform = None
    if align in ("se3", "sim3"):
        transform = umeyama_align(p_est, p_ref, with_scale=(align == "sim3"))
        p_est = transform.apply(p_est)
    errors = np.linalg.norm(p_ref - p_est, axis=1)
    return MetricResult("ape", error_stats(errors), est.t[ie], errors, align, transform)


def rpe(
    est: Trajectory,
    ref: Trajectory,
    delta: int | float = 1,
    delta_unit: str = "frames",
    max_dt: float = 0.01,
) -> MetricResult:
    """Relative pose error over pose pairs (i, i+delta).

    The error of a pair is the translation of (Q_i^-1 Q_{i+d})^-1
    (P_i^-1 P_{i+d}) with Q the reference and P the estimate, which is
    invariant to any global rigid transform of either trajectory. delta is a
    pair step count ("frames") or a time gap in seconds ("seconds").
    """
    ie, ir = associate(est, ref, max_dt)
    ts = est.t[ie]
    n = len(ie)
    if delta_unit == "frames":
        d = int(delta)
        if d < 1:
            raise EvaluationError("delta must be >= 1 frame")
        pairs = [(i, i + d) for i in range(n - d)]
    elif delta_unit == "seconds":
        gap = float(delta)
        if gap <= 0:
            raise EvaluationError("delta must be positive seconds")
        j = np.searchsorted(ts, ts + gap)
        tol = max(1e-6, 0.1 * gap)
        pairs = []
        for i in range(n):
            for cand in (j[i] - 1, j[i]):
                if i < cand < n and abs(ts[cand] - ts[i] - gap) <= tol:
                    pairs.append((i, cand))
                    break
    else:
        raise EvaluationError(f"unknown delta_unit {delta_unit!r}")
    if not pairs:
        raise EvaluationError("delta exceeds the matched trajectory span")

    errors = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        d_ref = _relative_translation(ref, ir[i], ir[j])
        d_est = _relative_translation(est, ie[i], ie[j])
        # translation of (rel_ref)^-1 (rel_est) in the ref-relative frame
        q_ref_inv = quat_conjugate(_relative_rotation(ref, ir[i], ir[j]))
        errors[k] = np.linalg.norm(quat_rotate(q_ref_inv, d_est - d_ref))
    t_series = np.asarray([ts[i] for i, _ in pairs])
    return MetricResult("rpe", error_stats(errors), t_series, errors)


def _relative_translation(traj: Trajectory, i: int, j: int) -> np.ndarray:
    qi_inv = quat_conjugate(traj.quat[i])
    return quat_rotate(qi_inv, traj.pos[j] - traj.pos[i])


def _relative_rotation(traj: Trajectory, i: int, j: int) -> np.ndarray:
    return quat_multiply(quat_conjugate(traj.quat[i]), traj.quat[j])


# ---------------------------------------------------------------------------
# plane-normal diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalFrame:
    t: float
    points: np.ndarray   # (M, 3) world frame
    normals: np.ndarray  # (M, 3) unit


@dataclass(frozen=True)
class NormalErrorResult:
    t: np.ndarray             # per-frame timestamps
    frame_error: np.ndarray   # per-frame summed error
    point_counts: np.ndarray  # evaluated queries per frame
    skipped: np.ndarray       # queries without k neighbors in radius


def fit_plane_normal(neighbors: np.ndarray, toward: np.ndarray | None = None) -> np.ndarray:
    """Normal of the best-fit plane: smallest-eigenvalue eigenvector of the
    neighbor scatter matrix, optionally sign-normalized toward a viewpoint."""
    centered = neighbors - neighbors.mean(axis=0)
    _w, vecs = np.linalg.eigh(centered.T @ centered)
    n = vecs[:, 0]
    if toward is not None and float(np.dot(n, toward)) < 0:
        n = -n
    return n


def plane_normal_error(
    frames: list[NormalFrame],
    gt_cloud: np.ndarray,
    k: int = 5,
    radius: float = 1.0,
    sensor_origins: np.ndarray | None = None,
) -> NormalErrorResult:
    """Per-frame total normal-estimation error against a reference cloud.

    For each query point the reference normal is fitted to its k nearest
    reference-cloud points; the per-point error is 1 - |n_est . n_ref|
    (bounded, sign-invariant) and the frame error is the sum over points.
    Queries with fewer than k neighbors within `radius` are skipped and
    counted.
    """
    if not frames:
        raise EvaluationError("no frames to evaluate")
    gt_cloud = np.asarray(gt_cloud, dtype=float)
    if len(gt_cloud) < k:
        raise EvaluationError(f"reference cloud has fewer than k={k} points")
    tree = cKDTree(gt_cloud)
    ts, totals, counts, skips = [], [], [], []
    for fi, frame in enumerate(frames):
        pts = np.asarray(frame.points, dtype=float)
        est_n = np.asarray(frame.normals, dtype=float)
        if len(pts) == 0:
            raise EvaluationError(f"frame {fi}: empty")
        origin = None if sensor_origins is None else np.asarray(sensor_origins[fi], dtype=float)
        dists, idx = tree.query(pts, k=k, distance_upper_bound=radius)
        dists = np.atleast_2d(dists)
        idx = np.atleast_2d(idx)
        ok = np.isfinite(dists).all(axis=1)
        total = 0.0
        for qi in np.nonzero(ok)[0]:
            toward = None if origin is None else origin - pts[qi]
            n_ref = fit_plane_normal(gt_cloud[idx[qi]], toward)
            n_est = est_n[qi] / np.linalg.norm(est_n[qi])
            total += 1.0 - abs(float(np.dot(n_est, n_ref)))
        ts.append(frame.t)
        totals.append(total)
        counts.append(int(ok.sum()))
        skips.append(int(len(pts) - ok.sum()))
    if sum(counts) == 0:
        raise EvaluationError("reference cloud too sparse everywhere (no evaluable queries)")
    return NormalErrorResult(
        t=np.asarray(ts), frame_error=np.asarray(totals),
        point_counts=np.asarray(counts), skipped=np.asarray(skips),
    )


def load_normal_frames(path: str | Path) -> list[NormalFrame]:
    """Read `t,px,py,pz,nx,ny,nz` CSV rows grouped by frame timestamp."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first and not first[0].isdigit() and not first.startswith("-"):
            pass  # header line
        else:
            rows.append(first)
        for line in fh:
            line = line.strip()
            if line:
                rows.append(line)
    if not rows:
        raise EvaluationError(f"{path}: empty normal set")
    data = []
    for lineno, line in enumerate(rows, start=1):
        parts = line.split(",")
        if len(parts) != 7:
            raise EvaluationError(f"{path}:{lineno}: expected 7 comma-separated fields")
        data.append([float(p) for p in parts])
    arr = np.asarray(data)
    frames = []
    for t in np.unique(arr[:, 0]):
        sel = arr[:, 0] == t
        frames.append(NormalFrame(t=float(t), points=arr[sel, 1:4], normals=arr[sel, 4:7]))
    return frames
