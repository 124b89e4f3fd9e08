import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lidarsim.evaluator import (
    EvaluationError,
    NormalFrame,
    Trajectory,
    ape,
    associate,
    error_stats,
    fit_plane_normal,
    load_normal_frames,
    plane_normal_error,
    rpe,
    umeyama_align,
)
from lidarsim.geometry import quat_normalize


def traj_from_matrices(ts, mats):
    """Build a Trajectory from 4x4 matrices via scipy (independent of the
    package's own quaternion code)."""
    pos = np.array([m[:3, 3] for m in mats])
    quat = []
    for m in mats:
        x, y, z, w = Rotation.from_matrix(m[:3, :3]).as_quat()
        quat.append([w, x, y, z])
    return Trajectory(t=np.asarray(ts, float), pos=pos, quat=quat_normalize(np.asarray(quat)))


def straight_trajectory(n=10, dt=0.1, yaw_rate=0.3):
    ts, mats = [], []
    for i in range(n):
        m = np.eye(4)
        m[:3, :3] = Rotation.from_euler("z", yaw_rate * i).as_matrix()
        m[:3, 3] = [0.5 * i, 0.1 * i * i, 0.0]
        ts.append(i * dt)
        mats.append(m)
    return traj_from_matrices(ts, mats)


def random_rigid(rng, scale=False):
    m = np.eye(4)
    m[:3, :3] = Rotation.random(random_state=rng).as_matrix()
    m[:3, 3] = np.asarray(rng.uniform(-5, 5, 3))
    s = float(rng.uniform(0.5, 2.0)) if scale else 1.0
    return m, s


def transform_trajectory(traj, m, s=1.0):
    mats = []
    for i in range(len(traj)):
        p = np.eye(4)
        w, x, y, z = traj.quat[i]
        p[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
        p[:3, 3] = traj.pos[i]
        q = m.copy()
        q[:3, 3] = s * (m[:3, :3] @ traj.pos[i]) + m[:3, 3]
        q[:3, :3] = m[:3, :3] @ p[:3, :3]
        mats.append(q)
    return traj_from_matrices(traj.t, mats)


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------

def test_associate_identical_grids():
    a = straight_trajectory(10)
    ie, ir = associate(a, a)
    assert np.array_equal(ie, np.arange(10))
    assert np.array_equal(ir, np.arange(10))


def test_associate_10hz_vs_200hz():
    ref = Trajectory(
        t=np.arange(2000) * 0.005 + 0.005,
        pos=np.zeros((2000, 3)),
        quat=np.tile([1.0, 0, 0, 0], (2000, 1)),
    )
    est = Trajectory(
        t=np.arange(100) * 0.1 + 0.1,
        pos=np.zeros((100, 3)),
        quat=np.tile([1.0, 0, 0, 0], (100, 1)),
    )
    ie, ir = associate(est, ref)
    assert len(ie) == 100  # every estimate matched
    assert np.abs(ref.t[ir] - est.t[ie]).max() <= 0.0025


def test_associate_disjoint_ranges_error():
    a = straight_trajectory(5)
    b = Trajectory(t=a.t + 100.0, pos=a.pos, quat=a.quat)
    with pytest.raises(EvaluationError, match="zero matches"):
        associate(a, b)


def test_associate_one_to_one():
    ref = Trajectory(t=np.array([0.0, 1.0]), pos=np.zeros((2, 3)),
                     quat=np.tile([1.0, 0, 0, 0], (2, 1)))
    est = Trajectory(t=np.array([0.001, 0.002, 0.003]), pos=np.zeros((3, 3)),
                     quat=np.tile([1.0, 0, 0, 0], (3, 1)))
    ie, ir = associate(est, ref, max_dt=0.01)
    assert len(ie) == 1  # only one ref sample in reach; greedy keeps nearest
    assert ie[0] == 0 and ir[0] == 0


# ---------------------------------------------------------------------------
# umeyama
# ---------------------------------------------------------------------------

def test_umeyama_identity():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    tf = umeyama_align(pts, pts)
    assert np.allclose(tf.translation, 0, atol=1e-12)
    assert tf.scale == 1.0
    assert np.allclose(tf.apply(pts), pts, atol=1e-12)


def test_umeyama_rotation_and_shift_recovered():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(30, 3))
    m = np.eye(4)
    m[:3, :3] = Rotation.from_euler("z", math.pi / 2).as_matrix()
    m[:3, 3] = [1, 2, 3]
    ref = pts @ m[:3, :3].T + m[:3, 3]
    tf = umeyama_align(pts, ref)
    assert np.abs(tf.apply(pts) - ref).max() < 1e-12


def test_umeyama_pure_scale():
    pts = np.random.default_rng(2).normal(size=(15, 3))
    tf = umeyama_align(2.0 * pts, pts, with_scale=True)
    assert tf.scale == pytest.approx(0.5, abs=1e-12)


def test_umeyama_degenerate_collinear():
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(EvaluationError, match="degenerate"):
        umeyama_align(line, line)


def test_umeyama_random_recovery_1000():
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(1000):
        pts = rng.normal(size=(10, 3))
        m, s = random_rigid(rng, scale=(i % 2 == 1))
        ref = s * (pts @ m[:3, :3].T) + m[:3, 3]
        tf = umeyama_align(pts, ref, with_scale=(i % 2 == 1))
        worst = max(worst, float(np.abs(tf.apply(pts) - ref).max()))
    assert worst < 1e-9


# ---------------------------------------------------------------------------
# APE
# ---------------------------------------------------------------------------

def test_ape_self_is_zero():
    a = straight_trajectory()
    res = ape(a, a)
    assert res.stats.rmse == 0.0
    assert res.stats.max == 0.0


def test_ape_constant_offset():
    a = straight_trajectory()
    b = Trajectory(t=a.t, pos=a.pos + np.array([0.3, 0.4, 0.0]), quat=a.quat)
    res = ape(b, a, align="none")
    assert np.allclose(res.errors, 0.5, atol=1e-12)
    assert res.stats.rmse == pytest.approx(0.5, abs=1e-12)
    res2 = ape(b, a, align="se3")
    assert res2.stats.rmse < 1e-12


def test_ape_se3_invariant_under_rigid_transform():
    rng = np.random.default_rng(4)
    a = straight_trajectory(20)
    noisy = Trajectory(t=a.t, pos=a.pos + rng.normal(0, 0.05, a.pos.shape), quat=a.quat)
    base = ape(noisy, a, align="se3")
    for _ in range(5):
        m, _ = random_rigid(rng)
        moved = transform_trajectory(noisy, m)
        res = ape(moved, a, align="se3")
        assert res.stats.rmse == pytest.approx(base.stats.rmse, abs=1e-12)


def test_ape_brute_force_oracle():
    # hand-built 6-pose trajectories, errors recomputed with plain matrix math
    rng = np.random.default_rng(5)
    a = straight_trajectory(6)
    b = Trajectory(t=a.t, pos=a.pos + rng.normal(0, 0.2, a.pos.shape), quat=a.quat)
    res = ape(b, a, align="none")
    expected = [math.dist(a.pos[i], b.pos[i]) for i in range(6)]
    assert np.allclose(res.errors, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# RPE
# ---------------------------------------------------------------------------

def rpe_brute_force(est, ref, delta):
    """Independent 4x4-matrix implementation of the pairwise error."""
    def mat(traj, i):
        m = np.eye(4)
        w, x, y, z = traj.quat[i]
        m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
        m[:3, 3] = traj.pos[i]
        return m

    out = []
    for i in range(len(est) - delta):
        rel_ref = np.linalg.inv(mat(ref, i)) @ mat(ref, i + delta)
        rel_est = np.linalg.inv(mat(est, i)) @ mat(est, i + delta)
        E = np.linalg.inv(rel_ref) @ rel_est
        out.append(np.linalg.norm(E[:3, 3]))
    return np.asarray(out)


def test_rpe_self_is_zero():
    a = straight_trajectory()
    res = rpe(a, a, delta=1)
    assert res.stats.max == 0.0


def test_rpe_invariant_to_global_transform():
    rng = np.random.default_rng(6)
    a = straight_trajectory(15)
    b = Trajectory(t=a.t, pos=a.pos + rng.normal(0, 0.03, a.pos.shape), quat=a.quat)
    base = rpe(b, a, delta=2)
    m, _ = random_rigid(rng)
    moved = transform_trajectory(b, m)
    res = rpe(moved, a, delta=2)
    assert np.allclose(res.errors, base.errors, atol=1e-9)
    # transform applied to est only: all-zero case stays exactly zero
    moved_ref = transform_trajectory(a, m)
    assert rpe(moved_ref, a, delta=3).stats.max < 1e-12


def test_rpe_matches_brute_force():
    rng = np.random.default_rng(7)
    a = straight_trajectory(10)
    b = Trajectory(t=a.t, pos=a.pos + rng.normal(0, 0.1, a.pos.shape), quat=a.quat)
    for delta in (1, 2, 5):
        res = rpe(b, a, delta=delta)
        assert np.allclose(res.errors, rpe_brute_force(b, a, delta), atol=1e-12)


def test_rpe_jump_localized():
    a = straight_trajectory(10)
    pos = a.pos.copy()
    pos[6:] += [0.1, 0.0, 0.0]  # single 0.1 m jump between poses 5 and 6
    b = Trajectory(t=a.t, pos=pos, quat=a.quat)
    res = rpe(b, a, delta=1)
    spikes = np.nonzero(res.errors > 1e-9)[0]
    assert list(spikes) == [5]  # only the window containing the jump


def test_rpe_delta_seconds():
    a = straight_trajectory(20, dt=0.1)
    res = rpe(a, a, delta=0.5, delta_unit="seconds")
    assert res.stats.max == 0.0
    assert len(res.errors) == 15


def test_rpe_delta_too_large():
    a = straight_trajectory(5)
    with pytest.raises(EvaluationError):
        rpe(a, a, delta=10)


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def test_stats_match_brute_force():
    rng = np.random.default_rng(8)
    e = np.abs(rng.normal(size=501))
    s = error_stats(e)
    assert s.rmse == pytest.approx(math.sqrt(sum(x * x for x in e) / len(e)), abs=1e-12)
    assert s.mean == pytest.approx(sum(e) / len(e), abs=1e-12)
    assert s.median == pytest.approx(sorted(e)[len(e) // 2], abs=1e-12)
    assert s.min == min(e) and s.max == max(e)
    assert s.std == pytest.approx(
        math.sqrt(sum((x - s.mean) ** 2 for x in e) / len(e)), abs=1e-12
    )


def test_stats_jensen_and_ordering():
    rng = np.random.default_rng(9)
    for _ in range(20):
        e = np.abs(rng.normal(size=50))
        s = error_stats(e)
        assert s.rmse ** 2 >= s.mean ** 2 - 1e-15
        assert s.min <= s.median <= s.max


# ---------------------------------------------------------------------------
# plane normals
# ---------------------------------------------------------------------------

def plane_cloud(n=400, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.zeros((n, 3))
    pts[:, 0:2] = rng.uniform(-5, 5, (n, 2))
    return pts


def test_fit_plane_normal_exact():
    rng = np.random.default_rng(10)
    for _ in range(50):
        # random plane through origin with orthonormal basis
        n_true = rng.normal(size=3)
        n_true /= np.linalg.norm(n_true)
        u = np.cross(n_true, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(n_true, [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(n_true, u)
        ab = rng.uniform(-1, 1, (8, 2))
        neighbors = ab[:, :1] * u + ab[:, 1:] * v
        n_fit = fit_plane_normal(neighbors)
        assert min(np.linalg.norm(n_fit - n_true), np.linalg.norm(n_fit + n_true)) < 1e-9


def test_plane_normal_error_plane_case():
    cloud = plane_cloud()
    pts = cloud[:50]
    for sign in (1.0, -1.0):
        frames = [NormalFrame(t=0.0, points=pts, normals=np.tile([0, 0, sign], (50, 1)))]
        res = plane_normal_error(frames, cloud, k=5)
        assert res.frame_error[0] < 1e-9  # |dot| kills the sign ambiguity


def test_plane_normal_error_orthogonal_case():
    cloud = plane_cloud()
    pts = cloud[:30]
    frames = [NormalFrame(t=0.0, points=pts, normals=np.tile([1.0, 0, 0], (30, 1)))]
    res = plane_normal_error(frames, cloud, k=5)
    assert res.frame_error[0] == pytest.approx(30.0, abs=1e-9)
    assert res.point_counts[0] == 30


def test_plane_normal_self_consistency():
    # estimated normals computed by the same fit -> zero error
    from scipy.spatial import cKDTree
    cloud = plane_cloud(seed=3)
    pts = cloud[:40]
    tree = cKDTree(cloud)
    _d, idx = tree.query(pts, k=5)
    normals = np.array([fit_plane_normal(cloud[i]) for i in idx])
    frames = [NormalFrame(t=0.0, points=pts, normals=normals)]
    res = plane_normal_error(frames, cloud, k=5)
    assert res.frame_error[0] < 1e-6


def test_plane_normal_sparse_queries_skipped():
    cloud = plane_cloud()
    pts = np.array([[0.0, 0.0, 0.0], [100.0, 100.0, 100.0]])  # second far away
    frames = [NormalFrame(t=0.0, points=pts, normals=np.tile([0, 0, 1.0], (2, 1)))]
    res = plane_normal_error(frames, cloud, k=5, radius=1.0)
    assert res.skipped[0] == 1
    assert res.point_counts[0] == 1


def test_plane_normal_empty_frame_rejected():
    cloud = plane_cloud()
    frames = [NormalFrame(t=0.0, points=np.zeros((0, 3)), normals=np.zeros((0, 3)))]
    with pytest.raises(EvaluationError, match="empty"):
        plane_normal_error(frames, cloud)


def test_load_normal_frames(tmp_path):
    f = tmp_path / "normals.csv"
    f.write_text(
        "t,px,py,pz,nx,ny,nz\n"
        "0.1,1,2,0,0,0,1\n"
        "0.1,2,3,0,0,0,1\n"
        "0.2,4,5,0,0,0,-1\n"
    )
    frames = load_normal_frames(f)
    assert len(frames) == 2
    assert frames[0].points.shape == (2, 3)
    assert frames[1].t == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# TUM IO
# ---------------------------------------------------------------------------

def test_tum_round_trip(tmp_path):
    a = straight_trajectory(12)
    f = tmp_path / "traj.txt"
    a.to_tum(f)
    b = Trajectory.from_tum(f)
    assert np.abs(b.t - a.t).max() < 1e-9
    assert np.abs(b.pos - a.pos).max() < 1e-9
    assert np.abs(np.abs(np.sum(b.quat * a.quat, axis=1)) - 1).max() < 1e-9


def test_tum_malformed_row_reports_line(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("0 0 0 0 0 0 0 1\n0 0 oops 0 0 0 0 1\n")
    with pytest.raises(EvaluationError, match=":2"):
        Trajectory.from_tum(f)
