import math

import numpy as np
import pytest

from lidarsim.geometry import Pose
from lidarsim.kinematics import (
    ChassisParams,
    PlanarTwist,
    RobotState,
    WheelSpeeds,
    lift_to_pose3,
    lift_to_pose3_many,
    propagate_planar,
    step,
    twist_to_wheels,
    wheels_to_twist,
)

P = ChassisParams()  # r=0.04, b=0.30, max 20 rad/s


def test_straight_line_wheels():
    ws = twist_to_wheels(PlanarTwist(0.2, 0.0), P)
    assert ws.left == pytest.approx(5.0)
    assert ws.right == pytest.approx(5.0)


def test_spin_in_place_wheels():
    ws = twist_to_wheels(PlanarTwist(0.0, 1.0), P)
    assert ws.left == pytest.approx(-3.75)
    assert ws.right == pytest.approx(3.75)


def test_clamp_preserves_curvature():
    tw = PlanarTwist(1.0, 2.0)  # wheels would be 17.5 / 32.5
    ws = twist_to_wheels(tw, P)
    assert max(abs(ws.left), abs(ws.right)) == pytest.approx(P.max_wheel_speed)
    back = wheels_to_twist(ws, P)
    assert back.w / back.v == pytest.approx(tw.w / tw.v)  # curvature kept


def test_wheels_to_twist_basics():
    assert wheels_to_twist(WheelSpeeds(5, 5), P) == PlanarTwist(pytest.approx(0.2), pytest.approx(0.0))
    assert wheels_to_twist(WheelSpeeds(-4, 4), P).v == pytest.approx(0.0)


def test_round_trip_random_unclamped():
    rng = np.random.default_rng(0)
    for _ in range(200):
        tw = PlanarTwist(rng.uniform(-0.5, 0.5), rng.uniform(-1.5, 1.5))
        back = wheels_to_twist(twist_to_wheels(tw, P), P)
        assert back.v == pytest.approx(tw.v, abs=1e-12)
        assert back.w == pytest.approx(tw.w, abs=1e-12)


def test_step_straight():
    s = step(RobotState(), PlanarTwist(0.2, 0.0), 1.0 / 10)
    # dt capped at 0.1; integrate 10 steps of 0.1 to reach 1 s
    s = RobotState()
    for _ in range(10):
        s = step(s, PlanarTwist(0.2, 0.0), 0.1)
    assert s.x == pytest.approx(0.2, abs=1e-12)
    assert s.y == pytest.approx(0.0, abs=1e-12)
    assert s.t == pytest.approx(1.0)


def test_circle_closure():
    # v=0.2, w=0.2: radius 1 m circle, total time 2*pi/0.2 s in 1 ms steps
    v, w = 0.2, 0.2
    total = 2 * math.pi / w
    n_full = int(total // 1e-3)
    rem = total - n_full * 1e-3
    s = RobotState()
    for _ in range(n_full):
        s = step(s, PlanarTwist(v, w), 1e-3)
    if rem > 0:
        s = step(s, PlanarTwist(v, w), rem)
    assert math.hypot(s.x, s.y) < 1e-6


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(RobotState(), PlanarTwist(), 0.0)
    with pytest.raises(ValueError):
        step(RobotState(), PlanarTwist(), 0.2)


def test_two_half_steps_equal_full_step():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s0 = RobotState(x=rng.normal(), y=rng.normal(), theta=rng.uniform(-3, 3))
        cmd = PlanarTwist(rng.uniform(-0.5, 0.5), rng.uniform(-1.5, 1.5))
        full = step(s0, cmd, 0.01)
        half = step(step(s0, cmd, 0.005), cmd, 0.005)
        assert abs(full.x - half.x) < 1e-12
        assert abs(full.y - half.y) < 1e-12
        assert abs(full.theta - half.theta) < 1e-12


def test_straight_limit_continuity():
    s0 = RobotState(theta=0.7)
    a = step(s0, PlanarTwist(0.3, 1e-9), 0.1)
    b = step(s0, PlanarTwist(0.3, 0.0), 0.1)
    assert math.hypot(a.x - b.x, a.y - b.y) < 1e-9


def test_heading_always_wrapped():
    s = RobotState()
    for _ in range(5000):
        s = step(s, PlanarTwist(0.1, 1.5), 0.01)
        assert -math.pi < s.theta <= math.pi


def test_propagate_planar_matches_step():
    rng = np.random.default_rng(2)
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    th = rng.uniform(-3, 3, 50)
    v = rng.uniform(-0.5, 0.5, 50)
    w = rng.uniform(-1.5, 1.5, 50)
    tau = rng.uniform(0.0005, 0.005, 50)
    X, Y, TH = propagate_planar(x, y, th, v, w, tau)
    for i in range(50):
        s = step(RobotState(x=x[i], y=y[i], theta=th[i]), PlanarTwist(v[i], w[i]), tau[i])
        assert abs(X[i] - s.x) < 1e-15
        assert abs(Y[i] - s.y) < 1e-15


def test_lift_identity_mount():
    pose = lift_to_pose3(RobotState(x=1, y=2, theta=math.pi / 2), Pose.identity(), z0=0.3)
    assert np.allclose(pose.position, [1, 2, 0.3])
    assert pose.yaw() == pytest.approx(math.pi / 2)


def test_lift_mount_offset():
    mount = Pose(np.array([0.15, 0.0, 0.25]), np.array([1.0, 0, 0, 0]))
    pose = lift_to_pose3(RobotState(), mount, z0=0.3)
    assert np.allclose(pose.position, [0.15, 0.0, 0.55])


def test_lift_mount_offset_rotated():
    mount = Pose(np.array([0.15, 0.0, 0.25]), np.array([1.0, 0, 0, 0]))
    pose = lift_to_pose3(RobotState(theta=math.pi), mount, z0=0.3)
    assert np.allclose(pose.position, [-0.15, 0.0, 0.55], atol=1e-12)


def test_lift_many_matches_single():
    mount = Pose(np.array([0.1, -0.05, 0.2]), np.array([1.0, 0, 0, 0]))
    xs = np.array([0.0, 1.0, -2.0])
    ys = np.array([0.5, -0.5, 3.0])
    ths = np.array([0.0, 1.2, -2.8])
    pos, quat = lift_to_pose3_many(xs, ys, ths, mount, z0=0.3)
    for i in range(3):
        single = lift_to_pose3(RobotState(x=xs[i], y=ys[i], theta=ths[i]), mount, z0=0.3)
        assert np.allclose(pos[i], single.position, atol=1e-15)
        assert np.allclose(quat[i], single.orientation, atol=1e-15)


def test_chassis_params_validation():
    with pytest.raises(ValueError):
        ChassisParams(wheel_radius=0.0)
