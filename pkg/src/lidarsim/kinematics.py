"""Differential-drive chassis model.

Kinematic only: wheel-speed <-> body-twist maps plus exact closed-form arc
integration of the planar unicycle, so the ground-truth trajectory carries
no integrator error. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_from_yaw, quat_multiply, quat_rotate, wrap_angle


@dataclass(frozen=True)
class ChassisParams:
    wheel_radius: float = 0.04     # m
    track_width: float = 0.30      # m, distance between drive wheels
    max_wheel_speed: float = 20.0  # rad/s

    def __post_init__(self):
        if self.wheel_radius <= 0 or self.track_width <= 0 or self.max_wheel_speed <= 0:
            raise ValueError("chassis parameters must be strictly positive")


@dataclass(frozen=True)
class PlanarTwist:
    v: float = 0.0  # m/s forward
    w: float = 0.0  # rad/s yaw rate


@dataclass(frozen=True)
class WheelSpeeds:
    left: float
    right: float


@dataclass(frozen=True)
class RobotState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0  # rad, wrapped to (-pi, pi]
    twist: PlanarTwist = PlanarTwist()
    t: float = 0.0


def twist_to_wheels(tw: PlanarTwist, p: ChassisParams) -> WheelSpeeds:
    """Map a body twist to wheel speeds, rescaling to respect the wheel limit.

    Rescaling is proportional on (v, w) jointly, so the commanded curvature
    is preserved when the limit clips.
    """
    left = (tw.v - tw.w * p.track_width / 2.0) / p.wheel_radius
    right = (tw.v + tw.w * p.track_width / 2.0) / p.wheel_radius
    peak = max(abs(left), abs(right))
    if peak > p.max_wheel_speed:
        scale = p.max_wheel_speed / peak
        left *= scale
        right *= scale
    return WheelSpeeds(left, right)


def wheels_to_twist(ws: WheelSpeeds, p: ChassisParams) -> PlanarTwist:
    return PlanarTwist(
        v=p.wheel_radius * (ws.left + ws.right) / 2.0,
        w=p.wheel_radius * (ws.right - ws.left) / p.track_width,
    )


def step(s: RobotState, cmd: PlanarTwist, dt: float) -> RobotState:
    """Advance the state by dt under a constant twist (exact arc).

    Uses the half-angle chord form of the arc displacement,
    (v/w)(sin(th+w dt) - sin th) = v dt sinc(w dt/2) cos(th + w dt/2),
    which is the same arc without the catastrophic cancellation near w=0 and
    degrades smoothly into the straight-line formula.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    v, w = cmd.v, cmd.w
    half = 0.5 * w * dt
    if abs(half) < 1e-8:
        sinc = 1.0 - half * half / 6.0
    else:
        sinc = math.sin(half) / half
    chord = v * dt * sinc
    return RobotState(
        x=s.x + chord * math.cos(s.theta + half),
        y=s.y + chord * math.sin(s.theta + half),
        theta=wrap_angle(s.theta + w * dt),
        twist=cmd,
        t=s.t + dt,
    )


def propagate_planar(x, y, theta, v, w, tau):
    """Vectorized exact-arc propagation by per-element durations tau.

    All arguments are broadcastable arrays; returns (x, y, theta) after tau
    seconds under the constant twists (v, w). Heading is left unwrapped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    tau = np.asarray(tau, dtype=float)
    half = 0.5 * w * tau
    small = np.abs(half) < 1e-8
    half_safe = np.where(small, 1.0, half)
    sinc = np.where(small, 1.0 - half * half / 6.0, np.sin(half_safe) / half_safe)
    chord = v * tau * sinc
    return x + chord * np.cos(theta + half), y + chord * np.sin(theta + half), theta + w * tau


def lift_to_pose3(s: RobotState, sensor_mount: Pose, z0: float = 0.0) -> Pose:
    """Embed the planar state in SE(3) and compose the fixed mount transform."""
    body = Pose(np.array([s.x, s.y, z0]), quat_from_yaw(s.theta))
    return body.compose(sensor_mount)


def lift_to_pose3_many(x, y, theta, mount: Pose, z0: float):
    """Vectorized lift: arrays of planar states -> (positions, quaternions)."""
    x = np.asarray(x, dtype=float)
    yaw_q = quat_from_yaw(np.asarray(theta, dtype=float))
    pos = np.stack([x, np.asarray(y, dtype=float), np.full_like(x, z0)], axis=-1)
    pos = pos + quat_rotate(yaw_q, mount.position)
    quats = quat_multiply(yaw_q, mount.orientation)
    return pos, quats
