"""Quaternion and rigid-transform primitives.

Quaternions are stored as (w, x, y, z) float64 arrays. All functions accept
either a single quaternion/vector or stacked arrays with the component axis
last, and are pure (safe to call from worker threads).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    return math.pi - (math.pi - theta) % _TWO_PI


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), _TWO_PI)


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q; broadcasts over leading axes."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    vx, vy, vz = (v[..., i] for i in range(3))
    # v + 2w (qv x v) + 2 qv x (qv x v), with the cross products expanded
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.stack(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ],
        axis=-1,
    )


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion for R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def quat_from_yaw(yaw) -> np.ndarray:
    """Yaw-only quaternion(s); accepts a scalar or an array of angles."""
    yaw = np.asarray(yaw, dtype=float)
    half = 0.5 * yaw
    out = np.zeros(yaw.shape + (4,))
    out[..., 0] = np.cos(half)
    out[..., 3] = np.sin(half)
    return out


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc; exact at s=0 and s=1."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if s == 0.0:
        return q0.copy()
    if s == 1.0:
        return q1.copy()
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + s * (q1 - q0))
    omega = math.acos(min(dot, 1.0))
    so = math.sin(omega)
    return (math.sin((1.0 - s) * omega) / so) * q0 + (math.sin(s * omega) / so) * q1


def slerp_many(q0: np.ndarray, q1: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Vectorized slerp between per-row quaternion pairs, s in [0, 1]."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float).copy()
    s = np.asarray(s, dtype=float)
    dot = np.sum(q0 * q1, axis=-1)
    flip = dot < 0.0
    q1[flip] = -q1[flip]
    dot = np.abs(dot)
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    so = np.sin(omega)
    near = so < 1e-9
    so_safe = np.where(near, 1.0, so)
    w0 = np.where(near, 1.0 - s, np.sin((1.0 - s) * omega) / so_safe)
    w1 = np.where(near, s, np.sin(s * omega) / so_safe)
    out = w0[..., None] * q0 + w1[..., None] * q1
    return quat_normalize(out)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by `orientation`, then translate by `position`."""

    position: np.ndarray
    orientation: np.ndarray  # (w, x, y, z), unit norm

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n:.6g} too far from 1")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q / n)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), quat_identity())

    @staticmethod
    def from_xyz_rpy(xyz, rpy) -> "Pose":
        """Pose from translation and roll/pitch/yaw in radians."""
        return Pose(np.asarray(xyz, dtype=float), quat_from_rpy(*rpy))

    def compose(self, other: "Pose") -> "Pose":
        """self * other: apply `other` in this pose's frame."""
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform point(s) from this pose's frame to the parent frame."""
        return quat_rotate(self.orientation, pts) + self.position

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def yaw(self) -> float:
        w, x, y, z = self.orientation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
