"""Motion control: keyboard teleop mapping and autonomous path tracking.

Autonomous tracking is a clamped cubic B-spline through user waypoints,
densely sampled, followed by a carrot-style pursuit law: steer toward the
current sample with a proportional heading controller and advance the
target whenever the robot closes within a distance threshold.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial import cKDTree

from .geometry import wrap_angle
from .kinematics import ChassisParams, PlanarTwist, RobotState, step

SPLINE_SAMPLES = 5000


class TrackingTimeout(RuntimeError):
    """Path tracking exceeded its simulated-time budget."""


# ---------------------------------------------------------------------------
# teleop
# ---------------------------------------------------------------------------

_DEFAULT_KEYS = {
    "forward": ("w", "up"),
    "back": ("s", "down"),
    "left": ("a", "left"),
    "right": ("d", "right"),
    "stop": (" ", "space", "x"),
}


@dataclass(frozen=True)
class TeleopConfig:
    linear_step: float = 0.05   # m/s per keypress
    angular_step: float = 0.1   # rad/s per keypress
    v_max: float = 0.5          # m/s
    w_max: float = 1.5          # rad/s
    key_map: dict = field(default_factory=lambda: dict(_DEFAULT_KEYS))

    def __post_init__(self):
        if min(self.linear_step, self.angular_step, self.v_max, self.w_max) <= 0:
            raise ValueError("teleop steps and limits must be positive")

    def action_for(self, key: str) -> str | None:
        key = key.lower()
        for action, keys in self.key_map.items():
            if key in keys:
                return action
        return None


def teleop_update(current: PlanarTwist, key: str, cfg: TeleopConfig) -> tuple[PlanarTwist, bool]:
    """Apply one key event to the commanded twist.

    Returns (new twist, applied). Unmapped keys leave the twist unchanged
    and report applied=False.
    """
    action = cfg.action_for(key)
    if action is None:
        return current, False
    if action == "stop":
        return PlanarTwist(0.0, 0.0), True
    v, w = current.v, current.w
    if action == "forward":
        v += cfg.linear_step
    elif action == "back":
        v -= cfg.linear_step
    elif action == "left":
        w += cfg.angular_step
    elif action == "right":
        w -= cfg.angular_step
    v = min(max(v, -cfg.v_max), cfg.v_max)
    w = min(max(w, -cfg.w_max), cfg.w_max)
    return PlanarTwist(v, w), True


# ---------------------------------------------------------------------------
# B-spline path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplinePath:
    control_points: np.ndarray  # (K, 2) m
    samples: np.ndarray         # (5000, 2) m at uniform parameter spacing
    arclength: np.ndarray       # (5000,) cumulative, non-decreasing

    @property
    def length(self) -> float:
        return float(self.arclength[-1])


def build_spline(control_points, n_samples: int = SPLINE_SAMPLES) -> SplinePath:
    """Clamped uniform B-spline through the control polygon.

    Degree is min(3, n-1) so short polygons degrade gracefully; clamping
    makes the curve interpolate the first and last control points. Samples
    are taken at uniform parameter values, so they inherit the convex-hull
    property of the control polygon.
    """
    pts = np.asarray(control_points, dtype=float).reshape(-1, 2)
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    if len(keep) < len(pts):
        warnings.warn(f"collapsed {len(pts) - len(keep)} coincident control point(s)")
    pts = pts[keep]
    if len(pts) < 2:
        raise ValueError("need at least 2 distinct control points")

    n = len(pts)
    k = min(3, n - 1)
    knots = np.concatenate([np.zeros(k), np.linspace(0.0, 1.0, n - k + 1), np.ones(k)])
    u = np.linspace(0.0, 1.0, n_samples)
    samples = BSpline(knots, pts, k)(u)
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    arclength = np.concatenate([[0.0], np.cumsum(seg)])
    return SplinePath(control_points=pts, samples=samples, arclength=arclength)


def load_path_points(path: str | Path) -> np.ndarray:
    """Read waypoints from a `.path.json` file: a JSON array of [x, y] pairs."""
    with open(path) as fh:
        data = json.load(fh)
    pts = np.asarray(data, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{path}: expected an array of [x, y] pairs")
    return pts


# ---------------------------------------------------------------------------
# pursuit tracker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackerState:
    target_index: int = 0
    cruise_speed: float = 0.2      # m/s
    switch_threshold: float = 0.01  # m
    heading_gain: float = 2.0      # 1/s
    w_max: float = 1.5             # rad/s
    finished: bool = False

    def __post_init__(self):
        if self.switch_threshold <= 0:
            raise ValueError("switch_threshold must be positive")


def pure_pursuit_step(robot: RobotState, path: SplinePath, st: TrackerState) -> tuple[PlanarTwist, TrackerState]:
    """One control decision: advance the carrot, then steer toward it."""
    if st.finished:
        raise RuntimeError("tracker already finished")
    samples = path.samples
    last = len(samples) - 1
    idx = st.target_index
    dx = samples[idx, 0] - robot.x
    dy = samples[idx, 1] - robot.y
    d = math.hypot(dx, dy)
    while d < st.switch_threshold and idx < last:
        idx += 1
        dx = samples[idx, 0] - robot.x
        dy = samples[idx, 1] - robot.y
        d = math.hypot(dx, dy)
    if idx == last and d < st.switch_threshold:
        return PlanarTwist(0.0, 0.0), replace(st, target_index=idx, finished=True)
    alpha = wrap_angle(math.atan2(dy, dx) - robot.theta)
    w = min(max(st.heading_gain * alpha, -st.w_max), st.w_max)
    return PlanarTwist(st.cruise_speed, w), replace(st, target_index=idx)


@dataclass
class TrackResult:
    state: RobotState
    tracker: TrackerState
    times: np.ndarray
    cross_track: np.ndarray  # per-tick distance to the nearest path sample
    ticks: int


def track_path(
    state: RobotState,
    path: SplinePath,
    tracker: TrackerState,
    dt: float = 0.005,
    timeout: float = 600.0,
    chassis: ChassisParams | None = None,
) -> TrackResult:
    """Drive the kinematic chassis along a spline until the tracker finishes.

    Commands are clipped through the wheel-speed limit when chassis params
    are given. Raises TrackingTimeout after `timeout` simulated seconds.
    """
    start_gap = float(np.linalg.norm(path.samples[0] - (state.x, state.y)))
    if start_gap > 0.5:
        warnings.warn(f"robot starts {start_gap:.2f} m from the path start")
    tree = cKDTree(path.samples)
    times = []
    cte = []
    ticks = 0
    max_ticks = int(math.ceil(timeout / dt))
    while not tracker.finished:
        if ticks >= max_ticks:
            raise TrackingTimeout(f"tracker not finished after {timeout} simulated seconds")
        cmd, tracker = pure_pursuit_step(state, path, tracker)
        if tracker.finished:
            break
        if chassis is not None:
            from .kinematics import twist_to_wheels, wheels_to_twist
            cmd = wheels_to_twist(twist_to_wheels(cmd, chassis), chassis)
        state = step(state, cmd, dt)
        times.append(state.t)
        cte.append(tree.query((state.x, state.y))[0])
        ticks += 1
    return TrackResult(
        state=state,
        tracker=tracker,
        times=np.asarray(times),
        cross_track=np.asarray(cte),
        ticks=ticks,
    )
