"""LIDAR and IMU measurement synthesis from ground-truth kinematics.

Two beam schedules are supported: a spinning multi-ring scanner (uniform
elevation channels swept in azimuth) and a counter-rotating two-prism
pattern that produces the non-repetitive rosette of solid-state sensors.
Each emitted beam carries its own time offset inside the frame, and rays
are cast from the sensor pose at that instant, so motion distortion falls
out of the geometry instead of being modeled separately.

Determinism: every frame draws its noise from a stream derived from
(seed, frame index), and the IMU stream from (seed,) alone, so results are
bit-identical across runs and independent of worker fan-out.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, quat_rotate
from .scene import Scene, raycast_batch_timed

_DEG = math.pi / 180.0

WORKER_ENV = "LIDARSIM_THREADS"


def resolve_workers(requested: int) -> int:
    """Clamp the requested sensor worker count by the LIDARSIM_THREADS cap."""
    cap = os.environ.get(WORKER_ENV)
    workers = max(1, int(requested))
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            pass
    return workers


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def _default_mount() -> Pose:
    return Pose(np.array([0.15, 0.0, 0.25]), np.array([1.0, 0.0, 0.0, 0.0]))


@dataclass(frozen=True, eq=False)
class LidarModel:
    name: str
    pattern_kind: str            # "mechanical" | "risley"
    fov_h: float                 # deg, full horizontal field of view
    fov_v: float                 # deg, full vertical field of view
    point_rate: float            # points/s
    max_range: float             # m
    frame_rate: float = 10.0     # Hz
    range_noise_sigma: float = 0.01  # m, 0 disables noise
    channels: int = 32           # mechanical: vertical ring count
    elev_min: float = -30.67     # mechanical: lowest ring elevation, deg
    elev_max: float = 10.67      # mechanical: highest ring elevation, deg
    prism_f1: float = 24.31      # risley: prism rates, Hz (sign = spin direction)
    prism_f2: float = -15.55
    prism_phi0: float = 0.0      # risley: second-prism phase offset, rad
    mount: Pose = field(default_factory=_default_mount)

    def __post_init__(self):
        if self.pattern_kind not in ("mechanical", "risley"):
            raise ValueError(f"unknown pattern_kind {self.pattern_kind!r}")
        if not 0.0 < self.fov_h <= 360.0:
            raise ValueError("fov_h must be in (0, 360]")
        if self.point_rate <= 0 or self.frame_rate <= 0 or self.max_range <= 0:
            raise ValueError("point_rate, frame_rate and max_range must be positive")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")

    @property
    def frame_budget(self) -> int:
        """Per-frame sample budget (point rate over frame rate, floored)."""
        return int(self.point_rate // self.frame_rate)

    @property
    def frame_period(self) -> float:
        return 1.0 / self.frame_rate


BUILTIN_LIDARS = {
    "velodyne32": LidarModel(
        name="velodyne32", pattern_kind="mechanical", fov_h=360.0, fov_v=41.34,
        point_rate=640_000, max_range=100.0, channels=32,
        elev_min=-30.67, elev_max=10.67,
        mount=Pose(np.array([0.0, 0.0, 0.25]), np.array([1.0, 0.0, 0.0, 0.0])),
    ),
    "avia": LidarModel(
        name="avia", pattern_kind="risley", fov_h=70.4, fov_v=77.2,
        point_rate=240_000, max_range=450.0,
    ),
    "hap": LidarModel(
        name="hap", pattern_kind="risley", fov_h=120.0, fov_v=25.0,
        point_rate=452_000, max_range=150.0,
    ),
    "horizon": LidarModel(
        name="horizon", pattern_kind="risley", fov_h=81.7, fov_v=25.1,
        point_rate=240_000, max_range=260.0,
    ),
}


def lidar_model(name: str, **overrides) -> LidarModel:
    """Look up a built-in model, optionally overriding fields.

    `mount_xyz` / `mount_rpy_deg` overrides are folded into the mount pose.
    """
    if name not in BUILTIN_LIDARS:
        raise ValueError(f"unknown LIDAR model {name!r} (have: {', '.join(sorted(BUILTIN_LIDARS))})")
    model = BUILTIN_LIDARS[name]
    mount_xyz = overrides.pop("mount_xyz", None)
    mount_rpy = overrides.pop("mount_rpy_deg", None)
    if mount_xyz is not None or mount_rpy is not None:
        base = model.mount
        xyz = np.asarray(mount_xyz, dtype=float) if mount_xyz is not None else base.position
        quat = (
            Pose.from_xyz_rpy(xyz, np.radians(mount_rpy)).orientation
            if mount_rpy is not None
            else base.orientation
        )
        overrides["mount"] = Pose(xyz, quat)
    return replace(model, **overrides) if overrides else model


@dataclass(frozen=True)
class ImuModel:
    rate: float = 200.0              # Hz
    gyro_noise_sigma: float = 0.0    # rad/s per axis
    accel_noise_sigma: float = 0.0   # m/s^2 per axis
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    gravity: float = 9.81            # m/s^2, world -z

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("imu rate must be positive")
        if self.gyro_noise_sigma < 0 or self.accel_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class ImuSample:
    t: float
    angular_velocity: np.ndarray  # rad/s, body frame
    specific_force: np.ndarray    # m/s^2, body frame


# ---------------------------------------------------------------------------
# beam schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanPattern:
    """Per-sample beam schedule: time offsets within the frame + directions.

    dt is strictly increasing; directions are unit vectors in the sensor
    frame (x forward, z up).
    """

    dt: np.ndarray           # (N,) s, in [0, frame period)
    directions: np.ndarray   # (N, 3)

    def __len__(self) -> int:
        return len(self.dt)


def _dirs_from_az_el(az: np.ndarray, el: np.ndarray) -> np.ndarray:
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def mechanical_pattern(model: LidarModel) -> ScanPattern:
    """Ring scanner: all channels fire per azimuth column, column-major.

    The azimuth advances uniformly across the frame period; sample time
    offsets advance at the point rate, so dt tracks azimuth.
    """
    if model.pattern_kind != "mechanical":
        raise ValueError("model is not a mechanical scanner")
    budget = model.frame_budget
    if budget < model.channels:
        raise ValueError(f"frame budget {budget} smaller than channel count {model.channels}")
    columns = budget // model.channels
    n = columns * model.channels
    i = np.arange(n)
    col = i // model.channels
    row = i % model.channels
    elev = np.linspace(model.elev_min, model.elev_max, model.channels) * _DEG
    az = (-model.fov_h / 2.0 + model.fov_h * col / columns) * _DEG
    return ScanPattern(dt=i / model.point_rate, directions=_dirs_from_az_el(az, elev[row]))


def risley_pattern(model: LidarModel, frame_index: int) -> ScanPattern:
    """Two-prism rosette sampled at the point rate.

    The unit deflection is the mean of two counter-rotating phasors, so its
    magnitude never exceeds 1; scaling by the half-FoV keeps every beam
    inside the field of view. Prism rates that are irrational relative to
    the frame rate make the pattern non-repetitive across frames.
    """
    if model.pattern_kind != "risley":
        raise ValueError("model is not a risley-prism scanner")
    budget = model.frame_budget
    k = np.arange(budget)
    tau = frame_index / model.frame_rate + k / model.point_rate
    a1 = 2.0 * math.pi * model.prism_f1 * tau
    a2 = 2.0 * math.pi * model.prism_f2 * tau + model.prism_phi0
    ux = np.clip(0.5 * (np.cos(a1) + np.cos(a2)), -1.0, 1.0)
    uy = np.clip(0.5 * (np.sin(a1) + np.sin(a2)), -1.0, 1.0)
    az = (model.fov_h / 2.0) * ux * _DEG
    el = (model.fov_v / 2.0) * uy * _DEG
    return ScanPattern(dt=k / model.point_rate, directions=_dirs_from_az_el(az, el))


def scan_pattern(model: LidarModel, frame_index: int) -> ScanPattern:
    if model.pattern_kind == "mechanical":
        return mechanical_pattern(model)
    return risley_pattern(model, frame_index)


# ---------------------------------------------------------------------------
# frame synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointCloudFrame:
    """One LIDAR frame; points are sensor-frame at their emission pose."""

    t0: float
    xyz: np.ndarray        # (M, 3) m
    intensity: np.ndarray  # (M,) in [0, 1], cosine-of-incidence placeholder
    dt: np.ndarray         # (M,) s offset within the frame

    def __len__(self) -> int:
        return len(self.xyz)


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, frame_index])


def imu_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2])


class StaticPoseProvider:
    """Constant sensor pose, for stationary-sensor synthesis and tests."""

    def __init__(self, pose: Pose):
        self.pose = pose

    def sensor_pose_many(self, times: np.ndarray):
        n = len(times)
        return (
            np.tile(self.pose.position, (n, 1)),
            np.tile(self.pose.orientation, (n, 1)),
        )


def simulate_lidar_frame(
    scene: Scene,
    poses,
    model: LidarModel,
    t0: float,
    rng: np.random.Generator,
    frame_index: int | None = None,
    pattern: ScanPattern | None = None,
    workers: int = 1,
    mover_mode: str = "per_point",
) -> PointCloudFrame:
    """Synthesize one frame starting at t0.

    `poses` must expose sensor_pose_many(times) -> (positions, quaternions)
    covering [t0, t0 + frame period). Each beam is cast from the sensor pose
    at its own emission time; hit ranges get Gaussian noise and are
    re-projected along the beam, so noisy points stay on the ray. Misses are
    dropped. Intensity is the cosine of the incidence angle.
    """
    if frame_index is None:
        frame_index = int(round(t0 * model.frame_rate))
    if pattern is None:
        pattern = scan_pattern(model, frame_index)
    times = t0 + pattern.dt
    pos, quat = poses.sensor_pose_many(times)
    dirs_world = quat_rotate(quat, pattern.directions)

    workers = resolve_workers(workers)
    n = len(times)
    if workers <= 1 or n < 4096:
        t_hit, normals, _obj = raycast_batch_timed(
            scene, pos, dirs_world, times, model.max_range, mover_mode
        )
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        chunks = [(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i] < bounds[i + 1]]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda ab: raycast_batch_timed(
                        scene, pos[ab[0]:ab[1]], dirs_world[ab[0]:ab[1]],
                        times[ab[0]:ab[1]], model.max_range, mover_mode,
                    ),
                    chunks,
                )
            )
        t_hit = np.concatenate([p[0] for p in parts])
        normals = np.concatenate([p[1] for p in parts])

    # noise is drawn for every beam up front, so worker count never shifts draws
    if model.range_noise_sigma > 0.0:
        noise = rng.normal(0.0, model.range_noise_sigma, size=n)
    else:
        noise = np.zeros(n)

    hit = np.isfinite(t_hit)
    ranges = np.clip(t_hit[hit] + noise[hit], 1e-9, model.max_range)
    xyz = pattern.directions[hit] * ranges[:, None]
    incidence = -np.sum(normals[hit] * dirs_world[hit], axis=-1)
    intensity = np.clip(incidence, 0.0, 1.0)
    return PointCloudFrame(t0=t0, xyz=xyz, intensity=intensity, dt=pattern.dt[hit])


# ---------------------------------------------------------------------------
# IMU synthesis
# ---------------------------------------------------------------------------

def synthesize_imu_sample(
    t: float,
    v_cmd: float,
    w_cmd: float,
    v_prev: float,
    tick_dt: float,
    model: ImuModel,
    rng: np.random.Generator | None = None,
) -> ImuSample:
    """One IMU reading for a planar chassis at sample time t.

    The body x axis is forward and y is left, so in the body frame the
    tangential acceleration is the one-tick backward difference of the
    commanded speed and the lateral component is the centripetal term v*w.
    Gravity reaction appears on +z. Noise and bias are added per axis; t
    must lie on the IMU clock grid.
    """
    k = round(t * model.rate)
    if abs(t - k / model.rate) > 1e-9:
        raise ValueError(f"t={t} is not on the {model.rate} Hz IMU grid")
    gyro = np.array([0.0, 0.0, w_cmd]) + np.asarray(model.gyro_bias, dtype=float)
    accel = np.array([(v_cmd - v_prev) / tick_dt, v_cmd * w_cmd, model.gravity])
    accel = accel + np.asarray(model.accel_bias, dtype=float)
    if rng is not None:
        if model.gyro_noise_sigma > 0.0:
            gyro = gyro + rng.normal(0.0, model.gyro_noise_sigma, size=3)
        if model.accel_noise_sigma > 0.0:
            accel = accel + rng.normal(0.0, model.accel_noise_sigma, size=3)
    return ImuSample(t=t, angular_velocity=gyro, specific_force=accel)
