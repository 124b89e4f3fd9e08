"""Deterministic fixed-step simulation loop.

One tick = one base step (default 5 ms, the 200 Hz master clock). Per tick
the order is fixed: apply control, step kinematics, emit ground truth, then
sensors (IMU on its grid, LIDAR when a frame window closes). Simulated
output is a pure function of (config, seed, command log); real-time pacing
only affects delivery timing of telemetry, never content.
"""

from __future__ import annotations

import json
import math
import queue
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .control import (
    SplinePath,
    TeleopConfig,
    TrackerState,
    TrackingTimeout,
    build_spline,
    load_path_points,
    pure_pursuit_step,
    teleop_update,
)
from .geometry import Pose, quat_from_yaw
from .kinematics import (
    ChassisParams,
    PlanarTwist,
    RobotState,
    lift_to_pose3_many,
    propagate_planar,
    step,
)
from .scene import Scene, load_scene, resolve_scene_path
from .sensors import (
    ImuModel,
    LidarModel,
    frame_rng,
    imu_rng,
    lidar_model,
    mechanical_pattern,
    simulate_lidar_frame,
    synthesize_imu_sample,
)
from .store import BundleWriter


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: str = "room"
    duration: float = 10.0
    seed: int = 0
    base_dt: float = 0.005
    mode: str = "teleop"                    # teleop | track | scripted
    lidar: LidarModel = field(default_factory=lambda: lidar_model("avia"))
    imu: ImuModel = field(default_factory=ImuModel)
    chassis: ChassisParams = field(default_factory=ChassisParams)
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    tracker: TrackerState = field(default_factory=TrackerState)
    track_timeout: float = 600.0
    path_points: np.ndarray | None = None   # track mode waypoints
    commands: np.ndarray | None = None      # scripted mode (t, v, w) rows
    start_pose: tuple = (0.0, 0.0, 0.0)     # x, y, heading
    z0: float = 0.30                        # body height above ground
    out_dir: str | None = None
    mover_mode: str = "per_point"           # or per_frame (coarser, faster)
    workers: int = 1
    realtime: bool = False
    start_paused: bool = False
    trace_events: bool = False

    def validate(self):
        if self.base_dt <= 0 or self.base_dt > 0.1:
            raise ConfigError(f"base_dt must be in (0, 0.1], got {self.base_dt}")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for label, period in (("LIDAR frame", self.lidar.frame_period), ("IMU", 1.0 / self.imu.rate)):
            ratio = period / self.base_dt
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError(
                    f"base_dt {self.base_dt} must divide the {label} period {period} exactly"
                )
        if self.mode not in ("teleop", "track", "scripted"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "track" and (self.path_points is None or len(self.path_points) < 2):
            raise ConfigError("track mode needs at least 2 path waypoints")
        if self.mode == "scripted" and self.commands is None:
            raise ConfigError("scripted mode needs a command log")
        if self.mover_mode not in ("per_point", "per_frame"):
            raise ConfigError(f"unknown mover_mode {self.mover_mode!r}")

    def to_dict(self) -> dict:
        """Plain-type echo of the config (embedded in bundle manifests)."""
        mount = self.lidar.mount
        return {
            "scene": str(self.scene),
            "duration": self.duration,
            "seed": self.seed,
            "base_dt": self.base_dt,
            "mode": self.mode,
            "lidar": {
                "model": self.lidar.name,
                "pattern_kind": self.lidar.pattern_kind,
                "fov_h": self.lidar.fov_h,
                "fov_v": self.lidar.fov_v,
                "point_rate": self.lidar.point_rate,
                "max_range": self.lidar.max_range,
                "frame_rate": self.lidar.frame_rate,
                "range_noise_sigma": self.lidar.range_noise_sigma,
                "channels": self.lidar.channels,
                "elev_min": self.lidar.elev_min,
                "elev_max": self.lidar.elev_max,
                "prism_f1": self.lidar.prism_f1,
                "prism_f2": self.lidar.prism_f2,
                "prism_phi0": self.lidar.prism_phi0,
                "mount_xyz": [float(v) for v in mount.position],
                "mount_quat_wxyz": [float(v) for v in mount.orientation],
            },
            "imu": {
                "rate": self.imu.rate,
                "gyro_noise_sigma": self.imu.gyro_noise_sigma,
                "accel_noise_sigma": self.imu.accel_noise_sigma,
                "gyro_bias": list(self.imu.gyro_bias),
                "accel_bias": list(self.imu.accel_bias),
                "gravity": self.imu.gravity,
            },
            "chassis": {
                "wheel_radius": self.chassis.wheel_radius,
                "track_width": self.chassis.track_width,
                "max_wheel_speed": self.chassis.max_wheel_speed,
            },
            "tracker": {
                "cruise_speed": self.tracker.cruise_speed,
                "switch_threshold": self.tracker.switch_threshold,
                "heading_gain": self.tracker.heading_gain,
                "w_max": self.tracker.w_max,
                "timeout": self.track_timeout,
            },
            "path_points": None if self.path_points is None else np.asarray(self.path_points).tolist(),
            "start_pose": list(self.start_pose),
            "z0": self.z0,
            "mover_mode": self.mover_mode,
        }


def load_run_config(path: str | Path, **overrides) -> RunConfig:
    """Read a JSON run-config file; keyword overrides win over file values."""
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(doc, base_dir=path.parent, **overrides)


def config_from_dict(doc: dict, base_dir: Path | None = None, **overrides) -> RunConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    kwargs: dict = {}
    for key in ("scene", "duration", "seed", "base_dt", "mode", "start_pose",
                "z0", "mover_mode", "workers", "trace_events"):
        if key in doc:
            kwargs[key] = doc[key]
    if "lidar" in doc:
        lc = dict(doc["lidar"])
        name = lc.pop("model", "avia")
        lc.pop("pattern_kind", None)
        lc.pop("mount_quat_wxyz", None)
        kwargs["lidar"] = lidar_model(name, **lc)
    if "imu" in doc:
        kwargs["imu"] = ImuModel(**doc["imu"])
    if "chassis" in doc:
        kwargs["chassis"] = ChassisParams(**doc["chassis"])
    if "teleop" in doc:
        tc = dict(doc["teleop"])
        if "key_map" in tc:
            tc["key_map"] = {k: tuple(v) for k, v in tc["key_map"].items()}
        kwargs["teleop"] = TeleopConfig(**tc)
    if "tracker" in doc:
        tr = dict(doc["tracker"])
        kwargs["track_timeout"] = tr.pop("timeout", 600.0)
        kwargs["tracker"] = TrackerState(**tr)
    if "path" in doc:
        kwargs["path_points"] = np.asarray(doc["path"], dtype=float)
    elif "path_file" in doc:
        kwargs["path_points"] = load_path_points(base_dir / doc["path_file"])
    if "command_file" in doc:
        kwargs["commands"] = _read_command_log(base_dir / doc["command_file"])
    if "start_pose" in kwargs:
        kwargs["start_pose"] = tuple(float(v) for v in kwargs["start_pose"])
    kwargs.update(overrides)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def _read_command_log(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: command lines are `t v w`")
            rows.append([float(p) for p in parts])
    if not rows:
        raise ConfigError(f"{path}: empty command log")
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# intra-frame pose track
# ---------------------------------------------------------------------------

class PoseTrack:
    """Per-tick state history for exact pose queries inside a frame window.

    Holds (tick start pose, twist during the tick) rows; a query at time t
    arc-propagates the covering tick's start state by the remaining fraction,
    which matches kinematics.step exactly for piecewise-constant twists.
    """

    def __init__(self, base_dt: float, mount: Pose, z0: float):
        self.base_dt = base_dt
        self.mount = mount
        self.z0 = z0
        self.start_index = 0
        self._x: list[float] = []
        self._y: list[float] = []
        self._theta: list[float] = []
        self._v: list[float] = []
        self._w: list[float] = []

    def append(self, x: float, y: float, theta: float, v: float, w: float):
        self._x.append(x)
        self._y.append(y)
        self._theta.append(theta)
        self._v.append(v)
        self._w.append(w)

    def trim(self, keep_from_index: int):
        """Drop tick rows before the given global tick index."""
        drop = keep_from_index - self.start_index
        if drop <= 0:
            return
        drop = min(drop, len(self._x))
        for arr in (self._x, self._y, self._theta, self._v, self._w):
            del arr[:drop]
        self.start_index += drop

    @property
    def window(self) -> tuple[float, float]:
        lo = self.start_index * self.base_dt
        return lo, lo + len(self._x) * self.base_dt

    def _locate(self, times: np.ndarray):
        lo, hi = self.window
        if np.any(times < lo - 1e-9) or np.any(times > hi + 1e-9):
            raise ValueError(f"query times outside pose-track window [{lo}, {hi}]")
        rel = np.floor(times / self.base_dt + 1e-12).astype(int) - self.start_index
        rel = np.clip(rel, 0, len(self._x) - 1)
        tau = times - (rel + self.start_index) * self.base_dt
        return rel, tau

    def planar_at(self, times: np.ndarray):
        times = np.asarray(times, dtype=float)
        rel, tau = self._locate(times)
        x = np.asarray(self._x)[rel]
        y = np.asarray(self._y)[rel]
        th = np.asarray(self._theta)[rel]
        v = np.asarray(self._v)[rel]
        w = np.asarray(self._w)[rel]
        return propagate_planar(x, y, th, v, w, tau)

    def sensor_pose_many(self, times: np.ndarray):
        x, y, th = self.planar_at(times)
        return lift_to_pose3_many(x, y, th, self.mount, self.z0)

    def sensor_pose_at(self, t: float) -> Pose:
        """Exact sensor pose at one instant inside the current window."""
        pos, quat = self.sensor_pose_many(np.array([float(t)]))
        return Pose(pos[0], quat[0])

    def body_pose_at(self, t: float) -> Pose:
        x, y, th = self.planar_at(np.array([float(t)]))
        return Pose(np.array([x[0], y[0], self.z0]), quat_from_yaw(th[0]))


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class TeleopController:
    """Holds the commanded twist; key events mutate it between ticks."""

    def __init__(self, cfg: TeleopConfig):
        self.cfg = cfg
        self.twist = PlanarTwist()

    def apply_key(self, key: str) -> bool:
        self.twist, applied = teleop_update(self.twist, key, self.cfg)
        return applied

    def set_twist(self, v: float, w: float):
        self.twist = PlanarTwist(
            min(max(v, -self.cfg.v_max), self.cfg.v_max),
            min(max(w, -self.cfg.w_max), self.cfg.w_max),
        )

    def command(self, state: RobotState, t: float) -> PlanarTwist | None:
        return self.twist


class TrackController:
    """Pure-pursuit follower over a spline path; logs cross-track error."""

    def __init__(self, path: SplinePath, tracker: TrackerState, timeout: float):
        self.path = path
        self.tracker = tracker
        self.timeout = timeout
        self.t_start: float | None = None
        self._tree = cKDTree(path.samples)
        self.cross_track: list[float] = []

    def command(self, state: RobotState, t: float) -> PlanarTwist | None:
        if self.tracker.finished:
            return None
        if self.t_start is None:
            self.t_start = t
        if t - self.t_start > self.timeout:
            raise TrackingTimeout(f"tracker not finished after {self.timeout} simulated seconds")
        cmd, self.tracker = pure_pursuit_step(state, self.path, self.tracker)
        if self.tracker.finished:
            return None
        self.cross_track.append(float(self._tree.query((state.x, state.y))[0]))
        return cmd


class ScriptController:
    """Replays a recorded (t, v, w) command log; twists hold between rows."""

    def __init__(self, commands: np.ndarray):
        self.commands = commands
        self.next = 0
        self.twist = PlanarTwist()

    def command(self, state: RobotState, t: float) -> PlanarTwist | None:
        while self.next < len(self.commands) and self.commands[self.next, 0] <= t + 1e-9:
            self.twist = PlanarTwist(self.commands[self.next, 1], self.commands[self.next, 2])
            self.next += 1
        return self.twist


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    ticks: int
    sim_time: float
    gt_count: int
    imu_count: int
    frame_count: int
    distance: float
    path_length: float
    out_dir: str | None
    manifest: dict | None
    finished_early: bool = False
    cross_track: np.ndarray | None = None
    event_log: list | None = None


def _make_controller(cfg: RunConfig):
    if cfg.mode == "track":
        path = build_spline(cfg.path_points)
        return TrackController(path, cfg.tracker, cfg.track_timeout)
    if cfg.mode == "scripted":
        return ScriptController(cfg.commands)
    return TeleopController(cfg.teleop)


def _scene_summary(scene: Scene) -> dict:
    """2D footprints for UI rendering: per object id, kind, outline points."""
    objs = []
    for ob in scene.objects:
        entry = {"id": ob.id, "kind": ob.kind, "mover": ob.motion is not None}
        pos = ob.pose.position
        entry["xy"] = [float(pos[0]), float(pos[1])]
        entry["yaw"] = float(ob.pose.yaw())
        prim = ob.primitive
        if ob.kind == "box":
            entry["half_extents"] = [float(v) for v in prim.half_extents[:2]]
        elif ob.kind in ("sphere", "cylinder"):
            entry["radius"] = float(prim.radius)
        elif ob.kind == "mesh":
            lo, hi = prim.aabb()
            entry["half_extents"] = [float((hi[0] - lo[0]) / 2), float((hi[1] - lo[1]) / 2)]
        objs.append(entry)
    return {"name": scene.name, "objects": objs}


class Engine:
    """Owns all mutable simulation state; run() drives it to completion.

    Interactive sessions feed `command_bus` (a queue.Queue of dict messages)
    and receive telemetry through the `telemetry` callable; both are optional
    and absent in batch runs.
    """

    def __init__(self, cfg: RunConfig, command_bus=None, telemetry=None, stop_event=None):
        cfg.validate()
        self.cfg = cfg
        self.bus = command_bus
        self.telemetry = telemetry
        self.stop_event = stop_event
        self.scene = load_scene(resolve_scene_path(cfg.scene))
        self.state = RobotState(
            x=cfg.start_pose[0], y=cfg.start_pose[1], theta=cfg.start_pose[2]
        )
        self.controller = _make_controller(cfg)
        self.paused = cfg.start_paused
        self.writer: BundleWriter | None = None
        self.rec_tick0 = 0
        self.recording = False
        self._arm_record = False
        self._last_cmd = PlanarTwist()
        self._mech_pattern = (
            mechanical_pattern(cfg.lidar) if cfg.lidar.pattern_kind == "mechanical" else None
        )

    # -- telemetry helpers ---------------------------------------------------

    def _emit(self, kind: str, payload):
        if self.telemetry is not None:
            self.telemetry(kind, payload)

    # -- interactive command handling -----------------------------------------

    def _drain_bus(self, t: float):
        if self.bus is None:
            return
        while True:
            try:
                msg = self.bus.get_nowait()
            except queue.Empty:
                break
            self._apply_message(msg, t)

    def _apply_message(self, msg: dict, t: float):
        kind = msg.get("kind")
        if kind == "key":
            if isinstance(self.controller, TeleopController):
                self.controller.apply_key(str(msg.get("key", "")))
            else:
                self.controller = TeleopController(self.cfg.teleop)
                self.controller.apply_key(str(msg.get("key", "")))
        elif kind == "twist":
            if not isinstance(self.controller, TeleopController):
                self.controller = TeleopController(self.cfg.teleop)
            self.controller.set_twist(float(msg.get("v", 0.0)), float(msg.get("w", 0.0)))
        elif kind == "waypoints":
            pts = np.asarray(msg.get("points", []), dtype=float)
            try:
                path = build_spline(pts)
            except ValueError as exc:
                self._emit("error", {"code": "bad_waypoints", "message": str(exc)})
                return
            self.controller = TrackController(path, self.cfg.tracker, self.cfg.track_timeout)
            self._emit("path", {"samples": path.samples})
        elif kind == "run":
            action = msg.get("action")
            if action == "start":
                self.paused = False
            elif action == "pause":
                self.paused = True
            elif action == "reset":
                if self.recording:
                    self._emit("error", {"code": "recording", "message": "cannot reset while recording"})
                else:
                    self.state = RobotState(
                        x=self.cfg.start_pose[0],
                        y=self.cfg.start_pose[1],
                        theta=self.cfg.start_pose[2],
                    )
                    self.controller = _make_controller(self.cfg)
            elif action == "record":
                if self.recording:
                    self._finalize_writer()
                elif self.cfg.out_dir is None:
                    self._emit("error", {"code": "no_out_dir", "message": "no output directory configured"})
                else:
                    self._arm_record = True

    def _finalize_writer(self):
        manifest = None
        if self.writer is not None:
            manifest = self.writer.finalize()
        self.recording = False
        self.writer = None
        return manifest

    # -- main loop -------------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.cfg
        dt = cfg.base_dt
        ticks_per_frame = round(cfg.lidar.frame_period / dt)
        imu_every = round(1.0 / (cfg.imu.rate * dt))
        n_ticks = None if math.isinf(cfg.duration) else round(cfg.duration / dt)

        track = PoseTrack(dt, cfg.lidar.mount, cfg.z0)
        if cfg.out_dir is not None and not cfg.realtime:
            self.writer = BundleWriter(cfg.out_dir, cfg.to_dict(), cfg.seed)
            self.recording = True
        rng_imu = imu_rng(cfg.seed)
        events = [] if cfg.trace_events else None
        manifest = None
        frame_index = 0
        distance = 0.0
        finished_early = False
        prev_v = self.state.twist.v
        last_logged_cmd = None
        state_every = max(1, round(1.0 / (20.0 * dt)))  # 20 Hz state telemetry

        self._emit("scene_summary", _scene_summary(self.scene))
        if isinstance(self.controller, TrackController):
            self._emit("path", {"samples": self.controller.path.samples})
        wall0 = time.monotonic()

        k = 0
        while n_ticks is None or k < n_ticks:
            if self.stop_event is not None and self.stop_event.is_set():
                break
            t_k = k * dt
            self._drain_bus(t_k)
            if self.paused:
                self._emit("state", self._state_payload(t_k))
                time.sleep(0.05)  # hold the 20 Hz state cadence while paused
                wall0 = time.monotonic() - t_k  # re-anchor pacing
                continue

            # control
            try:
                cmd = self.controller.command(self.state, t_k)
            except TrackingTimeout:
                self._finalize_writer()
                raise
            if cmd is None:
                finished_early = True
                break
            if events is not None:
                events.append(("control", k))
            if self.writer is not None and cfg.mode != "track":
                if last_logged_cmd is None or cmd != last_logged_cmd:
                    self.writer.append_command(t_k - self.rec_tick0 * dt, cmd.v, cmd.w)
                    last_logged_cmd = cmd

            # kinematics
            track.append(self.state.x, self.state.y, self.state.theta, cmd.v, cmd.w)
            prev_cmd_v = self._last_cmd.v
            self.state = step(self.state, cmd, dt)
            self.state = replace(self.state, t=(k + 1) * dt)  # keep t on the exact grid
            distance += abs(cmd.v) * dt
            self._last_cmd = cmd
            if events is not None:
                events.append(("kinematics", k))

            t_next = (k + 1) * dt

            # ground truth
            if self.writer is not None:
                pos, quat = lift_to_pose3_many(
                    np.array([self.state.x]), np.array([self.state.y]),
                    np.array([self.state.theta]), Pose.identity(), cfg.z0,
                )
                self.writer.append_ground_truth(t_next - self.rec_tick0 * dt, Pose(pos[0], quat[0]))
            if events is not None:
                events.append(("ground_truth", k))
            if (k + 1) % state_every == 0:
                self._emit("state", self._state_payload(t_next))

            # sensors: IMU on its grid
            if (k + 1) % imu_every == 0:
                sample = synthesize_imu_sample(
                    t_next, cmd.v, cmd.w, prev_cmd_v, dt, cfg.imu, rng_imu
                )
                if self.writer is not None:
                    self.writer.append_imu(
                        t_next - self.rec_tick0 * dt, sample.angular_velocity, sample.specific_force
                    )
                if events is not None:
                    events.append(("imu", k))

            # sensors: LIDAR when the frame window [t0, t0+T) has fully elapsed
            if (k + 1) % ticks_per_frame == 0:
                if self._arm_record and self.writer is None:
                    # recording starts aligned to the next frame window
                    self.writer = BundleWriter(cfg.out_dir, cfg.to_dict(), cfg.seed)
                    self.recording = True
                    self._arm_record = False
                    self.rec_tick0 = k + 1
                    frame_index = 0
                    last_logged_cmd = None
                elif self.writer is not None or self.telemetry is not None:
                    t0 = (k + 1 - ticks_per_frame) * dt
                    frame = simulate_lidar_frame(
                        self.scene,
                        track,
                        cfg.lidar,
                        t0,
                        frame_rng(cfg.seed, frame_index),
                        frame_index=frame_index,
                        pattern=self._mech_pattern,
                        workers=cfg.workers,
                        mover_mode=cfg.mover_mode,
                    )
                    if self.writer is not None:
                        self.writer.append_cloud(
                            frame.t0 - self.rec_tick0 * dt, frame.xyz, frame.intensity, frame.dt
                        )
                    if self.telemetry is not None:
                        pose = track.sensor_pose_at(t0)
                        self._emit("cloud", {
                            "frame": frame,
                            "pose_xyz": [float(v) for v in pose.position],
                            "pose_quat_wxyz": [float(v) for v in pose.orientation],
                        })
                    frame_index += 1
                    if events is not None:
                        events.append(("lidar", k))
                track.trim(k + 1)

            if cfg.realtime:
                lag = (wall0 + t_next) - time.monotonic()
                if lag > 0:
                    time.sleep(lag)
            k += 1

        manifest = self._finalize_writer()
        result = RunResult(
            ticks=k,
            sim_time=k * dt,
            gt_count=manifest["counts"]["ground_truth"] if manifest else 0,
            imu_count=manifest["counts"]["imu"] if manifest else 0,
            frame_count=manifest["counts"]["frames"] if manifest else frame_index,
            distance=distance,
            path_length=distance,
            out_dir=cfg.out_dir,
            manifest=manifest,
            finished_early=finished_early,
            cross_track=(
                np.asarray(self.controller.cross_track)
                if isinstance(self.controller, TrackController)
                else None
            ),
            event_log=events,
        )
        return result

    def _state_payload(self, t: float) -> dict:
        tracker = None
        if isinstance(self.controller, TrackController):
            tracker = {
                "target_index": self.controller.tracker.target_index,
                "finished": self.controller.tracker.finished,
            }
        return {
            "t": t,
            "x": self.state.x,
            "y": self.state.y,
            "theta": self.state.theta,
            "v": self.state.twist.v,
            "w": self.state.twist.w,
            "paused": self.paused,
            "recording": self.recording,
            "tracker": tracker,
        }


def run(cfg: RunConfig, command_bus=None, telemetry=None, stop_event=None) -> RunResult:
    """Run a simulation to completion and return its summary."""
    return Engine(cfg, command_bus=command_bus, telemetry=telemetry, stop_event=stop_event).run()
