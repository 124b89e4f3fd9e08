"""On-disk sequence bundles: recording and replay of simulation runs.

Bundle layout (one directory per run):

    manifest.json       counts, config echo, seed, tool version, SHA-256 per stream
    ground_truth.txt    TUM trajectory format: `t x y z qx qy qz qw`, one pose/line
    imu.csv             header `t,wx,wy,wz,ax,ay,az`, SI units
    clouds/%06d.bin     binary frames, little-endian:
                        magic `MSPC` | u32 version | u32 point count | f64 t0,
                        then per point f32 x, y, z, intensity, dt
    commands.log        optional, lines `t v w` (teleop/scripted command record)

Text numerics are written with 9 fractional digits and round-trip within
1e-9; cloud payloads are float32 and round-trip bitwise. Every file is
written to a temp name and renamed, so a finalized manifest implies a
complete bundle. The `clouds` stream hash is SHA-256 over the concatenated
frame files in index order.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .geometry import Pose, quat_multiply, quat_rotate

CLOUD_MAGIC = b"MSPC"
CLOUD_VERSION = 1
MANIFEST_VERSION = 1
_CLOUD_HEADER = struct.Struct("<4sIId")
_NUM = "%.9f"


class BundleError(RuntimeError):
    pass


def _fmt_row(values) -> str:
    return " ".join(_NUM % v for v in values)


def encode_cloud(t0: float, xyz: np.ndarray, intensity: np.ndarray, dt: np.ndarray) -> bytes:
    n = len(xyz)
    rec = np.empty((n, 5), dtype="<f4")
    rec[:, 0:3] = xyz
    rec[:, 3] = intensity
    rec[:, 4] = dt
    return _CLOUD_HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, n, t0) + rec.tobytes()


def decode_cloud(blob: bytes, what: str = "cloud"):
    if len(blob) < _CLOUD_HEADER.size:
        raise BundleError(f"{what}: truncated header ({len(blob)} bytes)")
    magic, version, n, t0 = _CLOUD_HEADER.unpack_from(blob)
    if magic != CLOUD_MAGIC:
        raise BundleError(f"{what}: bad magic {magic!r}")
    if version != CLOUD_VERSION:
        warnings.warn(f"{what}: format version {version} != {CLOUD_VERSION}, reading best-effort")
    need = _CLOUD_HEADER.size + 20 * n
    if len(blob) < need:
        raise BundleError(f"{what}: truncated payload ({len(blob)} of {need} bytes)")
    rec = np.frombuffer(blob, dtype="<f4", count=5 * n, offset=_CLOUD_HEADER.size).reshape(n, 5)
    return t0, rec[:, 0:3], rec[:, 3], rec[:, 4]


class _HashingFile:
    """Buffered text sink that feeds a SHA-256 as it writes."""

    def __init__(self, path: Path):
        self.path = path
        self.tmp = path.with_name(path.name + ".tmp")
        self.fh = open(self.tmp, "w", newline="\n")
        self.sha = hashlib.sha256()
        self.rows = 0

    def write_line(self, line: str):
        data = line + "\n"
        self.fh.write(data)
        self.sha.update(data.encode())
        self.rows += 1

    def finalize(self) -> str:
        self.fh.close()
        os.replace(self.tmp, self.path)
        return self.sha.hexdigest()

    def abort(self):
        self.fh.close()
        self.tmp.unlink(missing_ok=True)


class BundleWriter:
    """Single-owner, append-only writer; call finalize() exactly once."""

    def __init__(self, out_dir: str | Path, config: dict, seed: int):
        self.dir = Path(out_dir)
        if self.dir.exists() and any(self.dir.iterdir()):
            raise BundleError(f"refusing to write into non-empty directory {self.dir}")
        (self.dir / "clouds").mkdir(parents=True, exist_ok=True)
        self.config = config
        self.seed = seed
        self._gt = _HashingFile(self.dir / "ground_truth.txt")
        self._imu = _HashingFile(self.dir / "imu.csv")
        self._imu.write_line("t,wx,wy,wz,ax,ay,az")
        self._cmd: _HashingFile | None = None
        self._cloud_sha = hashlib.sha256()
        self.frame_count = 0
        self.gt_count = 0
        self.imu_count = 0
        self.cmd_count = 0

    def append_ground_truth(self, t: float, pose: Pose):
        x, y, z = pose.position
        w, qx, qy, qz = pose.orientation
        self._gt.write_line(_fmt_row((t, x, y, z, qx, qy, qz, w)))
        self.gt_count += 1

    def append_imu(self, t: float, angular_velocity, specific_force):
        row = (t, *angular_velocity, *specific_force)
        self._imu.write_line(",".join(_NUM % v for v in row))
        self.imu_count += 1

    def append_cloud(self, t0: float, xyz, intensity, dt):
        blob = encode_cloud(t0, xyz, intensity, dt)
        path = self.dir / "clouds" / f"{self.frame_count:06d}.bin"
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
        self._cloud_sha.update(blob)
        self.frame_count += 1

    def append_command(self, t: float, v: float, w: float):
        if self._cmd is None:
            self._cmd = _HashingFile(self.dir / "commands.log")
        self._cmd.write_line(_fmt_row((t, v, w)))
        self.cmd_count += 1

    def finalize(self) -> dict:
        hashes = {
            "ground_truth": self._gt.finalize(),
            "imu": self._imu.finalize(),
            "clouds": self._cloud_sha.hexdigest(),
        }
        if self._cmd is not None:
            hashes["commands"] = self._cmd.finalize()
        manifest = {
            "format_version": MANIFEST_VERSION,
            "tool": {"name": "lidarsim", "version": __version__},
            "seed": self.seed,
            "config": self.config,
            "counts": {
                "ground_truth": self.gt_count,
                "imu": self.imu_count,
                "frames": self.frame_count,
                "commands": self.cmd_count,
            },
            "hashes": hashes,
        }
        tmp = self.dir / "manifest.json.tmp"
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.dir / "manifest.json")
        return manifest

    def abort(self):
        self._gt.abort()
        self._imu.abort()
        if self._cmd is not None:
            self._cmd.abort()


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

@dataclass
class SequenceBundle:
    dir: Path
    manifest: dict
    gt_t: np.ndarray          # (N,)
    gt_pos: np.ndarray        # (N, 3)
    gt_quat: np.ndarray       # (N, 4) wxyz
    imu_t: np.ndarray         # (M,)
    imu_gyro: np.ndarray      # (M, 3)
    imu_accel: np.ndarray     # (M, 3)
    commands: np.ndarray | None = None  # (K, 3) t, v, w
    _frames: dict = field(default_factory=dict, repr=False)

    @property
    def frame_count(self) -> int:
        return int(self.manifest["counts"]["frames"])

    def cloud_path(self, index: int) -> Path:
        return self.dir / "clouds" / f"{index:06d}.bin"

    def read_cloud(self, index: int):
        """Load frame `index` lazily: returns (t0, xyz, intensity, dt)."""
        if index < 0 or index >= self.frame_count:
            raise BundleError(f"frame {index} out of range [0, {self.frame_count})")
        with open(self.cloud_path(index), "rb") as fh:
            return decode_cloud(fh.read(), what=f"frame {index:06d}")


def _read_tum(path: Path):
    ts, pos, quat = [], [], []
    with open(path) as fh:
        for row, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise BundleError(f"{path}:{row}: expected 8 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise BundleError(f"{path}:{row}: {exc}") from None
            ts.append(vals[0])
            pos.append(vals[1:4])
            quat.append([vals[7], vals[4], vals[5], vals[6]])  # qx qy qz qw -> wxyz
    return np.asarray(ts), np.asarray(pos).reshape(-1, 3), np.asarray(quat).reshape(-1, 4)


def _read_imu_csv(path: Path):
    ts, gyro, accel = [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "t,wx,wy,wz,ax,ay,az":
            warnings.warn(f"{path}: unexpected header {header!r}, reading best-effort")
        for row, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise BundleError(f"{path}:{row}: expected 7 fields, got {len(parts)}")
            vals = [float(p) for p in parts]
            ts.append(vals[0])
            gyro.append(vals[1:4])
            accel.append(vals[4:7])
    return np.asarray(ts), np.asarray(gyro).reshape(-1, 3), np.asarray(accel).reshape(-1, 3)


def _hash_file(path: Path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def read_bundle(bundle_dir: str | Path, check_hashes: bool = True) -> SequenceBundle:
    """Load a bundle directory, verifying counts and (optionally) hashes."""
    d = Path(bundle_dir)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise BundleError(f"no manifest.json in {d}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_VERSION:
        warnings.warn(
            f"manifest format_version {manifest.get('format_version')} != "
            f"{MANIFEST_VERSION}, reading best-effort"
        )
    counts = manifest.get("counts", {})

    gt_t, gt_pos, gt_quat = _read_tum(d / "ground_truth.txt")
    imu_t, imu_gyro, imu_accel = _read_imu_csv(d / "imu.csv")
    commands = None
    if (d / "commands.log").exists():
        rows = []
        with open(d / "commands.log") as fh:
            for row, line in enumerate(fh, start=1):
                parts = line.split()
                if len(parts) != 3:
                    raise BundleError(f"commands.log:{row}: expected 3 fields")
                rows.append([float(p) for p in parts])
        commands = np.asarray(rows).reshape(-1, 3)

    for name, got in (("ground_truth", len(gt_t)), ("imu", len(imu_t))):
        want = counts.get(name)
        if want is not None and want != got:
            raise BundleError(f"{name} count mismatch: manifest says {want}, file has {got}")
    n_frames = counts.get("frames", 0)
    cloud_files = sorted((d / "clouds").glob("*.bin")) if (d / "clouds").exists() else []
    if len(cloud_files) != n_frames:
        raise BundleError(f"frame count mismatch: manifest says {n_frames}, found {len(cloud_files)}")

    for stream in ("ground_truth", "imu"):
        if np.any(np.diff({"ground_truth": gt_t, "imu": imu_t}[stream]) <= 0):
            raise BundleError(f"{stream}: timestamps not strictly increasing")

    if check_hashes:
        hashes = manifest.get("hashes", {})
        actual = {
            "ground_truth": _hash_file(d / "ground_truth.txt"),
            "imu": _hash_file(d / "imu.csv"),
        }
        sha = hashlib.sha256()
        for p in cloud_files:
            sha.update(p.read_bytes())
        actual["clouds"] = sha.hexdigest()
        if commands is not None:
            actual["commands"] = _hash_file(d / "commands.log")
        for name, want in hashes.items():
            if name in actual and actual[name] != want:
                raise BundleError(f"{name}: content hash mismatch (bundle corrupted?)")

    return SequenceBundle(
        dir=d,
        manifest=manifest,
        gt_t=gt_t,
        gt_pos=gt_pos,
        gt_quat=gt_quat,
        imu_t=imu_t,
        imu_gyro=imu_gyro,
        imu_accel=imu_accel,
        commands=commands,
    )


def bundle_sensor_mount(bundle: SequenceBundle) -> Pose:
    """Sensor mount transform recorded in the manifest config (identity if absent)."""
    lidar_cfg = bundle.manifest.get("config", {}).get("lidar", {})
    xyz = lidar_cfg.get("mount_xyz", (0.0, 0.0, 0.0))
    rpy = lidar_cfg.get("mount_rpy_deg", (0.0, 0.0, 0.0))
    return Pose.from_xyz_rpy(xyz, np.radians(rpy))


def accumulate_world_cloud(
    bundle: SequenceBundle,
    stride: int = 1,
    max_points: int | None = None,
    mount: Pose | None = None,
) -> np.ndarray:
    """Transform every recorded frame into the world frame and stack them.

    Points are sensor-frame; each is lifted through the mount transform and
    the ground-truth body pose nearest to its emission time. With noise-free
    recordings this reconstructs near-exact scene-surface samples.
    """
    if mount is None:
        mount = bundle_sensor_mount(bundle)
    out = []
    for i in range(0, bundle.frame_count, stride):
        t0, xyz, _inten, dts = bundle.read_cloud(i)
        times = t0 + dts.astype(float)
        idx = np.clip(np.searchsorted(bundle.gt_t, times), 0, len(bundle.gt_t) - 1)
        # choose the nearer of the two bracketing ground-truth samples
        lo = np.clip(idx - 1, 0, len(bundle.gt_t) - 1)
        use_lo = np.abs(bundle.gt_t[lo] - times) < np.abs(bundle.gt_t[idx] - times)
        idx = np.where(use_lo, lo, idx)
        sensor_pos = bundle.gt_pos[idx] + quat_rotate(bundle.gt_quat[idx], mount.position)
        sensor_quat = quat_multiply(bundle.gt_quat[idx], mount.orientation)
        pts = quat_rotate(sensor_quat, xyz.astype(float)) + sensor_pos
        out.append(pts)
    cloud = np.concatenate(out, axis=0) if out else np.zeros((0, 3))
    if max_points is not None and len(cloud) > max_points:
        sel = np.linspace(0, len(cloud) - 1, max_points).astype(int)
        cloud = cloud[sel]
    return cloud
