"""Scene description, scripted movers, and ray-geometry intersection.

A scene is an ordered collection of objects (plane / box / cylinder / sphere /
triangle mesh), each placed by a world pose and optionally animated by a
waypoint motion script. Static finite geometry is indexed by a BVH; infinite
planes and scripted movers are intersected exhaustively (movers are expected
to be few). `SceneSnapshot` freezes mover poses at one instant and is
immutable, so `raycast` may be called concurrently from many workers.

Scene files are JSON (`*.scene.json`): `name` plus `objects[]`, each with
`id`, `kind`, `pose {xyz, rpy_deg}`, kind-specific size fields
(`half_extents`, `radius`, `height`, `mesh_file`) and an optional
`motion {loop, waypoints[{t, xyz, rpy_deg}]}`. Mesh files are a Wavefront
OBJ subset: `v` and triangular `f` lines only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Pose,
    quat_conjugate,
    quat_rotate,
    slerp_many,
    quat_slerp,
)

_T_MIN = 1e-9  # hits closer than this are treated as self-intersections
_DEG = math.pi / 180.0

KINDS = ("plane", "box", "cylinder", "sphere", "mesh")


class SceneError(ValueError):
    """Scene file failed to parse or violates a structural invariant."""


# ---------------------------------------------------------------------------
# geometry primitives (local-frame, vectorized over rays)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    half_extents: np.ndarray  # (3,) m

    def intersect(self, o, d):
        h = self.half_extents
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-h - o) * inv
            t2 = (h - o) * inv
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
        # IEEE inf handles rays parallel to a slab except origins exactly on
        # the slab plane (0 * inf = nan); resolve those by the inside test
        bad = np.isnan(t1) | np.isnan(t2)
        if bad.any():
            inside = np.abs(o) <= h
            lo = np.where(bad, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(bad, np.where(inside, np.inf, -np.inf), hi)
        tnear = lo.max(axis=-1)
        tfar = hi.min(axis=-1)
        t = np.where(tnear >= _T_MIN, tnear, tfar)
        ok = (tnear <= tfar) & (tfar >= _T_MIN) & np.isfinite(t) & (t >= _T_MIN)
        t = np.where(ok, t, np.inf)
        p = o + np.where(ok, t, 0.0)[..., None] * d  # miss normals are never read
        # face normal: axis with the largest |p|/h ratio
        ratio = np.abs(p) / h
        axis = np.argmax(ratio, axis=-1)
        n = np.zeros_like(p)
        rows = np.arange(p.shape[0])
        n[rows, axis] = np.sign(p[rows, axis])
        return t, n

    def aabb(self):
        return -self.half_extents, self.half_extents


@dataclass(frozen=True)
class Sphere:
    radius: float

    def intersect(self, o, d):
        b = np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - self.radius**2
        disc = b * b - c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 >= _T_MIN, t0, t1)
        ok &= t >= _T_MIN
        t = np.where(ok, t, np.inf)
        p = o + np.where(ok, t, 0.0)[..., None] * d
        n = p / self.radius
        return t, n

    def aabb(self):
        r = np.full(3, self.radius)
        return -r, r


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float  # axis along local z, centered: z in [-h/2, +h/2]

    def intersect(self, o, d):
        hz = 0.5 * self.height
        ox, oy, oz = o[..., 0], o[..., 1], o[..., 2]
        dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
        best = np.full(o.shape[0], np.inf)
        n = np.zeros_like(o)

        # lateral surface
        a = dx * dx + dy * dy
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - self.radius**2
        nz_a = a > 1e-18
        disc = b * b - a * c
        ok = nz_a & (disc >= 0.0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        a_safe = np.where(nz_a, a, 1.0)
        for root in ((-b - sq) / a_safe, (-b + sq) / a_safe):
            z = oz + root * dz
            valid = ok & (root >= _T_MIN) & (np.abs(z) <= hz) & (root < best)
            best = np.where(valid, root, best)
            if valid.any():
                p = o[valid] + root[valid, None] * d[valid]
                side = np.zeros_like(p)
                side[:, 0] = p[:, 0] / self.radius
                side[:, 1] = p[:, 1] / self.radius
                n[valid] = side

        # end caps
        nz_d = np.abs(dz) > 1e-15
        dz_safe = np.where(nz_d, dz, 1.0)
        for zcap, sign in ((-hz, -1.0), (hz, 1.0)):
            t = (zcap - oz) / dz_safe
            px = ox + t * dx
            py = oy + t * dy
            valid = nz_d & (t >= _T_MIN) & (px * px + py * py <= self.radius**2) & (t < best)
            best = np.where(valid, t, best)
            n[valid] = (0.0, 0.0, sign)

        return best, n

    def aabb(self):
        e = np.array([self.radius, self.radius, 0.5 * self.height])
        return -e, e


@dataclass(frozen=True)
class Plane:
    """Boundary surface of the local z<=0 half-space (infinite, normal +z)."""

    def intersect(self, o, d):
        dz = d[..., 2]
        nz = np.abs(dz) > 1e-15
        t = np.where(nz, -o[..., 2] / np.where(nz, dz, 1.0), np.inf)
        ok = nz & (t >= _T_MIN)
        t = np.where(ok, t, np.inf)
        n = np.zeros_like(o)
        n[:, 2] = 1.0
        return t, n

    def aabb(self):
        return None


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray   # (V, 3) local coordinates
    faces: np.ndarray      # (F, 3) int vertex indices

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]  # (F, 3, 3)

    def intersect(self, o, d):
        t, _tri, n = intersect_triangles_batch(o, d, self.triangles)
        return t, n

    def aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


Primitive = Box | Sphere | Cylinder | Plane | Mesh


def _cross(a, b):
    """Component cross product; avoids np.cross's axis bookkeeping overhead."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def intersect_triangles_batch(o, d, tris, chunk=4096):
    """Moller-Trumbore of N rays against F triangles (two-sided).

    Returns (t, tri_index, normal) per ray, with t=inf and index -1 on miss.
    Chunked over triangles to bound the N*F working set.
    """
    nrays = o.shape[0]
    best_t = np.full(nrays, np.inf)
    best_i = np.full(nrays, -1, dtype=np.int64)
    v0 = tris[:, 0]
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    for lo in range(0, tris.shape[0], chunk):
        hi = min(lo + chunk, tris.shape[0])
        a0, a1, a2 = v0[lo:hi], e1[lo:hi], e2[lo:hi]
        # shapes: rays (N,1,3) vs triangles (1,F,3)
        pvec = _cross(d[:, None, :], a2[None, :, :])
        det = np.sum(a1[None, :, :] * pvec, axis=-1)
        ok = np.abs(det) > 1e-12
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o[:, None, :] - a0[None, :, :]
        u = np.sum(tvec * pvec, axis=-1) * inv_det
        qvec = _cross(tvec, a1[None, :, :])
        v = np.sum(d[:, None, :] * qvec, axis=-1) * inv_det
        t = np.sum(a2[None, :, :] * qvec, axis=-1) * inv_det
        ok &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= _T_MIN)
        t = np.where(ok, t, np.inf)
        i = np.argmin(t, axis=1)
        tmin = t[np.arange(nrays), i]
        better = tmin < best_t
        best_t = np.where(better, tmin, best_t)
        best_i = np.where(better, i + lo, best_i)
    hit = best_i >= 0
    normals = np.zeros_like(o)
    if hit.any():
        fn = _cross(e1[best_i[hit]], e2[best_i[hit]])
        fn /= np.linalg.norm(fn, axis=-1, keepdims=True)
        normals[hit] = fn
    return best_t, best_i, normals


# ---------------------------------------------------------------------------
# motion scripts and objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotionScript:
    """Waypoint schedule: piecewise-linear position, slerp orientation."""

    times: np.ndarray       # (K,) strictly increasing, times[0] == 0
    positions: np.ndarray   # (K, 3)
    quats: np.ndarray       # (K, 4) wxyz
    loop: bool = False

    @property
    def period(self) -> float:
        return float(self.times[-1])

    def pose_at(self, t: float) -> Pose:
        t = float(t)
        if self.loop and self.period > 0.0:
            t = t % self.period
        else:
            t = min(max(t, 0.0), self.period)
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = max(0, min(k, len(self.times) - 2)) if len(self.times) > 1 else 0
        if len(self.times) == 1:
            return Pose(self.positions[0], self.quats[0])
        t0, t1 = self.times[k], self.times[k + 1]
        u = (t - t0) / (t1 - t0)
        pos = self.positions[k] + u * (self.positions[k + 1] - self.positions[k])
        return Pose(pos, quat_slerp(self.quats[k], self.quats[k + 1], u))

    def pose_at_many(self, ts: np.ndarray):
        """Vectorized pose_at: returns (positions (N,3), quats (N,4))."""
        ts = np.asarray(ts, dtype=float)
        if self.loop and self.period > 0.0:
            ts = np.mod(ts, self.period)
        else:
            ts = np.clip(ts, 0.0, self.period)
        if len(self.times) == 1:
            n = ts.shape[0]
            return np.tile(self.positions[0], (n, 1)), np.tile(self.quats[0], (n, 1))
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, len(self.times) - 2)
        t0 = self.times[k]
        t1 = self.times[k + 1]
        u = (ts - t0) / (t1 - t0)
        pos = self.positions[k] + u[:, None] * (self.positions[k + 1] - self.positions[k])
        quats = slerp_many(self.quats[k], self.quats[k + 1], u)
        return pos, quats


@dataclass(frozen=True)
class SceneObject:
    id: str
    kind: str
    primitive: Primitive
    pose: Pose
    motion: MotionScript | None = None


@dataclass(frozen=True)
class RayHit:
    range: float
    point: np.ndarray    # world frame, m
    normal: np.ndarray   # unit, flipped to face the ray (normal . dir <= 0)
    object_id: str


# ---------------------------------------------------------------------------
# BVH over static finite geometry
# ---------------------------------------------------------------------------

class _BVHNode:
    __slots__ = ("bounds", "left", "right", "entries")

    def __init__(self, bounds, left=None, right=None, entries=None):
        self.bounds = bounds  # (x0, y0, z0, x1, y1, z1) python floats
        self.left = left
        self.right = right
        self.entries = entries  # leaf entry index list, or None


class BVH:
    """Median-split bounding volume hierarchy over entry AABBs."""

    def __init__(self, bmin: np.ndarray, bmax: np.ndarray, leaf_size: int = 4):
        self.bmin = bmin
        self.bmax = bmax
        self.root = None
        if len(bmin):
            centroids = 0.5 * (bmin + bmax)
            self.root = self._build(np.arange(len(bmin)), centroids, leaf_size)

    def _build(self, idx, centroids, leaf_size):
        bmin = self.bmin[idx].min(axis=0)
        bmax = self.bmax[idx].max(axis=0)
        bounds = (*(float(v) for v in bmin), *(float(v) for v in bmax))
        if len(idx) <= leaf_size:
            return _BVHNode(bounds, entries=[int(i) for i in idx])
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.argsort(c[:, axis], kind="stable")
        half = len(idx) // 2
        left = self._build(idx[order[:half]], centroids, leaf_size)
        right = self._build(idx[order[half:]], centroids, leaf_size)
        return _BVHNode(bounds, left=left, right=right)

    def ray_candidates(self, origin, inv_dir, t_max):
        """Yield leaf entry indices whose AABB the ray enters before t_max.

        Node slab tests run in scalar python: for a handful of nodes per ray
        that is considerably cheaper than numpy round trips.
        """
        if self.root is None:
            return
        ox, oy, oz = origin
        ix, iy, iz = inv_dir
        stack = [self.root]
        while stack:
            node = stack.pop()
            x0, y0, z0, x1, y1, z1 = node.bounds
            ax = (x0 - ox) * ix
            bx = (x1 - ox) * ix
            if ax > bx:
                ax, bx = bx, ax
            ay = (y0 - oy) * iy
            by = (y1 - oy) * iy
            if ay > by:
                ay, by = by, ay
            az = (z0 - oz) * iz
            bz = (z1 - oz) * iz
            if az > bz:
                az, bz = bz, az
            tnear = max(ax, ay, az)
            tfar = min(bx, by, bz)
            if tnear > tfar or tfar < 0.0 or tnear > t_max:
                continue
            if node.entries is not None:
                yield from node.entries
            else:
                stack.append(node.right)
                stack.append(node.left)


# ---------------------------------------------------------------------------
# scene container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Entry:
    """One BVH-indexed unit: a whole primitive or a single world triangle."""

    object_index: int
    primitive: Primitive | None   # None for mesh triangles
    tri: np.ndarray | None        # (3, 3) world vertices for mesh triangles
    pose: Pose                    # world pose (identity rotation for triangles)


class Scene:
    """Immutable world description with a prebuilt static-geometry index."""

    def __init__(self, name: str, objects: list[SceneObject]):
        self.name = name
        self.objects = list(objects)
        self.mover_indices = [i for i, ob in enumerate(objects) if ob.motion is not None]
        self._static_entries: list[_Entry] = []
        self._plane_entries: list[_Entry] = []
        self._build_static()

    def _build_static(self):
        mins, maxs = [], []
        for i, ob in enumerate(self.objects):
            if ob.motion is not None:
                continue
            if isinstance(ob.primitive, Plane):
                self._plane_entries.append(_Entry(i, ob.primitive, None, ob.pose))
                continue
            if isinstance(ob.primitive, Mesh):
                world = ob.pose.apply(ob.primitive.vertices)
                for tri in world[ob.primitive.faces]:
                    self._static_entries.append(_Entry(i, None, tri, Pose.identity()))
                    mins.append(tri.min(axis=0))
                    maxs.append(tri.max(axis=0))
            else:
                lo, hi = ob.primitive.aabb()
                corners = np.array(
                    [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
                )
                world = ob.pose.apply(corners)
                self._static_entries.append(_Entry(i, ob.primitive, None, ob.pose))
                mins.append(world.min(axis=0))
                maxs.append(world.max(axis=0))
        self._bvh = BVH(np.array(mins).reshape(-1, 3), np.array(maxs).reshape(-1, 3))

    @property
    def static_entry_count(self) -> int:
        return len(self._static_entries)

    def without_movers(self) -> "Scene":
        """Copy of the scene with every scripted object removed."""
        return Scene(self.name, [o for o in self.objects if o.motion is None])

    def at(self, t: float) -> "SceneSnapshot":
        return scene_at(self, t)


class SceneSnapshot:
    """Scene with mover poses frozen at one instant; immutable."""

    def __init__(self, scene: Scene, t: float, mover_poses: list[Pose]):
        self.scene = scene
        self.t = t
        self.mover_poses = mover_poses


def scene_at(scene: Scene, t: float) -> SceneSnapshot:
    if t < 0.0:
        raise ValueError(f"snapshot time must be >= 0, got {t}")
    poses = [scene.objects[i].motion.pose_at(t) for i in scene.mover_indices]
    return SceneSnapshot(scene, t, poses)


def _is_identity_quat(q: np.ndarray) -> bool:
    return q[0] == 1.0 and q[1] == 0.0 and q[2] == 0.0 and q[3] == 0.0


def _entry_intersect(entry: _Entry, pose: Pose, o: np.ndarray, d: np.ndarray):
    """Intersect rays with one entry under `pose`; returns (t, world normals)."""
    if entry.tri is not None:
        t, _i, n = intersect_triangles_batch(o, d, entry.tri[None, :, :])
        return t, n
    # rotation is a no-op for spheres and for identity poses; skip it there
    if isinstance(entry.primitive, Sphere) or _is_identity_quat(pose.orientation):
        return entry.primitive.intersect(o - pose.position, d)
    qi = quat_conjugate(pose.orientation)
    lo = quat_rotate(qi, o - pose.position)
    ld = quat_rotate(qi, d)
    t, n_local = entry.primitive.intersect(lo, ld)
    return t, quat_rotate(pose.orientation, n_local)


def _face_ray(n: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Flip normals where needed so normal . direction <= 0."""
    dot = np.sum(n * d, axis=-1, keepdims=True)
    return np.where(dot > 0.0, -n, n)


def _snapshot_entries(snapshot: SceneSnapshot):
    """All intersectable units of a snapshot in canonical order.

    Order: static entries (BVH order base), then static planes, then movers.
    The (t, order_index) pair is the nearest-hit tie-break everywhere, so the
    accelerated, exhaustive, and batch paths agree exactly.
    """
    scene = snapshot.scene
    out = list(enumerate(scene._static_entries))
    base = len(out)
    for j, e in enumerate(scene._plane_entries):
        out.append((base + j, e))
    base = len(out)
    for j, mi in enumerate(scene.mover_indices):
        ob = scene.objects[mi]
        out.append((base + j, _Entry(mi, ob.primitive, None, snapshot.mover_poses[j])))
    return out


def raycast(snapshot: SceneSnapshot, origin, direction, max_range: float) -> RayHit | None:
    """Nearest intersection along a single ray, or None.

    Uses the BVH for static finite geometry; planes and movers are checked
    exhaustively. Pure function of (snapshot, ray): repeated calls are
    bit-identical.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"direction must be unit length (|d| = {norm:.3e})")
    if not max_range > 0.0:
        raise ValueError("max_range must be positive")

    scene = snapshot.scene
    o1 = o[None, :]
    d1 = d[None, :]
    best_t = np.inf
    best_key = np.inf
    best = None

    # huge-but-finite stands in for 1/0 so slab tests never hit 0*inf = nan
    inv_dir = tuple(1.0 / c if c != 0.0 else 1e300 for c in d)
    for ei in scene._bvh.ray_candidates(o, inv_dir, min(best_t, max_range)):
        entry = scene._static_entries[ei]
        t, n = _entry_intersect(entry, entry.pose, o1, d1)
        if t[0] <= max_range and (t[0], ei) < (best_t, best_key):
            best_t, best_key, best = t[0], ei, (entry, n[0])

    n_static = len(scene._static_entries)
    for j, entry in enumerate(scene._plane_entries):
        t, n = _entry_intersect(entry, entry.pose, o1, d1)
        if t[0] <= max_range and (t[0], n_static + j) < (best_t, best_key):
            best_t, best_key, best = t[0], n_static + j, (entry, n[0])

    base = n_static + len(scene._plane_entries)
    for j, mi in enumerate(scene.mover_indices):
        ob = scene.objects[mi]
        entry = _Entry(mi, ob.primitive, None, snapshot.mover_poses[j])
        t, n = _entry_intersect(entry, entry.pose, o1, d1)
        if t[0] <= max_range and (t[0], base + j) < (best_t, best_key):
            best_t, best_key, best = t[0], base + j, (entry, n[0])

    if best is None:
        return None
    entry, normal = best
    normal = _face_ray(normal[None, :], d1)[0]
    return RayHit(
        range=float(best_t),
        point=o + best_t * d,
        normal=normal,
        object_id=scene.objects[entry.object_index].id,
    )


def raycast_exhaustive(snapshot: SceneSnapshot, origin, direction, max_range: float) -> RayHit | None:
    """Reference nearest-hit: plain loop over every intersectable unit."""
    o = np.asarray(origin, dtype=float)[None, :]
    d = np.asarray(direction, dtype=float)[None, :]
    best_t = np.inf
    best_key = np.inf
    best = None
    for key, entry in _snapshot_entries(snapshot):
        t, n = _entry_intersect(entry, entry.pose, o, d)
        if t[0] <= max_range and (t[0], key) < (best_t, best_key):
            best_t, best_key, best = t[0], key, (entry, n[0])
    if best is None:
        return None
    entry, normal = best
    normal = _face_ray(normal[None, :], d)[0]
    return RayHit(
        range=float(best_t),
        point=o[0] + best_t * d[0],
        normal=normal,
        object_id=snapshot.scene.objects[entry.object_index].id,
    )


def _raycast_batch_static(scene: Scene, o: np.ndarray, d: np.ndarray, max_range: float):
    """Vectorized nearest-hit over static entries and planes only."""
    n_rays = o.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_key = np.full(n_rays, np.iinfo(np.int64).max, dtype=np.int64)
    best_obj = np.full(n_rays, -1, dtype=np.int64)
    normals = np.zeros_like(o)
    entries = list(enumerate(scene._static_entries))
    base = len(entries)
    entries += [(base + j, e) for j, e in enumerate(scene._plane_entries)]
    for key, entry in entries:
        t, n = _entry_intersect(entry, entry.pose, o, d)
        better = (t <= max_range) & ((t < best_t) | ((t == best_t) & (key < best_key)))
        if not better.any():
            continue
        best_t = np.where(better, t, best_t)
        best_key = np.where(better, key, best_key)
        best_obj = np.where(better, entry.object_index, best_obj)
        normals[better] = n[better]
    return best_t, best_key, best_obj, normals


def raycast_batch(snapshot: SceneSnapshot, origins: np.ndarray, dirs: np.ndarray, max_range: float):
    """Vectorized nearest-hit for N rays against a frozen snapshot.

    Returns (t, normals, object_index) arrays; misses have t=inf and
    object_index=-1. Normals are flipped to face the rays. Agrees exactly
    with `raycast` per ray (same tie-break order).
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(dirs, dtype=float)
    scene = snapshot.scene
    best_t, best_key, best_obj, normals = _raycast_batch_static(scene, o, d, max_range)
    base = scene.static_entry_count + len(scene._plane_entries)
    for j, mi in enumerate(scene.mover_indices):
        ob = scene.objects[mi]
        entry = _Entry(mi, ob.primitive, None, snapshot.mover_poses[j])
        t, n = _entry_intersect(entry, entry.pose, o, d)
        key = base + j
        better = (t <= max_range) & ((t < best_t) | ((t == best_t) & (key < best_key)))
        best_t = np.where(better, t, best_t)
        best_key = np.where(better, key, best_key)
        best_obj = np.where(better, mi, best_obj)
        normals[better] = n[better]
    normals = _face_ray(normals, d)
    return best_t, normals, best_obj


def raycast_batch_timed(
    scene: Scene,
    origins: np.ndarray,
    dirs: np.ndarray,
    times: np.ndarray,
    max_range: float,
    mover_mode: str = "per_point",
):
    """Vectorized nearest-hit where each ray carries its own emission time.

    Static geometry is time-invariant; each scripted mover is evaluated at
    every ray's own emission time (`per_point`) or frozen at times[0]
    (`per_frame`, cheaper and coarser).
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(dirs, dtype=float)
    times = np.asarray(times, dtype=float)
    best_t, best_key, best_obj, normals = _raycast_batch_static(scene, o, d, max_range)
    base = scene.static_entry_count + len(scene._plane_entries)
    for j, mi in enumerate(scene.mover_indices):
        ob = scene.objects[mi]
        if mover_mode == "per_frame":
            pose = ob.motion.pose_at(float(times[0]))
            qi = quat_conjugate(pose.orientation)
            lo = quat_rotate(qi, o - pose.position)
            ld = quat_rotate(qi, d)
            rot_q = pose.orientation
        else:
            pos, quats = ob.motion.pose_at_many(times)
            qi = quat_conjugate(quats)
            lo = quat_rotate(qi, o - pos)
            ld = quat_rotate(qi, d)
            rot_q = quats
        t, n_local = ob.primitive.intersect(lo, ld)
        n = quat_rotate(rot_q, n_local)
        key = base + j
        better = (t <= max_range) & ((t < best_t) | ((t == best_t) & (key < best_key)))
        best_t = np.where(better, t, best_t)
        best_key = np.where(better, key, best_key)
        best_obj = np.where(better, mi, best_obj)
        normals[better] = n[better]
    normals = _face_ray(normals, d)
    return best_t, normals, best_obj


# ---------------------------------------------------------------------------
# OBJ mesh loading
# ---------------------------------------------------------------------------

def load_obj(path: Path) -> Mesh:
    """Load a triangles-only OBJ subset (`v` and `f` records)."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise SceneError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise SceneError(f"{path}:{lineno}: only triangular faces are supported")
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    if i < 1 or i > len(verts):
                        raise SceneError(f"{path}:{lineno}: vertex index {i} out of range")
                    idx.append(i - 1)
                faces.append(idx)
            # other record types (vn, vt, o, ...) are ignored
    if not faces:
        raise SceneError(f"{path}: no faces found")
    return Mesh(np.array(verts, dtype=float), np.array(faces, dtype=np.int64))


def degenerate_triangles(mesh: Mesh, min_area: float = 1e-12) -> list[int]:
    tris = mesh.triangles
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=-1)
    return [int(i) for i in np.nonzero(areas <= min_area)[0]]


# ---------------------------------------------------------------------------
# scene file loading / validation
# ---------------------------------------------------------------------------

BUNDLED_SCENE_DIR = Path(__file__).parent / "scenes"
BUNDLED_SCENES = ("room", "corridor", "yard", "flatland", "depot")


def bundled_scene_path(name: str) -> Path:
    p = BUNDLED_SCENE_DIR / f"{name}.scene.json"
    if not p.exists():
        raise SceneError(f"no bundled scene named {name!r} (have: {', '.join(BUNDLED_SCENES)})")
    return p


def resolve_scene_path(spec: str | Path) -> Path:
    """Accept a file path or a bundled scene name."""
    p = Path(spec)
    if p.exists():
        return p
    if isinstance(spec, str) and spec in BUNDLED_SCENES:
        return bundled_scene_path(spec)
    raise SceneError(f"scene file not found: {spec}")


@dataclass
class SceneReport:
    name: str
    object_count: int = 0
    mover_count: int = 0
    triangle_count: int = 0
    kinds: dict = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def _pose_from_json(node, where: str, violations: list[str]) -> Pose:
    xyz = node.get("xyz", [0.0, 0.0, 0.0])
    rpy = node.get("rpy_deg", [0.0, 0.0, 0.0])
    if len(xyz) != 3 or len(rpy) != 3:
        violations.append(f"{where}: pose xyz/rpy_deg must have 3 entries")
        return Pose.identity()
    return Pose.from_xyz_rpy(xyz, [a * _DEG for a in rpy])


def _parse_object(node, scene_dir: Path, violations: list[str]) -> SceneObject | None:
    oid = node.get("id")
    if not oid or not isinstance(oid, str):
        violations.append("object without a string 'id'")
        return None
    kind = node.get("kind")
    if kind not in KINDS:
        violations.append(f"object {oid!r}: unknown kind {kind!r}")
        return None
    pose = _pose_from_json(node.get("pose", {}), f"object {oid!r}", violations)

    prim: Primitive | None = None
    if kind == "box":
        he = node.get("half_extents")
        if not he or len(he) != 3 or any(x <= 0 for x in he):
            violations.append(f"object {oid!r}: box needs 3 strictly positive half_extents")
        else:
            prim = Box(np.asarray(he, dtype=float))
    elif kind == "sphere":
        r = node.get("radius", 0.0)
        if not r or r <= 0:
            violations.append(f"object {oid!r}: sphere needs a positive radius")
        else:
            prim = Sphere(float(r))
    elif kind == "cylinder":
        r = node.get("radius", 0.0)
        h = node.get("height", 0.0)
        if r <= 0 or h <= 0:
            violations.append(f"object {oid!r}: cylinder needs positive radius and height")
        else:
            prim = Cylinder(float(r), float(h))
    elif kind == "plane":
        prim = Plane()
    elif kind == "mesh":
        rel = node.get("mesh_file")
        if not rel:
            violations.append(f"object {oid!r}: mesh needs a mesh_file")
        else:
            try:
                mesh = load_obj(scene_dir / rel)
            except (OSError, ValueError) as exc:
                violations.append(f"object {oid!r}: {exc}")
                mesh = None
            if mesh is not None:
                bad = degenerate_triangles(mesh)
                if bad:
                    violations.append(
                        f"object {oid!r}: degenerate triangles (area <= 1e-12) at indices {bad}"
                    )
                prim = mesh

    motion = None
    if "motion" in node and node["motion"] is not None:
        motion = _parse_motion(node["motion"], oid, violations)

    if prim is None:
        return None
    return SceneObject(id=oid, kind=kind, primitive=prim, pose=pose, motion=motion)


def _parse_motion(node, oid: str, violations: list[str]) -> MotionScript | None:
    wps = node.get("waypoints", [])
    if len(wps) < 1:
        violations.append(f"object {oid!r}: motion needs at least one waypoint")
        return None
    times, positions, quats = [], [], []
    vio = []
    for w in wps:
        times.append(float(w.get("t", 0.0)))
        pose = _pose_from_json(w, f"object {oid!r} waypoint", vio)
        positions.append(pose.position)
        quats.append(pose.orientation)
    violations.extend(vio)
    times = np.asarray(times)
    if times[0] != 0.0:
        violations.append(f"object {oid!r}: first waypoint time must be 0, got {times[0]}")
        return None
    if np.any(np.diff(times) <= 0.0):
        violations.append(f"object {oid!r}: waypoint times must be strictly increasing")
        return None
    return MotionScript(
        times=times,
        positions=np.asarray(positions),
        quats=np.asarray(quats),
        loop=bool(node.get("loop", False)),
    )


def inspect_scene(path: str | Path) -> tuple[Scene | None, SceneReport]:
    """Parse and validate a scene file, collecting every violation."""
    path = Path(path)
    report = SceneReport(name=str(path))
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        report.violations.append(str(exc))
        return None, report
    except json.JSONDecodeError as exc:
        report.violations.append(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}")
        return None, report

    name = doc.get("name")
    if not isinstance(name, str) or not name:
        report.violations.append("scene needs a non-empty 'name'")
        name = path.stem
    report.name = name

    objects: list[SceneObject] = []
    seen: set[str] = set()
    for node in doc.get("objects", []):
        ob = _parse_object(node, path.parent, report.violations)
        if ob is None:
            continue
        if ob.id in seen:
            report.violations.append(f"duplicate object id {ob.id!r}")
            continue
        seen.add(ob.id)
        objects.append(ob)
    if not objects:
        report.violations.append("scene has no valid objects")

    report.object_count = len(objects)
    report.mover_count = sum(1 for o in objects if o.motion is not None)
    report.triangle_count = sum(
        len(o.primitive.faces) for o in objects if isinstance(o.primitive, Mesh)
    )
    for o in objects:
        report.kinds[o.kind] = report.kinds.get(o.kind, 0) + 1

    if report.violations:
        return None, report
    return Scene(name, objects), report


def load_scene(path: str | Path) -> Scene:
    """Load a `.scene.json` file; raises SceneError naming the first problems."""
    scene, report = inspect_scene(resolve_scene_path(path))
    if scene is None:
        raise SceneError("; ".join(report.violations))
    return scene
