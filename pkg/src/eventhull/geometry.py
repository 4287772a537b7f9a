"""Camera model, rigid poses, trajectory interpolation and ray generation.

Conventions: poses are world-from-camera, quaternions are stored in
(qx, qy, qz, qw) order, the optical axis is camera +z, and translations
are camera centers in world coordinates (meters).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DomainError, ExtrapolationError, ParseError

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole camera (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise DomainError("principal point must lie inside the sensor")


@dataclass(frozen=True)
class Pose:
    """World-from-camera rigid transform."""

    rotation: np.ndarray  # quaternion (qx, qy, qz, qw)
    translation: np.ndarray  # camera center in world, meters

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > _UNIT_TOL:
            raise DomainError("quaternion must be unit norm")
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @property
    def rot(self) -> Rotation:
        return Rotation.from_quat(self.rotation)

    def matrix(self) -> np.ndarray:
        return self.rot.as_matrix()

    def apply(self, vec_cam) -> np.ndarray:
        """Rotate camera-frame vectors into the world frame."""
        return self.rot.apply(vec_cam)

    def to_world(self, pts_cam) -> np.ndarray:
        return self.rot.apply(pts_cam) + self.translation

    def to_camera(self, pts_world) -> np.ndarray:
        return self.rot.inv().apply(np.asarray(pts_world) - self.translation)


@dataclass(frozen=True)
class Ray:
    """World-frame ray with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > _UNIT_TOL:
            raise DomainError("ray direction must be unit norm")
        o.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


def backproject(pixel, intr: CameraIntrinsics) -> np.ndarray:
    """Unit camera-frame viewing direction for a pixel."""
    px, py = float(pixel[0]), float(pixel[1])
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        raise DomainError(f"pixel ({px}, {py}) outside sensor bounds")
    v = np.array([(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, 1.0])
    return v / np.linalg.norm(v)


def backproject_many(px, py, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorized backprojection; returns (N, 3) unit directions."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    v = np.stack(
        [(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, np.ones_like(px)],
        axis=-1,
    )
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def project(pts_cam, intr: CameraIntrinsics) -> np.ndarray:
    """Forward pinhole map, camera frame -> pixel coordinates.

    Points must have positive depth; no bounds clipping is applied.
    """
    pts = np.atleast_2d(np.asarray(pts_cam, dtype=np.float64))
    z = pts[:, 2]
    uv = np.stack(
        [intr.fx * pts[:, 0] / z + intr.cx, intr.fy * pts[:, 1] / z + intr.cy],
        axis=-1,
    )
    return uv if np.asarray(pts_cam).ndim == 2 else uv[0]


def _slerp_many(q0: np.ndarray, q1: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Shorter-arc spherical interpolation between quaternion pairs.

    q0, q1: (N, 4); w: (N,). Nearly parallel pairs fall back to a
    normalized lerp.
    """
    dot = np.sum(q0 * q1, axis=-1)
    sign = np.where(dot < 0.0, -1.0, 1.0)
    q1 = q1 * sign[:, None]
    dot = np.abs(dot)

    out = np.empty_like(q0)
    close = dot > 1.0 - 1e-12
    if np.any(close):
        lerp = q0[close] + w[close, None] * (q1[close] - q0[close])
        out[close] = lerp / np.linalg.norm(lerp, axis=-1, keepdims=True)
    far = ~close
    if np.any(far):
        theta = np.arccos(np.clip(dot[far], -1.0, 1.0))
        sin_theta = np.sin(theta)
        a = np.sin((1.0 - w[far]) * theta) / sin_theta
        b = np.sin(w[far] * theta) / sin_theta
        slerp = a[:, None] * q0[far] + b[:, None] * q1[far]
        out[far] = slerp / np.linalg.norm(slerp, axis=-1, keepdims=True)
    return out


class Trajectory:
    """Time-sorted sequence of camera poses with interpolation."""

    def __init__(self, samples):
        samples = list(samples)
        if len(samples) < 2:
            raise DomainError("trajectory needs at least 2 samples")
        times = np.array([float(t) for t, _ in samples])
        if not np.all(np.diff(times) > 0):
            raise DomainError("trajectory timestamps must be strictly increasing")
        self.times = times
        self.quats = np.stack([p.rotation for _, p in samples])
        self.trans = np.stack([p.translation for _, p in samples])
        self.times.flags.writeable = False
        self.quats.flags.writeable = False
        self.trans.flags.writeable = False

    def __len__(self):
        return len(self.times)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def pose_at(self, idx: int) -> Pose:
        return Pose(self.quats[idx].copy(), self.trans[idx].copy())

    def interpolate_many(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """Quaternions (N, 4) and translations (N, 3) at times ts."""
        ts = np.asarray(ts, dtype=np.float64)
        if ts.size and (ts.min() < self.times[0] or ts.max() > self.times[-1]):
            raise ExtrapolationError(
                f"time outside trajectory range "
                f"[{self.times[0]}, {self.times[-1]}]"
            )
        idx = np.searchsorted(self.times, ts, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 2)
        t0 = self.times[idx]
        t1 = self.times[idx + 1]
        w = (ts - t0) / (t1 - t0)

        quats = _slerp_many(self.quats[idx], self.quats[idx + 1], w)
        trans = self.trans[idx] + w[..., None] * (self.trans[idx + 1] - self.trans[idx])

        # Sample hits stay bit-exact.
        exact = np.searchsorted(self.times, ts)
        exact = np.clip(exact, 0, len(self.times) - 1)
        hit = self.times[exact] == ts
        if np.any(hit):
            quats[hit] = self.quats[exact[hit]]
            trans[hit] = self.trans[exact[hit]]
        return quats, trans


def interpolate_pose(traj: Trajectory, t: float) -> Pose:
    """Pose at time t: lerp on translation, shorter-arc slerp on rotation."""
    quats, trans = traj.interpolate_many(np.array([float(t)]))
    return Pose(quats[0], trans[0])


def event_ray(event, traj: Trajectory, intr: CameraIntrinsics) -> Ray:
    """World-frame viewing ray of a single event."""
    pose = interpolate_pose(traj, event.t)
    d = pose.apply(backproject((event.x, event.y), intr))
    return Ray(pose.translation, d / np.linalg.norm(d))


def event_rays(xs, ys, ts, traj: Trajectory, intr: CameraIntrinsics):
    """Vectorized event rays: returns (origins (N,3), directions (N,3))."""
    quats, trans = traj.interpolate_many(ts)
    dirs_cam = backproject_many(xs, ys, intr)
    dirs = Rotation.from_quat(quats).apply(dirs_cam)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return trans, dirs


def look_at_pose(position, target, up_hint=(0.0, 0.0, 1.0)) -> Pose:
    """Pose at `position` whose optical axis points at `target`.

    up_hint fixes the roll; it must not be parallel to the view direction.
    """
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(fwd)
    if n == 0:
        raise DomainError("camera position coincides with look-at target")
    fwd = fwd / n
    up = np.asarray(up_hint, dtype=np.float64)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise DomainError("up hint parallel to viewing direction")
    right /= rn
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)  # columns: camera x, y, z
    q = Rotation.from_matrix(rot).as_quat()
    return Pose(q / np.linalg.norm(q), position)


def save_trajectory(traj: Trajectory, path):
    """Write TUM format: 't tx ty tz qx qy qz qw' per line."""
    with open(path, "w") as f:
        f.write("# t tx ty tz qx qy qz qw\n")
        for t, tr, q in zip(traj.times, traj.trans, traj.quats):
            f.write(
                f"{float(t)!r} {float(tr[0])!r} {float(tr[1])!r} {float(tr[2])!r} "
                f"{float(q[0])!r} {float(q[1])!r} {float(q[2])!r} {float(q[3])!r}\n"
            )


def load_trajectory(path) -> Trajectory:
    """Read a TUM-format trajectory file ('#' starts a comment)."""
    samples = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError("expected 8 fields 't tx ty tz qx qy qz qw'", lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", lineno) from None
            t, tx, ty, tz, qx, qy, qz, qw = vals
            q = np.array([qx, qy, qz, qw])
            n = np.linalg.norm(q)
            if n == 0:
                raise ParseError("zero quaternion", lineno)
            samples.append((t, Pose(q / n, np.array([tx, ty, tz]))))
    return Trajectory(samples)
