"""Geometric apparent-contour-event oracle.

Given a known surface and camera trajectory, an event is an ACE when its
pixel lies on the projected occluding contour at the event's interpolated
pose. The 3D tangency constraints are enforced on the contour generator
itself; per-event classification happens in image space as distance to
the projected contour polyline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .events import LABEL_ACE, LABEL_NON_ACE, EventStream
from .geometry import CameraIntrinsics, Pose, Trajectory, interpolate_pose, project
from .surfaces import Surface

DEFAULT_TOL_PX = 1.5


@dataclass
class ContourGenerator:
    """Occluding contour at one camera pose: world-frame polylines with
    per-point outward (or normal-cone) normals."""

    pose: Pose
    segments: list  # of (points (M,3), normals (M,3))


def contour_generator(
    surface: Surface, pose: Pose, samples_per_curve: int = 256
) -> ContourGenerator:
    """Contour generator for the camera center of `pose`.

    Every returned point X satisfies the tangency constraint
    n . (X - p_c) = 0 together with membership on the surface.
    """
    segs = surface.contour_polylines(pose.translation, samples_per_curve)
    return ContourGenerator(pose, segs)


def motion_time_bins(
    traj: Trajectory,
    intr: CameraIntrinsics,
    scene_center,
    target_px: float = 0.2,
) -> np.ndarray:
    """Time bin edges over which the projected contour moves < target_px.

    Accumulates an upper bound on apparent pixel motion (rotation plus
    parallax) along the trajectory samples and cuts a bin whenever it
    exceeds the target.
    """
    f = max(intr.fx, intr.fy)
    center = np.asarray(scene_center, dtype=np.float64)
    dots = np.abs(np.sum(traj.quats[:-1] * traj.quats[1:], axis=1))
    ang = 2.0 * np.arccos(np.clip(dots, -1.0, 1.0))
    dist = np.linalg.norm(traj.trans - center, axis=1)
    dmin = max(np.min(dist), 1e-9)
    step = np.linalg.norm(np.diff(traj.trans, axis=0), axis=1)
    px = f * (ang + step / dmin)
    cum = np.concatenate([[0.0], np.cumsum(px)])
    n_bins = max(1, int(np.ceil(cum[-1] / target_px)))
    # invert the cumulative motion at evenly spaced motion levels
    levels = np.linspace(0.0, cum[-1], n_bins + 1)
    edges = np.interp(levels, cum, traj.times)
    edges[0] = traj.t_start
    edges[-1] = traj.t_end
    return np.unique(edges)


def project_contour(
    gen: ContourGenerator, pose: Pose, intr: CameraIntrinsics
) -> list[np.ndarray]:
    """Project contour polylines to pixels; drops behind-camera points."""
    out = []
    for pts, _ in gen.segments:
        cam = pose.to_camera(pts)
        ok = cam[:, 2] > 1e-9
        if not np.any(ok):
            continue
        # split on dropped points so segments stay contiguous
        runs = np.split(np.arange(len(pts)), np.nonzero(np.diff(ok.astype(int)))[0] + 1)
        for run in runs:
            if ok[run[0]] and len(run) >= 1:
                out.append(project(cam[run], intr))
    return out


def _min_dist_to_polylines(queries: np.ndarray, polylines: list[np.ndarray]) -> np.ndarray:
    """Min distance from each 2D query to any polyline segment (or point)."""
    best = np.full(len(queries), np.inf)
    for poly in polylines:
        if len(poly) == 1:
            d = np.linalg.norm(queries - poly[0], axis=1)
            np.minimum(best, d, out=best)
            continue
        a = poly[:-1]
        ab = poly[1:] - a
        ab2 = np.einsum("ij,ij->i", ab, ab)
        ab2[ab2 == 0] = 1.0
        # (N, S) projection parameter clamped to the segment
        ap = queries[:, None, :] - a[None]
        u = np.clip(np.einsum("nsj,sj->ns", ap, ab) / ab2[None], 0.0, 1.0)
        closest = a[None] + u[..., None] * ab[None]
        d = np.linalg.norm(queries[:, None, :] - closest, axis=2).min(axis=1)
        np.minimum(best, d, out=best)
    return best


def label_events(
    stream: EventStream,
    traj: Trajectory,
    intr: CameraIntrinsics,
    surface: Surface,
    tol_px: float = DEFAULT_TOL_PX,
    target_px: float = 0.2,
    samples_per_curve: int = 256,
) -> EventStream:
    """Label each event ace / non-ace by distance to the projected contour.

    The trajectory is split into time bins over which the apparent
    contour moves less than target_px; one contour is computed per bin
    that contains events. Labels are independent of event partitioning.
    """
    if tol_px <= 0:
        raise DomainError("tol_px must be positive")
    if len(stream) == 0:
        return stream.with_labels(stream.label)
    if stream.t[0] < traj.t_start or stream.t[-1] > traj.t_end:
        raise DomainError("event timestamps outside trajectory range")

    lo, hi = surface.bounds()
    edges = motion_time_bins(traj, intr, 0.5 * (lo + hi), target_px)
    bin_idx = np.clip(np.searchsorted(edges, stream.t, side="right") - 1, 0, len(edges) - 2)

    labels = np.full(len(stream), LABEL_NON_ACE, dtype=np.int8)
    pix = np.stack([stream.x, stream.y], axis=1).astype(np.float64)
    for b in np.unique(bin_idx):
        sel = np.nonzero(bin_idx == b)[0]
        t_mid = 0.5 * (edges[b] + edges[b + 1])
        pose = interpolate_pose(traj, t_mid)
        gen = contour_generator(surface, pose, samples_per_curve)
        polys = project_contour(gen, pose, intr)
        if not polys:
            continue
        d = _min_dist_to_polylines(pix[sel], polys)
        labels[sel[d <= tol_px]] = LABEL_ACE
    return stream.with_labels(labels)
