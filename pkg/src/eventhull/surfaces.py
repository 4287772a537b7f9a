"""Scene surfaces: analytic primitives and triangle meshes.

Every surface knows how to intersect rays, sample oriented surface
points, report its bounds, and produce the occluding-contour curve seen
from a camera center. Contours are returned as world-frame polylines
with per-point outward normals; edge points of non-smooth primitives
carry the normal-cone direction perpendicular to the viewing ray.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .meshing import TriMesh


def _orthobasis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing `axis` to a right-handed frame."""
    a = np.asarray(axis, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return e1, e2


def _edge_normal(n1, n2, w):
    """A direction in the cone spanned by n1, n2 perpendicular to w.

    Exists whenever n1, n2 face opposite sides of w (silhouette edges).
    """
    n = n1 * np.dot(n2, w) - n2 * np.dot(n1, w)
    length = np.linalg.norm(n)
    if length < 1e-15:
        return n1
    return n / length


class Surface:
    """Interface shared by all scene surfaces."""

    def diameter(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def signed_distance(self, pts) -> np.ndarray:
        """Negative inside, positive outside (exact for primitives)."""
        raise NotImplementedError

    def contains(self, pts) -> np.ndarray:
        return self.signed_distance(pts) < 0

    def ray_intersect(self, origins, dirs) -> np.ndarray:
        """First-hit ray parameters, +inf on miss. Directions need not
        be normalized; parameters are in direction units."""
        raise NotImplementedError

    def sample_surface(self, n: int, rng: np.random.Generator):
        """(points (n,3), outward normals (n,3)) sampled area-uniformly."""
        raise NotImplementedError

    def contour_polylines(self, cam_center, samples_per_curve: int = 256):
        """Occluding contour for a camera center.

        Returns a list of (points (M,3), normals (M,3)) polylines; closed
        curves repeat their first point at the end.
        """
        raise NotImplementedError


@dataclass
class Sphere(Surface):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise DomainError("sphere radius must be positive")

    def bounds(self):
        r = np.full(3, self.radius)
        return self.center - r, self.center + r

    def signed_distance(self, pts):
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def ray_intersect(self, origins, dirs):
        o = np.atleast_2d(origins) - self.center
        d = np.atleast_2d(dirs)
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * np.einsum("ij,ij->i", o, d)
        c = np.einsum("ij,ij->i", o, o) - self.radius**2
        disc = b * b - 4 * a * c
        t = np.full(len(o), np.inf)
        hit = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        tt = np.where(t0 > 1e-12, t0, np.where(t1 > 1e-12, t1, np.inf))
        t[hit] = tt[hit]
        return t

    def sample_surface(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v, v

    def contour_polylines(self, cam_center, samples_per_curve: int = 256):
        p = np.asarray(cam_center, dtype=np.float64)
        w = p - self.center
        d = np.linalg.norm(w)
        if d <= self.radius:
            raise DomainError("camera center inside the sphere")
        u = w / d
        rho = self.radius * np.sqrt(1.0 - (self.radius / d) ** 2)
        ring_center = self.center + (self.radius**2 / d) * u
        e1, e2 = _orthobasis(u)
        theta = np.linspace(0.0, 2 * np.pi, samples_per_curve + 1)
        ring = (
            ring_center
            + rho * np.cos(theta)[:, None] * e1
            + rho * np.sin(theta)[:, None] * e2
        )
        normals = (ring - self.center) / self.radius
        return [(ring, normals)]


@dataclass
class Box(Surface):
    """Axis-aligned box."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(self.half_extents <= 0):
            raise DomainError("box half-extents must be positive")

    def bounds(self):
        return self.center - self.half_extents, self.center + self.half_extents

    def signed_distance(self, pts):
        q = np.abs(np.atleast_2d(pts) - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def ray_intersect(self, origins, dirs):
        o = np.atleast_2d(origins) - self.center
        d = np.atleast_2d(dirs)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half_extents - o) * inv
            t2 = (self.half_extents - o) * inv
        # parallel axes: inside-slab check via +-inf propagation
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= tmin) & (tmax > 1e-12)
        t = np.where(tmin > 1e-12, tmin, tmax)
        return np.where(hit, t, np.inf)

    def _face_data(self):
        faces = []
        for axis in range(3):
            for s in (-1.0, 1.0):
                n = np.zeros(3)
                n[axis] = s
                faces.append(n)
        return faces

    def _corners(self):
        h = self.half_extents
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return self.center + signs * h

    _EDGES = [
        # each edge: (corner index a, corner index b, face normal 1, face normal 2)
        (0, 1, (0, -1), (1, -1)), (2, 3, (0, -1), (1, 1)),
        (4, 5, (0, 1), (1, -1)), (6, 7, (0, 1), (1, 1)),
        (0, 2, (0, -1), (2, -1)), (1, 3, (0, -1), (2, 1)),
        (4, 6, (0, 1), (2, -1)), (5, 7, (0, 1), (2, 1)),
        (0, 4, (1, -1), (2, -1)), (1, 5, (1, -1), (2, 1)),
        (2, 6, (1, 1), (2, -1)), (3, 7, (1, 1), (2, 1)),
    ]

    def sample_surface(self, n, rng):
        h = self.half_extents
        areas = np.array(
            [h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]]
        )
        face_idx = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        normals = np.zeros((n, 3))
        for k in range(6):
            axis, s = divmod(k, 2)
            s = -1.0 if s == 0 else 1.0
            sel = face_idx == k
            pts[sel, axis] = s * h[axis]
            normals[sel, axis] = s
        return self.center + pts, normals

    def contour_polylines(self, cam_center, samples_per_curve: int = 256):
        p = np.asarray(cam_center, dtype=np.float64)
        if self.signed_distance(p)[0] <= 0:
            raise DomainError("camera center inside the box")
        corners = self._corners()
        segs = []
        per_edge = max(2, samples_per_curve // 12 + 1)
        for a, b, (ax1, s1), (ax2, s2) in self._EDGES:
            n1 = np.zeros(3); n1[ax1] = s1
            n2 = np.zeros(3); n2[ax2] = s2
            mid = 0.5 * (corners[a] + corners[b])
            f1 = np.dot(n1, p - mid)
            f2 = np.dot(n2, p - mid)
            if (f1 > 0) == (f2 > 0):
                continue
            ts = np.linspace(0.0, 1.0, per_edge)
            pts = corners[a] + ts[:, None] * (corners[b] - corners[a])
            normals = np.stack([_edge_normal(n1, n2, q - p) for q in pts])
            segs.append((pts, normals))
        return segs


@dataclass
class Cylinder(Surface):
    """Finite closed cylinder around an arbitrary unit axis."""

    center: np.ndarray
    radius: float
    half_height: float
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        self.axis = self.axis / np.linalg.norm(self.axis)
        if self.radius <= 0 or self.half_height <= 0:
            raise DomainError("cylinder radius and half-height must be positive")

    def bounds(self):
        # conservative box from radius + half height in any orientation
        e1, e2 = _orthobasis(self.axis)
        ext = (
            np.abs(self.axis) * self.half_height
            + (np.abs(e1) + np.abs(e2)) * self.radius
        )
        return self.center - ext, self.center + ext

    def _decompose(self, pts):
        rel = np.atleast_2d(pts) - self.center
        h = rel @ self.axis
        radial = rel - h[:, None] * self.axis
        return h, radial

    def signed_distance(self, pts):
        h, radial = self._decompose(pts)
        dr = np.linalg.norm(radial, axis=-1) - self.radius
        dh = np.abs(h) - self.half_height
        outside = np.linalg.norm(
            np.maximum(np.stack([dr, dh], axis=-1), 0.0), axis=-1
        )
        inside = np.minimum(np.maximum(dr, dh), 0.0)
        return outside + inside

    def ray_intersect(self, origins, dirs):
        o = np.atleast_2d(origins) - self.center
        d = np.atleast_2d(dirs)
        oh = o @ self.axis
        dh = d @ self.axis
        op = o - oh[:, None] * self.axis
        dp = d - dh[:, None] * self.axis
        a = np.einsum("ij,ij->i", dp, dp)
        b = 2 * np.einsum("ij,ij->i", op, dp)
        c = np.einsum("ij,ij->i", op, op) - self.radius**2
        best = np.full(len(o), np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / (2 * a)
                ok = (disc >= 0) & (a > 0) & (t > 1e-12)
                hh = oh + t * dh
                ok &= np.abs(hh) <= self.half_height
                best = np.where(ok & (t < best), t, best)
            for cap in (-1.0, 1.0):
                t = (cap * self.half_height - oh) / dh
                ok = (t > 1e-12) & np.isfinite(t)
                rad = op + t[:, None] * dp
                ok &= np.einsum("ij,ij->i", rad, rad) <= self.radius**2
                best = np.where(ok & (t < best), t, best)
        return best

    def sample_surface(self, n, rng):
        e1, e2 = _orthobasis(self.axis)
        side_area = 2 * np.pi * self.radius * 2 * self.half_height
        cap_area = np.pi * self.radius**2
        probs = np.array([side_area, cap_area, cap_area])
        probs = probs / probs.sum()
        which = rng.choice(3, size=n, p=probs)
        theta = rng.uniform(0, 2 * np.pi, size=n)
        radial = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
        pts = np.zeros((n, 3))
        normals = np.zeros((n, 3))
        side = which == 0
        h = rng.uniform(-self.half_height, self.half_height, size=n)
        pts[side] = self.radius * radial[side] + h[side, None] * self.axis
        normals[side] = radial[side]
        for k, s in ((1, 1.0), (2, -1.0)):
            sel = which == k
            r = self.radius * np.sqrt(rng.uniform(0, 1, size=n))
            pts[sel] = r[sel, None] * radial[sel] + s * self.half_height * self.axis
            normals[sel] = s * self.axis
        return self.center + pts, normals

    def contour_polylines(self, cam_center, samples_per_curve: int = 256):
        p = np.asarray(cam_center, dtype=np.float64)
        if self.signed_distance(p)[0] <= 0:
            raise DomainError("camera center inside the cylinder")
        e1, e2 = _orthobasis(self.axis)
        w = p - self.center
        wh = float(w @ self.axis)
        wp = w - wh * self.axis
        rho = np.linalg.norm(wp)
        segs = []

        # side silhouette lines: radial(theta) . w = radius
        if rho > self.radius:
            phi0 = np.arctan2(wp @ e2, wp @ e1)
            dphi = np.arccos(self.radius / rho)
            n_line = max(2, samples_per_curve // 8)
            for s in (-1.0, 1.0):
                radial = np.cos(phi0 + s * dphi) * e1 + np.sin(phi0 + s * dphi) * e2
                hs = np.linspace(-self.half_height, self.half_height, n_line)
                pts = self.center + self.radius * radial + hs[:, None] * self.axis
                normals = np.tile(radial, (n_line, 1))
                segs.append((pts, normals))

        # rim arcs where the cap and the side face opposite ways
        theta = np.linspace(0.0, 2 * np.pi, samples_per_curve, endpoint=False)
        radial = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
        side_facing = radial @ w - self.radius  # sign of radial . (p - X)
        for cap_sign in (1.0, -1.0):
            cap_facing = cap_sign * wh - self.half_height
            include = (side_facing > 0) != (cap_facing > 0)
            if not np.any(include):
                continue
            rim = (
                self.center
                + cap_sign * self.half_height * self.axis
                + self.radius * radial
            )
            cap_n = cap_sign * self.axis
            for pts_arc in _split_arcs(rim, include):
                rel = pts_arc - self.center
                hcomp = rel @ self.axis
                rad = rel - hcomp[:, None] * self.axis
                rad /= np.linalg.norm(rad, axis=1, keepdims=True)
                normals = np.stack(
                    [_edge_normal(r, cap_n, q - p) for r, q in zip(rad, pts_arc)]
                )
                segs.append((pts_arc, normals))
        return segs


def _split_arcs(ring: np.ndarray, include: np.ndarray) -> list[np.ndarray]:
    """Contiguous runs of included samples on a closed ring."""
    n = len(ring)
    if include.all():
        return [np.vstack([ring, ring[:1]])]
    # rotate so a gap starts at index 0
    start = int(np.argmin(include))
    rolled = np.roll(include, -start)
    idx = (np.arange(n) + start) % n
    arcs = []
    run: list[int] = []
    for k in range(n):
        if rolled[k]:
            run.append(idx[k])
        elif run:
            arcs.append(ring[run])
            run = []
    if run:
        arcs.append(ring[run])
    return [a for a in arcs if len(a) >= 2]


class MeshSurface(Surface):
    """Watertight triangle mesh as a scene surface."""

    def __init__(self, mesh: TriMesh):
        if not mesh.is_watertight():
            raise DomainError("mesh surface must be watertight")
        self.mesh = mesh
        self._face_normals = mesh.face_normals()
        # edge -> (faceA, faceB) for silhouette extraction
        e = np.concatenate(
            [mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]
        )
        face_of = np.tile(np.arange(len(mesh.faces)), 3)
        order = np.lexsort((np.sort(e, axis=1)[:, 1], np.sort(e, axis=1)[:, 0]))
        se = np.sort(e, axis=1)[order]
        sf = face_of[order]
        self._edge_verts = se[::2]
        self._edge_faces = np.stack([sf[::2], sf[1::2]], axis=1)

    def bounds(self):
        return self.mesh.vertices.min(axis=0), self.mesh.vertices.max(axis=0)

    def ray_intersect(self, origins, dirs):
        return _mesh_ray_intersect(self.mesh, self._face_normals, origins, dirs)

    def signed_distance(self, pts):
        # sign by ray-parity along +x; magnitude is not needed by callers
        pts = np.atleast_2d(pts)
        d = np.tile(np.array([1.0, 0.0, 0.0]), (len(pts), 1))
        counts = _mesh_ray_count(self.mesh, pts, d)
        inside = counts % 2 == 1
        return np.where(inside, -1.0, 1.0)

    def sample_surface(self, n, rng):
        areas = self.mesh.face_areas()
        fi = rng.choice(len(areas), size=n, p=areas / areas.sum())
        u = rng.uniform(size=(n, 1))
        v = rng.uniform(size=(n, 1))
        flip = (u + v) > 1
        u[flip] = 1 - u[flip]
        v[flip] = 1 - v[flip]
        tri = self.mesh.vertices[self.mesh.faces[fi]]
        pts = tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])
        return pts, self._face_normals[fi]

    def contour_polylines(self, cam_center, samples_per_curve: int = 256):
        p = np.asarray(cam_center, dtype=np.float64)
        verts = self.mesh.vertices
        faces = self.mesh.faces
        fn = self._face_normals
        centroids = verts[faces].mean(axis=1)
        facing = np.einsum("ij,ij->i", fn, p - centroids) > 0
        sil = facing[self._edge_faces[:, 0]] != facing[self._edge_faces[:, 1]]
        ev = self._edge_verts[sil]
        ef = self._edge_faces[sil]
        if not len(ev):
            return []
        mids = 0.5 * (verts[ev[:, 0]] + verts[ev[:, 1]])
        # self-occlusion: keep edges whose midpoint is the first hit
        to_mid = mids - p
        dist = np.linalg.norm(to_mid, axis=1)
        t = _mesh_ray_intersect(self.mesh, fn, np.tile(p, (len(mids), 1)), to_mid)
        visible = t >= 1.0 - 1e-6
        segs = []
        for k in np.nonzero(visible)[0]:
            a, b = verts[ev[k, 0]], verts[ev[k, 1]]
            n1, n2 = fn[ef[k, 0]], fn[ef[k, 1]]
            pts = np.stack([a, b])
            normals = np.stack([_edge_normal(n1, n2, q - p) for q in pts])
            segs.append((pts, normals))
        return segs


def _mesh_ray_hits(mesh: TriMesh, origins, dirs, chunk=2**22):
    """Moller-Trumbore parameters for all ray/face pairs, chunked.

    Yields (ray slice, t matrix with inf on miss)."""
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    tri = mesh.vertices[mesh.faces]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    nf = len(v0)
    rows = max(1, chunk // max(nf, 1))
    for lo in range(0, len(origins), rows):
        o = origins[lo : lo + rows][:, None, :]
        d = dirs[lo : lo + rows][:, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("rfj,fj->rf", pvec, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tvec = o - v0[None]
            u = np.einsum("rfj,rfj->rf", tvec, pvec) * inv
            qvec = np.cross(tvec, e1[None])
            v = np.einsum("rfj,rfj->rf", qvec, d) * inv
            t = np.einsum("rfj,fj->rf", qvec, e2) * inv
        ok = (
            (np.abs(det) > 1e-14)
            & (u >= -1e-12)
            & (v >= -1e-12)
            & (u + v <= 1 + 1e-12)
            & (t > 1e-9)
        )
        t = np.where(ok, t, np.inf)
        yield slice(lo, lo + rows), t


def _mesh_ray_intersect(mesh, face_normals, origins, dirs):
    origins = np.atleast_2d(origins)
    out = np.full(len(origins), np.inf)
    for sl, t in _mesh_ray_hits(mesh, origins, dirs):
        out[sl] = t.min(axis=1)
    return out


def _mesh_ray_count(mesh, origins, dirs):
    origins = np.atleast_2d(origins)
    out = np.zeros(len(origins), dtype=np.int64)
    for sl, t in _mesh_ray_hits(mesh, origins, dirs):
        out[sl] = np.isfinite(t).sum(axis=1)
    return out


def tangent_rays(surface: Surface, n: int, rng: np.random.Generator, pullback: float = 4.0):
    """Exact tangent rays: through a surface sample, perpendicular to its
    normal, with the origin pulled back outside the scene.

    Returns (origins (n,3), directions (n,3) unit).
    """
    pts, normals = surface.sample_surface(n, rng)
    rand = rng.normal(size=(n, 3))
    rand -= np.einsum("ij,ij->i", rand, normals)[:, None] * normals
    lens = np.linalg.norm(rand, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    dirs = rand / lens
    origins = pts - pullback * surface.diameter() * dirs
    return origins, dirs


def make_surface(kind: str, **kw) -> Surface:
    """Factory for manifest/CLI scene descriptions."""
    kind = kind.lower()
    if kind == "sphere":
        return Sphere(np.asarray(kw.get("center", (0, 0, 0))), float(kw["radius"]))
    if kind == "box":
        return Box(
            np.asarray(kw.get("center", (0, 0, 0))),
            np.asarray(kw["half_extents"]),
        )
    if kind == "cylinder":
        return Cylinder(
            np.asarray(kw.get("center", (0, 0, 0))),
            float(kw["radius"]),
            float(kw["half_height"]),
            np.asarray(kw.get("axis", (0, 0, 1))),
        )
    if kind == "mesh":
        from .meshing import load_mesh

        return MeshSurface(load_mesh(kw["path"]))
    raise DomainError(f"unknown surface kind {kind!r}")
