"""Reconstruction quality metrics: symmetric Chamfer distance and
normal-consistency cosine similarity over uniform mesh samples.

All nearest-neighbor queries are exact (KD-tree), so metric values are
reproducible to floating-point roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .meshing import TriMesh

DEFAULT_SAMPLES = 10_000
DEFAULT_KNN = 300


@dataclass
class OrientedPointSet:
    """Surface samples with unit normals; `degenerate` flags points whose
    normal came from a rank-deficient neighborhood."""

    points: np.ndarray
    normals: np.ndarray
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise DomainError("points and normals must have equal length")
        if len(self.normals):
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise DomainError("normals must be unit length")

    def __len__(self):
        return len(self.points)


def sample_mesh(mesh: TriMesh, n: int, rng: np.random.Generator | None = None) -> OrientedPointSet:
    """n area-uniform samples with face normals."""
    if rng is None:
        rng = np.random.default_rng(0)
    if n == 0:
        return OrientedPointSet(np.empty((0, 3)), np.empty((0, 3)))
    areas = mesh.face_areas()
    total = areas.sum()
    if len(mesh.faces) == 0 or total <= 0:
        raise DomainError("mesh has no positive-area faces")
    fi = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    tri = mesh.vertices[mesh.faces[fi]]
    pts = tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])
    return OrientedPointSet(pts, mesh.face_normals()[fi])


def estimate_normals(points: np.ndarray, k: int = DEFAULT_KNN) -> OrientedPointSet:
    """Per-point normals from k-NN covariance (smallest eigenvector).

    Normal signs are arbitrary; consumers take absolute cosines.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) <= k:
        raise DomainError(f"need more than k={k} points, got {len(points)}")
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k)
    nbrs = points[idx]  # (N, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    lens = np.linalg.norm(normals, axis=1)
    degenerate = (lens < 1e-12) | (w[:, 1] < 1e-20)
    normals = np.where(
        lens[:, None] > 1e-12, normals / np.maximum(lens, 1e-12)[:, None],
        np.array([0.0, 0.0, 1.0]),
    )
    return OrientedPointSet(points, normals, degenerate)


def _as_points(x) -> np.ndarray:
    if isinstance(x, OrientedPointSet):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def chamfer(x, x_hat) -> float:
    """Symmetric unsquared Chamfer distance in meters."""
    a = _as_points(x)
    b = _as_points(x_hat)
    if len(a) == 0 or len(b) == 0:
        raise DomainError("chamfer requires non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(d_ab.mean() + d_ba.mean())


def normal_consistency(gt: OrientedPointSet, pred: OrientedPointSet) -> float:
    """Mean |cos| between gt normals and normals of the nearest pred point."""
    if len(gt) == 0 or len(pred) == 0:
        raise DomainError("normal consistency requires non-empty sets")
    _, idx = cKDTree(pred.points).query(gt.points)
    cos = np.abs(np.einsum("ij,ij->i", gt.normals, pred.normals[idx]))
    return float(cos.mean())
