"""Marching cubes, mesh containers, refinement, and mesh file I/O."""

import numpy as np
import pytest

from eventhull import (
    OccupancyGrid,
    RefineConfig,
    TriMesh,
    icosphere,
    load_mesh,
    marching_cubes,
    refine_loss,
    refine_mesh,
    save_mesh,
)
from eventhull.errors import DomainError
from eventhull.metrics import chamfer, sample_mesh


def ball_grid(dim, radius=1.0, extent=1.2):
    voxel = 2.0 * extent / dim
    x = -extent + (np.arange(dim) + 0.5) * voxel
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    occ = X**2 + Y**2 + Z**2 < radius**2
    return OccupancyGrid((dim, dim, dim), np.full(3, -extent), voxel, occ)


class TestMarchingCubes:
    def test_single_voxel_closes(self):
        occ = np.zeros((5, 5, 5), bool)
        occ[2, 2, 2] = True
        mesh = marching_cubes(OccupancyGrid((5, 5, 5), np.zeros(3), 0.1, occ))
        assert mesh.is_watertight()
        assert 0.0 < mesh.volume() <= 0.1**3
        center = mesh.vertices.mean(axis=0)
        np.testing.assert_allclose(center, [0.25, 0.25, 0.25], atol=1e-9)

    def test_sphere_volume_within_3_percent(self):
        mesh = marching_cubes(ball_grid(128))
        assert mesh.volume() == pytest.approx(4.0 / 3.0 * np.pi, rel=0.03)
        assert mesh.is_watertight()
        assert mesh.connected_component_count() == 1

    def test_two_blobs_two_components(self):
        occ = np.zeros((10, 10, 10), bool)
        occ[1:3, 1:3, 1:3] = True
        occ[6:9, 6:9, 6:9] = True
        mesh = marching_cubes(OccupancyGrid((10, 10, 10), np.zeros(3), 1.0, occ))
        assert mesh.connected_component_count() == 2
        assert mesh.is_watertight()

    def test_empty_grid_rejected(self):
        occ = np.zeros((4, 4, 4), bool)
        with pytest.raises(DomainError):
            marching_cubes(OccupancyGrid((4, 4, 4), np.zeros(3), 1.0, occ))

    def test_positive_orientation(self):
        mesh = marching_cubes(ball_grid(32))
        assert mesh.volume() > 0
        # face normals point outward on a convex-ish shape
        centroids = mesh.vertices[mesh.faces].mean(axis=1)
        outward = np.einsum("ij,ij->i", mesh.face_normals(), centroids)
        assert np.mean(outward > 0) > 0.99


class TestRefineLoss:
    def test_zero_when_vertices_on_points_and_edges_degenerate(self):
        v = np.tile([0.3, -0.2, 0.9], (3, 1))
        mesh = TriMesh(v, np.array([[0, 1, 2]]))
        cfg = RefineConfig(lambda1=1.0, lambda2=0.1, eps_d=0.5, iters=1, step_size=1e-3)
        loss, grad = refine_loss(mesh, v[:1], cfg)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_single_quadratic_well(self):
        d = 0.07
        v = np.tile([0.0, 0.0, 0.0], (3, 1))
        mesh = TriMesh(v, np.array([[0, 1, 2]]))
        cfg = RefineConfig(lambda1=2.0, lambda2=0.0, eps_d=0.5, iters=1, step_size=1e-3)
        loss, grad = refine_loss(mesh, np.array([[d, 0.0, 0.0]]), cfg)
        assert loss == pytest.approx(2.0 * d**2)
        # averaged over the 3 coincident vertices, each pulls toward the point
        np.testing.assert_allclose(grad.sum(axis=0), [-2 * 2.0 * d, 0.0, 0.0])

    def test_clamp_disables_far_vertices(self):
        v = np.tile([0.0, 0.0, 0.0], (3, 1))
        mesh = TriMesh(v, np.array([[0, 1, 2]]))
        cfg = RefineConfig(lambda1=1.0, lambda2=0.0, eps_d=0.01, iters=1, step_size=1e-3)
        loss, grad = refine_loss(mesh, np.array([[5.0, 0.0, 0.0]]), cfg)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_central_differences(self, seed):
        g = np.random.default_rng(seed)
        nv = 12
        verts = g.normal(size=(nv, 3))
        faces = np.stack([g.permutation(nv)[:3] for _ in range(8)])
        surf = g.normal(size=(20, 3))
        mesh = TriMesh(verts, faces)
        cfg = RefineConfig(lambda1=1.3, lambda2=0.4, eps_d=1.5, iters=1, step_size=1e-3)
        _, grad = refine_loss(mesh, surf, cfg)
        h = 1e-6
        num = np.zeros_like(grad)
        for i in range(nv):
            for c in range(3):
                for s, sign in ((h, 1.0), (-h, -1.0)):
                    v2 = verts.copy()
                    v2[i, c] += s
                    l2, _ = refine_loss(TriMesh(v2, faces), surf, cfg)
                    num[i, c] += sign * l2
        num /= 2 * h
        scale = max(np.abs(num).max(), 1.0)
        assert np.abs(grad - num).max() / scale < 1e-5

    def test_no_surface_points_rejected(self):
        mesh = icosphere(1)
        cfg = RefineConfig(eps_d=0.1)
        with pytest.raises(DomainError):
            refine_loss(mesh, np.empty((0, 3)), cfg)


class TestRefineMesh:
    def test_zero_iters_is_identity(self):
        mesh = icosphere(2)
        cfg = RefineConfig(eps_d=0.1, iters=0, step_size=1e-3)
        out, trace = refine_mesh(mesh, mesh.vertices, cfg)
        assert trace == []
        np.testing.assert_array_equal(out.vertices, mesh.vertices)
        np.testing.assert_array_equal(out.faces, mesh.faces)

    def test_shrunk_sphere_recovers(self):
        g = np.random.default_rng(41)
        mesh = icosphere(3, radius=0.95)  # 5% shrunk
        target = icosphere(4)
        surf = sample_mesh(target, 20_000, g).points
        cfg = RefineConfig(lambda1=1.0, lambda2=0.1, eps_d=0.15, iters=300,
                           step_size=2e-3)
        refined, trace = refine_mesh(mesh, surf, cfg)

        before = chamfer(sample_mesh(mesh, 5000, g).points, surf)
        after = chamfer(sample_mesh(refined, 5000, g).points, surf)
        assert after <= 0.5 * before

    def test_trace_non_increasing_over_windows(self):
        g = np.random.default_rng(43)
        mesh = icosphere(2, radius=0.9)
        surf = sample_mesh(icosphere(3), 5000, g).points
        cfg = RefineConfig(lambda1=1.0, lambda2=0.1, eps_d=0.2, iters=120,
                           step_size=1e-3)
        _, trace = refine_mesh(mesh, surf, cfg)
        trace = np.asarray(trace)
        warm = trace[20:]
        windows = warm[10:] - warm[:-10]
        assert np.all(windows <= 1e-12)

    def test_custom_nn_query_matches_default(self):
        from scipy.spatial import cKDTree

        g = np.random.default_rng(47)
        mesh = icosphere(2, radius=0.9)
        surf = sample_mesh(icosphere(3), 2000, g).points
        cfg = RefineConfig(lambda1=1.0, lambda2=0.1, eps_d=0.2, iters=15,
                           step_size=1e-3)
        tree = cKDTree(surf)

        def nn_query(pts):
            d, idx = tree.query(pts)
            return d, surf[idx]

        a, ta = refine_mesh(mesh, surf, cfg)
        b, tb = refine_mesh(mesh, surf, cfg, nn_query=nn_query)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        assert ta == tb


class TestTriMesh:
    def test_watertight_detects_open_mesh(self):
        tri = icosphere(1)
        assert tri.is_watertight()
        assert not TriMesh(tri.vertices, tri.faces[:-1]).is_watertight()

    def test_volume_of_icosphere_approaches_sphere(self):
        assert icosphere(4).volume() == pytest.approx(4.0 / 3.0 * np.pi, rel=0.01)

    def test_icosphere_radius_and_center(self):
        mesh = icosphere(2, radius=0.5, center=(1.0, 2.0, 3.0))
        r = np.linalg.norm(mesh.vertices - [1.0, 2.0, 3.0], axis=1)
        np.testing.assert_allclose(r, 0.5, atol=1e-12)

    def test_adjacency_is_symmetric(self):
        mesh = icosphere(1)
        offsets, indices = mesh.adjacency_csr()
        nbrs = mesh.neighbors
        for i in range(len(mesh.vertices)):
            for j in nbrs[i]:
                assert i in nbrs[j]

    @pytest.mark.parametrize("ext", ["ply", "obj"])
    def test_mesh_round_trip(self, tmp_path, ext):
        mesh = icosphere(2, radius=0.7)
        path = tmp_path / f"m.{ext}"
        save_mesh(mesh, path)
        back = load_mesh(path)
        np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-6)
        np.testing.assert_array_equal(back.faces, mesh.faces)
        assert back.volume() == pytest.approx(mesh.volume(), rel=1e-5)

    def test_bad_face_index_rejected(self):
        with pytest.raises(DomainError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))
