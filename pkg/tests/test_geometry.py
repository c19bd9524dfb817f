"""Mesh containers, file IO, the signed-distance oracle, and sampling."""

import numpy as np
import pytest

from msdf.geometry.mesh import (MeshError, TriangleMesh, load_mesh, load_obj,
                                normalize_to_unit_cube, save_obj)
from msdf.geometry.oracle import SdfOracle
from msdf.geometry.sampling import (farthest_point_sample, sample_near_surface,
                                    sample_surface)
from msdf.shapes import box, icosphere


def _tetra():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], dtype=np.int64)
    return TriangleMesh(v, f)


class TestTriangleMesh:
    def test_index_bounds_rejected(self):
        v = np.zeros((3, 3))
        v[1, 0] = 1.0
        v[2, 1] = 1.0
        with pytest.raises(MeshError):
            TriangleMesh(v, np.array([[0, 1, 3]], dtype=np.int64))

    def test_non_finite_rejected(self):
        v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [np.nan, 1.0, 0.0]])
        with pytest.raises(MeshError):
            TriangleMesh(v, np.array([[0, 1, 2]], dtype=np.int64))

    def test_watertight_and_euler(self):
        m = _tetra()
        assert m.is_watertight()
        assert m.euler_characteristic() == 2

    def test_open_surface_not_watertight(self):
        v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        m = TriangleMesh(v, np.array([[0, 1, 2]], dtype=np.int64))
        assert not m.is_watertight()

    def test_areas_and_normals(self):
        m = _tetra()
        assert m.face_areas()[0] == pytest.approx(0.5)
        n = m.face_normals()
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)


class TestNormalize:
    def test_cube_corners(self):
        v = np.array([[0.0, 0.0, 0.0], [4.0, 4.0, 4.0], [4.0, 0.0, 0.0]])
        m = TriangleMesh(v, np.array([[0, 1, 2]], dtype=np.int64))
        out = normalize_to_unit_cube(m, margin=0.0)
        np.testing.assert_allclose(out.vertices[0], [-1.0, -1.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(out.vertices[1], [1.0, 1.0, 1.0], atol=1e-12)

    def test_uniform_scale_only(self):
        v = np.array([[0.0, 0.0, 0.0], [2.0, 1.0, 1.0], [2.0, 0.0, 1.0]])
        m = TriangleMesh(v, np.array([[0, 1, 2]], dtype=np.int64))
        out = normalize_to_unit_cube(m, margin=0.0)
        lo, hi = out.bounds()
        np.testing.assert_allclose(lo, [-1.0, -0.5, -0.5], atol=1e-12)
        np.testing.assert_allclose(hi, [1.0, 0.5, 0.5], atol=1e-12)

    def test_idempotent(self):
        m = normalize_to_unit_cube(_tetra(), margin=0.0)
        again = normalize_to_unit_cube(m, margin=0.0)
        np.testing.assert_allclose(again.vertices, m.vertices, atol=1e-9)

    def test_longest_edge_is_two(self):
        out = normalize_to_unit_cube(_tetra(), margin=0.0)
        lo, hi = out.bounds()
        assert (hi - lo).max() == pytest.approx(2.0, abs=1e-6)

    def test_zero_extent_rejected(self):
        v = np.zeros((3, 3))
        m = TriangleMesh(v, np.array([[0, 1, 2]], dtype=np.int64))
        with pytest.raises(MeshError):
            normalize_to_unit_cube(m)


class TestMeshIo:
    def test_single_triangle_obj(self, tmp_path):
        p = tmp_path / "tri.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        m = load_mesh(str(p))
        assert m.num_vertices == 3 and m.num_faces == 1

    def test_quad_fan_triangulation(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert load_mesh(str(p)).num_faces == 2

    def test_nan_vertex_rejected(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 nan\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        with pytest.raises(MeshError):
            load_mesh(str(p))

    def test_empty_rejected(self, tmp_path):
        p = tmp_path / "empty.obj"
        p.write_text("# nothing\n")
        with pytest.raises(MeshError):
            load_mesh(str(p))

    def test_obj_roundtrip(self, tmp_path):
        m = _tetra()
        p = tmp_path / "out.obj"
        save_obj(m, str(p))
        back = load_obj(str(p))
        np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-6)
        np.testing.assert_array_equal(back.faces, m.faces)


class TestSdfOracle:
    def test_sphere_inside_outside(self):
        oracle = SdfOracle(icosphere(4, 0.5))
        assert oracle.signed_distance(np.zeros((1, 3)))[0] == pytest.approx(-0.5, abs=2e-3)
        assert oracle.signed_distance(np.array([[1.0, 0, 0]]))[0] == pytest.approx(0.5, abs=2e-3)

    def test_zero_on_vertex(self):
        mesh = icosphere(3, 0.5)
        d = SdfOracle(mesh).signed_distance(mesh.vertices[:10])
        assert np.abs(d).max() < 1e-6

    def test_magnitude_is_unsigned_distance(self, sphere_oracle):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1, 1, size=(200, 3))
        sd = sphere_oracle.signed_distance(pts)
        unsigned = sphere_oracle.closest(pts)[0]
        np.testing.assert_allclose(np.abs(sd), unsigned, atol=1e-6)

    def test_gradient_direction_and_eikonal(self):
        oracle = SdfOracle(icosphere(4, 0.5))
        g = oracle.sdf_gradient(np.array([[0.8, 0.0, 0.0], [-0.8, 0.0, 0.0]]))
        np.testing.assert_allclose(g[0], [1.0, 0.0, 0.0], atol=1e-2)
        np.testing.assert_allclose(g[1], [-1.0, 0.0, 0.0], atol=1e-2)
        rng = np.random.default_rng(5)
        pts = rng.uniform(-0.9, 0.9, size=(1000, 3))
        keep = np.abs(np.linalg.norm(pts, axis=1) - 0.5) > 0.05  # skip the medial axis
        norms = np.linalg.norm(oracle.sdf_gradient(pts[keep]), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_lipschitz(self, sphere_oracle):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, size=(500, 3))
        y = rng.uniform(-1, 1, size=(500, 3))
        fx = sphere_oracle.signed_distance(x)
        fy = sphere_oracle.signed_distance(y)
        assert (np.abs(fx - fy) <= np.linalg.norm(x - y, axis=1) + 1e-6).all()

    def test_sign_modes_agree(self):
        mesh = box(0.5, 0.4, 0.3)
        pn = SdfOracle(mesh, sign_mode="pseudonormal")
        wn = SdfOracle(mesh, sign_mode="winding")
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.9, 0.9, size=(1000, 3))
        s1 = np.sign(pn.signed_distance(pts))
        s2 = np.sign(wn.signed_distance(pts))
        assert (s1 == s2).all()

    def test_unknown_sign_mode(self, sphere_mesh):
        with pytest.raises(ValueError):
            SdfOracle(sphere_mesh, sign_mode="raycast")

    def test_query_matches_separate_calls(self, sphere_oracle):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-1, 1, size=(50, 3))
        sd, grad = sphere_oracle.query(pts)
        np.testing.assert_allclose(sd, sphere_oracle.signed_distance(pts), atol=1e-12)
        np.testing.assert_allclose(grad, sphere_oracle.sdf_gradient(pts), atol=1e-12)


class TestSampling:
    def test_single_triangle_containment(self):
        v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        m = TriangleMesh(v, np.array([[0, 1, 2]], dtype=np.int64))
        p = sample_surface(m, 1, 0).points[0]
        assert p[0] >= 0 and p[1] >= 0 and p[0] + p[1] <= 1 and p[2] == 0

    def test_area_uniform_split(self):
        # 2:1 area split; per-triangle counts within 3 sigma of binomial
        v = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                      [0.0, -1.0, 0.0]])
        f = np.array([[0, 1, 2], [0, 3, 1]], dtype=np.int64)
        m = TriangleMesh(v, f)
        n = 100_000
        s = sample_surface(m, n, 3)
        counts = np.bincount(s.face_index, minlength=2)
        p = m.face_areas() / m.total_area()
        sigma = np.sqrt(n * p[0] * (1 - p[0]))
        assert abs(counts[0] - n * p[0]) < 3 * sigma

    def test_deterministic(self, sphere_mesh):
        a = sample_surface(sphere_mesh, 1000, 9).points
        b = sample_surface(sphere_mesh, 1000, 9).points
        np.testing.assert_array_equal(a, b)

    def test_normals_match_faces(self, sphere_mesh):
        s = sample_surface(sphere_mesh, 500, 10)
        np.testing.assert_allclose(s.normals, sphere_mesh.face_normals()[s.face_index],
                                   atol=1e-12)

    def test_near_surface_variance(self, sphere_mesh):
        pts = sample_near_surface(sphere_mesh, 100_000, 0.01, 11)
        base = sample_surface(sphere_mesh, 100_000, 11).points
        offsets = pts - base
        var = offsets.var(axis=0)
        np.testing.assert_allclose(var, 0.01, rtol=0.1)

    def test_near_surface_zero_variance(self, sphere_mesh):
        pts = sample_near_surface(sphere_mesh, 100, 0.0, 12)
        base = sample_surface(sphere_mesh, 100, 12).points
        np.testing.assert_allclose(pts, base, atol=1e-12)

    def test_near_surface_expected_distance(self, sphere_oracle):
        # |sdf| of displaced points vs a direct Monte-Carlo reference of the
        # same displacement process applied to the analytic sphere
        pts = sample_near_surface(sphere_oracle.mesh, 50_000, 0.01, 13)
        got = np.abs(sphere_oracle.signed_distance(pts)).mean()
        radius = np.linalg.norm(sphere_oracle.mesh.vertices, axis=1).mean()
        rng = np.random.default_rng(13)
        base = rng.normal(0.0, 1.0, size=(50_000, 3))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        mc = np.abs(np.linalg.norm(base * radius + rng.normal(0.0, 0.1, size=(50_000, 3)),
                                   axis=1) - radius).mean()
        assert got == pytest.approx(mc, rel=0.05)


class TestFarthestPointSample:
    def test_line_example(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0]])
        seed = next(s for s in range(50)
                    if np.random.default_rng(s).integers(3) == 0)
        idx = farthest_point_sample(pts, 2, seed)
        assert list(idx) == [0, 2]

    def test_full_set_is_permutation(self):
        rng = np.random.default_rng(14)
        pts = rng.normal(size=(8, 3))
        idx = farthest_point_sample(pts, 8, 0)
        assert sorted(idx) == list(range(8))

    def test_count_bounds(self):
        pts = np.zeros((4, 3))
        with pytest.raises(ValueError):
            farthest_point_sample(pts, 5, 0)

    def test_greedy_step_optimal_small(self):
        # each added point is the true argmax of min-distance to the prefix
        rng = np.random.default_rng(15)
        pts = rng.normal(size=(8, 3))
        idx = farthest_point_sample(pts, 5, 3)
        for i in range(1, 5):
            prefix = pts[idx[:i]]
            dists = np.linalg.norm(pts[:, None] - prefix[None], axis=2).min(axis=1)
            assert dists[idx[i]] == pytest.approx(dists.max())

    def test_deterministic(self):
        rng = np.random.default_rng(16)
        pts = rng.normal(size=(100, 3))
        np.testing.assert_array_equal(farthest_point_sample(pts, 10, 5),
                                      farthest_point_sample(pts, 10, 5))
