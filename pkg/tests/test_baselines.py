"""Tests for the dense-grid and triplane competitor representations."""

import numpy as np
import pytest

from msdf.baselines import (DenseGrid, TriplaneLinear, budget_sweep,
                            fit_dense_grid, fit_triplane,
                            triplane_loss_and_grad, triplane_resolution)
from msdf.finetune import DivergenceError


class TestDenseGrid:
    def test_budget_355k_gives_resolution_70(self, sphere_oracle):
        grid = fit_dense_grid(sphere_oracle, 355_000)
        assert grid.resolution == 70
        assert grid.param_count == 70 ** 3 <= 355_000

    def test_eval_at_nodes_returns_stored_samples(self, sphere_oracle):
        grid = fit_dense_grid(sphere_oracle, 5000)
        r = grid.resolution
        axis = np.linspace(-1.0, 1.0, r)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        np.testing.assert_allclose(grid.eval(nodes),
                                   grid.values.ravel().astype(np.float64),
                                   atol=1e-12)

    def test_nodes_hold_oracle_sdf(self, sphere_oracle):
        grid = fit_dense_grid(sphere_oracle, 1000)
        axis = np.linspace(-1.0, 1.0, grid.resolution)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        ref = sphere_oracle.signed_distance(nodes).astype(np.float32)
        np.testing.assert_array_equal(grid.values.ravel(), ref)

    def test_reproduces_linear_fields(self):
        coeff = np.array([0.3, -0.7, 0.45])
        axis = np.linspace(-1.0, 1.0, 9)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        vals = coeff[0] * gx + coeff[1] * gy + coeff[2] * gz + 0.05
        grid = DenseGrid(vals.astype(np.float32))
        pts = np.random.default_rng(0).uniform(-1, 1, (500, 3))
        np.testing.assert_allclose(grid.eval(pts), pts @ coeff + 0.05,
                                   atol=1e-6)

    def test_budget_floor(self, sphere_oracle):
        with pytest.raises(ValueError, match="budget"):
            fit_dense_grid(sphere_oracle, 7)
        assert fit_dense_grid(sphere_oracle, 8).resolution == 2
        # never exceeds the budget from above
        assert fit_dense_grid(sphere_oracle, 26).resolution == 2

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            DenseGrid(np.zeros((3, 3), np.float32))


class TestTriplane:
    def test_budget_355k_gives_resolution_60(self):
        assert triplane_resolution(355_000) == 60
        assert 3 * 60 * 60 * 32 + 32 + 1 <= 355_000
        assert 3 * 61 * 61 * 32 + 32 + 1 > 355_000

    def test_budget_too_small(self):
        with pytest.raises(ValueError, match="budget"):
            triplane_resolution(100)

    def test_hand_computed_bilinear_case(self):
        # R=2, C=1 planes; point (0.5, -0.2, 0.8) has plane fractions
        # (x,y)=(0.75,0.4), (x,z)=(0.75,0.9), (y,z)=(0.4,0.9)
        planes = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])  # (2,2,1) template
        p0 = planes.reshape(2, 2, 1)
        p1 = p0 + 4.0
        p2 = p0 + 8.0
        tri = TriplaneLinear(np.stack([p0, p1, p2]).astype(np.float32),
                             np.array([2.0], np.float32), 0.5)
        f0 = 0.25 * 0.6 * 1 + 0.25 * 0.4 * 2 + 0.75 * 0.6 * 3 + 0.75 * 0.4 * 4
        f1 = 0.25 * 0.1 * 5 + 0.25 * 0.9 * 6 + 0.75 * 0.1 * 7 + 0.75 * 0.9 * 8
        f2 = 0.6 * 0.1 * 9 + 0.6 * 0.9 * 10 + 0.4 * 0.1 * 11 + 0.4 * 0.9 * 12
        out = tri.eval(np.array([[0.5, -0.2, 0.8]]))
        assert out[0] == pytest.approx(2.0 * (f0 + f1 + f2) + 0.5, abs=1e-12)

    def test_param_count_formula(self):
        tri = TriplaneLinear(np.zeros((3, 5, 5, 4), np.float32),
                             np.zeros(4, np.float32), 0.0)
        assert tri.param_count == 3 * 25 * 4 + 4 + 1

    def test_decoder_width_validation(self):
        with pytest.raises(ValueError, match="decoder"):
            TriplaneLinear(np.zeros((3, 4, 4, 2), np.float32),
                           np.zeros(3, np.float32), 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        planes = rng.normal(size=(3, 4, 4, 2)) * 0.5
        w = rng.normal(size=2)
        b = 0.1
        pts = rng.uniform(-0.95, 0.95, (30, 3))
        tf = rng.normal(size=30) * 0.3
        loss, gp, gw, gb = triplane_loss_and_grad(planes, w, b, pts, tf)

        def at(pl, wv, bv):
            return triplane_loss_and_grad(pl, wv, bv, pts, tf)[0]

        h = 1e-6
        for j in range(planes.size):
            hi, lo = planes.copy(), planes.copy()
            hi.ravel()[j] += h
            lo.ravel()[j] -= h
            fd = (at(hi, w, b) - at(lo, w, b)) / (2 * h)
            assert abs(gp.ravel()[j] - fd) <= 1e-3 * abs(fd) + 1e-8
        for j in range(w.size):
            hi, lo = w.copy(), w.copy()
            hi[j] += h
            lo[j] -= h
            fd = (at(planes, hi, b) - at(planes, lo, b)) / (2 * h)
            assert abs(gw[j] - fd) <= 1e-3 * abs(fd) + 1e-8
        fd = (at(planes, w, b + h) - at(planes, w, b - h)) / (2 * h)
        assert abs(gb - fd) <= 1e-3 * abs(fd) + 1e-8

    def test_loss_decreases_during_fit(self, sphere_oracle):
        history = []
        tri = fit_triplane(sphere_oracle, 6200, steps=100, seed=0,
                           batch=4096, lr=1e-3, surface_count=20_000,
                           near_count=10_000, history=history)
        assert tri.resolution == 8
        assert len(history) == 100
        assert np.mean(history[-10:]) < np.mean(history[:10])
        assert history[-1] < history[0]

    def test_divergence_aborts(self, sphere_oracle):
        with pytest.raises(DivergenceError, match="diverged"):
            fit_triplane(sphere_oracle, 6200, steps=60, seed=0, batch=2048,
                         lr=20.0, surface_count=5_000, near_count=2_000)

    def test_fit_respects_budget(self, sphere_oracle):
        tri = fit_triplane(sphere_oracle, 20_000, steps=2, seed=0,
                           batch=1024, surface_count=2_000, near_count=1_000)
        assert tri.param_count <= 20_000
        assert tri.channels == 32


class TestBudgetSweep:
    def test_rows_and_orderings(self, sphere_oracle):
        rows = budget_sweep(sphere_oracle, [6000], mesh_id="sphere",
                            fine_tune_steps=5, triplane_steps=5, grid_res=24,
                            seed=0, chamfer_samples=1500)
        assert [r.representation for r in rows] == ["msdf", "dense_grid",
                                                    "triplane"]
        by_rep = {r.representation: r for r in rows}
        for r in rows:
            assert r.mesh_id == "sphere" and r.budget == 6000
            assert r.fit_seconds >= 0.0 and r.extract_seconds >= 0.0
        assert np.isfinite(by_rep["dense_grid"].chamfer)
        assert np.isfinite(by_rep["msdf"].chamfer)
        # sampling the oracle is cheaper than optimizing local grids
        assert by_rep["dense_grid"].fit_seconds < by_rep["msdf"].fit_seconds

    def test_unknown_representation_rejected(self, sphere_oracle):
        with pytest.raises(ValueError, match="unknown"):
            budget_sweep(sphere_oracle, [6000], reps=("msdf", "voxnet"))
