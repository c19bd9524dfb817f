"""Tests for pool construction, the fine-tune loss/gradients, and the loop."""

import numpy as np
import pytest

from msdf.finetune import (DivergenceError, FineTuneHistory, build_pools,
                           fine_tune, loss_and_grad)
from msdf.geometry.sampling import sample_near_surface, sample_surface


def _toy():
    """Two overlapping grids, generic values, and a covered random batch."""
    rng = np.random.default_rng(3)
    centers = np.array([[-0.2, 0.0, 0.1], [0.25, 0.05, -0.1]])
    scales = np.array([0.6, 0.55])
    values = rng.normal(size=(2, 27)) * 0.3
    pts = centers[rng.integers(0, 2, 40)] + rng.uniform(-0.4, 0.4, (40, 3))
    target_f = rng.normal(size=40) * 0.2
    target_g = rng.normal(size=(40, 3))
    return centers, scales, values, pts, target_f, target_g


class TestBuildPools:
    def test_composition(self, sphere_oracle):
        pts, f, g = build_pools(sphere_oracle, 400, 300, 0.01, seed=5)
        assert pts.shape == (700, 3)
        assert f.shape == (700,)
        assert g.shape == (700, 3)
        # surface block: zero sdf targets, unit normal targets
        np.testing.assert_array_equal(f[:400], 0.0)
        np.testing.assert_allclose(np.linalg.norm(g[:400], axis=1), 1.0,
                                   atol=1e-9)

    def test_surface_block_matches_sampler(self, sphere_oracle):
        pts, _, g = build_pools(sphere_oracle, 400, 300, 0.01, seed=5)
        surf = sample_surface(sphere_oracle.mesh, 400, seed=5)
        np.testing.assert_array_equal(pts[:400], surf.points)
        np.testing.assert_array_equal(g[:400], surf.normals)

    def test_near_block_targets_come_from_oracle(self, sphere_oracle):
        pts, f, g = build_pools(sphere_oracle, 400, 300, 0.01, seed=5)
        near = sample_near_surface(sphere_oracle.mesh, 300, 0.01, seed=6)
        np.testing.assert_array_equal(pts[400:], near)
        ref_f, ref_g = sphere_oracle.query(near)
        np.testing.assert_array_equal(f[400:], ref_f)
        np.testing.assert_array_equal(g[400:], ref_g)

    def test_deterministic(self, sphere_oracle):
        a = build_pools(sphere_oracle, 200, 100, 0.01, seed=9)
        b = build_pools(sphere_oracle, 200, 100, 0.01, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        c = build_pools(sphere_oracle, 200, 100, 0.01, seed=10)
        assert not np.array_equal(a[0], c[0])


class TestLossAndGrad:
    def test_loss_combines_terms(self):
        centers, scales, values, pts, f, g = _toy()
        for lam in (0.0, 0.1, 0.7):
            loss, l1, l2, *_ = loss_and_grad(centers, scales, values, 3,
                                             pts, f, g, lam)
            assert loss == pytest.approx(l1 + lam * l2, abs=1e-15)
            assert l1 >= 0.0 and l2 >= 0.0

    def test_gradients_match_finite_differences(self):
        # every parameter of the 2-grid toy, central differences, h=1e-6
        centers, scales, values, pts, f, g = _toy()
        lam = 0.3
        _, _, _, dc, dsc, dv, _ = loss_and_grad(centers, scales, values, 3,
                                                pts, f, g, lam)

        def loss_at(c, s, v):
            return loss_and_grad(c, s, v, 3, pts, f, g, lam)[0]

        h = 1e-6
        for analytic, base in ((dc, centers), (dsc, scales), (dv, values)):
            flat_g = analytic.ravel()
            for j in range(base.size):
                hi = base.copy().ravel()
                lo = base.copy().ravel()
                hi[j] += h
                lo[j] -= h
                args = {id(centers): centers, id(scales): scales,
                        id(values): values}
                args[id(base)] = hi.reshape(base.shape)
                fd_hi = loss_at(args[id(centers)], args[id(scales)],
                                args[id(values)])
                args[id(base)] = lo.reshape(base.shape)
                fd_lo = loss_at(args[id(centers)], args[id(scales)],
                                args[id(values)])
                fd = (fd_hi - fd_lo) / (2 * h)
                assert abs(flat_g[j] - fd) <= 1e-3 * max(abs(fd), 1e-8), \
                    f"param block {base.shape} entry {j}: {flat_g[j]} vs {fd}"

    def test_uncovered_points_do_not_contribute(self):
        centers, scales, values, pts, f, g = _toy()
        ref = loss_and_grad(centers, scales, values, 3, pts, f, g, 0.5)
        far = np.vstack([pts, [[5.0, 5.0, 5.0]]])
        ext = loss_and_grad(centers, scales, values, 3, far,
                            np.append(f, 1.0), np.vstack([g, [[1, 0, 0]]]), 0.5)
        assert ext[6] == ref[6] == len(pts)
        assert ext[0] == pytest.approx(ref[0], abs=1e-15)
        np.testing.assert_array_equal(ext[3], ref[3])

    def test_all_points_outside_support_rejected(self):
        centers, scales, values, *_ = _toy()
        pts = np.full((4, 3), 9.0)
        with pytest.raises(ValueError, match="support"):
            loss_and_grad(centers, scales, values, 3, pts,
                          np.zeros(4), np.zeros((4, 3)), 0.1)


class TestFineTune:
    def test_surface_error_strictly_decreases(self, sphere_bank, sphere_oracle):
        # data-term-only objective, 200 steps
        probes = sample_surface(sphere_oracle.mesh, 4000, seed=77).points
        before = np.abs(sphere_bank.eval(probes)).mean()
        tuned = fine_tune(sphere_bank, sphere_oracle, steps=200, lam=0.0,
                          batch=4096, seed=0, surface_count=20_000,
                          near_count=10_000)
        after = np.abs(tuned.eval(probes)).mean()
        assert after < before

    def test_history_trend_and_coverage(self, sphere_bank, sphere_oracle):
        hist = FineTuneHistory()
        fine_tune(sphere_bank, sphere_oracle, steps=100, batch=4096, seed=0,
                  surface_count=20_000, near_count=10_000, history=hist)
        assert len(hist.losses) == len(hist.l1) == len(hist.l2) == 100
        means = hist.window_means(50)
        assert means.shape == (2,)
        assert means[-1] < means[0]
        assert min(hist.covered_fraction) > 0.99

    def test_window_means_shapes(self):
        hist = FineTuneHistory()
        assert hist.window_means().shape == (0,)
        hist.losses = list(np.arange(130, dtype=np.float64))
        np.testing.assert_allclose(hist.window_means(100), [49.5])
        hist2 = FineTuneHistory(losses=[2.0, 4.0])
        np.testing.assert_allclose(hist2.window_means(100), [3.0])

    def test_freeze_geometry_only_moves_values(self, sphere_bank, sphere_oracle):
        tuned = fine_tune(sphere_bank, sphere_oracle, steps=10, batch=2048,
                          seed=0, surface_count=5_000, near_count=2_000,
                          freeze_geometry=True)
        np.testing.assert_array_equal(tuned.centers, sphere_bank.centers)
        np.testing.assert_array_equal(tuned.scales, sphere_bank.scales)
        assert not np.array_equal(tuned.values, sphere_bank.values)

    def test_input_bank_is_not_mutated(self, sphere_bank, sphere_oracle):
        snap = (sphere_bank.centers.copy(), sphere_bank.scales.copy(),
                sphere_bank.values.copy())
        fine_tune(sphere_bank, sphere_oracle, steps=5, batch=2048, seed=0,
                  surface_count=5_000, near_count=2_000)
        np.testing.assert_array_equal(sphere_bank.centers, snap[0])
        np.testing.assert_array_equal(sphere_bank.scales, snap[1])
        np.testing.assert_array_equal(sphere_bank.values, snap[2])

    def test_deterministic(self, sphere_bank, sphere_oracle):
        a = fine_tune(sphere_bank, sphere_oracle, steps=15, batch=2048, seed=4,
                      surface_count=5_000, near_count=2_000)
        b = fine_tune(sphere_bank, sphere_oracle, steps=15, batch=2048, seed=4,
                      surface_count=5_000, near_count=2_000)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_divergence_raises_with_history(self, sphere_bank, sphere_oracle):
        # huge value-only step rate blows the loss within a few steps
        with pytest.raises(DivergenceError, match="diverged") as err:
            fine_tune(sphere_bank, sphere_oracle, steps=50, lr=5.0,
                      batch=2048, seed=0, surface_count=5_000,
                      near_count=2_000, freeze_geometry=True)
        hist = err.value.history
        assert hist.losses[-1] > 10.0 * hist.losses[0]
        assert len(hist.losses) >= 2

    def test_rejects_nonpositive_steps(self, sphere_bank, sphere_oracle):
        with pytest.raises(ValueError, match="steps"):
            fine_tune(sphere_bank, sphere_oracle, steps=0)
