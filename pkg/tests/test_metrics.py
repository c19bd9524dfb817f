"""Point cloud distance oracles and generative set metrics."""

import itertools

import numpy as np
import pytest

from msdf.metrics import EMD_MAX_POINTS, chamfer, emd, set_metrics


def brute_chamfer(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return float(np.mean(d.min(axis=1) ** 2) + np.mean(d.min(axis=0) ** 2))


def brute_emd(a, b):
    """Minimum over all bijections, enumerated."""
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return min(sum(d[i, p] for i, p in enumerate(perm))
               for perm in itertools.permutations(range(len(a))))


class TestChamfer:
    def test_hand_worked_pair(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.0, 1.0]])
        # a->b: squared distances 1 and 2; b->a: nearest is (0,0), squared 1
        assert chamfer(a, b) == pytest.approx(1.5 + 1.0, abs=1e-12)

    def test_identity_is_zero(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        assert chamfer(pts, pts) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(60, 3))
        assert chamfer(a, b) == chamfer(b, a)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for n, m in ((5, 9), (100, 180), (200, 200)):
            a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
            assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="dimensionality"):
            chamfer(np.zeros((3, 2)), np.zeros((3, 3)))
        with pytest.raises(ValueError, match="empty"):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


class TestEmd:
    def test_single_point_is_plain_distance(self):
        assert emd(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == pytest.approx(5.0)

    def test_matches_permutation_enumeration(self):
        rng = np.random.default_rng(3)
        for n in (2, 4, 6, 7):
            a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            assert emd(a, b) == pytest.approx(brute_emd(a, b), abs=1e-9)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        assert emd(a, b) == pytest.approx(emd(a[::-1], b), abs=1e-9)

    def test_size_cap(self):
        big = np.zeros((EMD_MAX_POINTS + 1, 3))
        with pytest.raises(ValueError, match=str(EMD_MAX_POINTS)):
            emd(big, big)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="same-size"):
            emd(np.zeros((4, 3)), np.zeros((5, 3)))


class TestSetMetrics:
    @staticmethod
    def _clouds(count, seed, jitter=0.0):
        rng = np.random.default_rng(seed)
        base = [rng.normal(size=(20, 3)) for _ in range(count)]
        if jitter:
            return [c + jitter * rng.normal(size=c.shape) for c in base]
        return base

    def test_identical_distribution_signature(self):
        ref = self._clouds(12, seed=0)
        near = [c + 1e-6 * np.random.default_rng(9).normal(size=c.shape) for c in ref]
        m = set_metrics(near, ref)
        assert m.coverage == 1.0
        assert m.mmd < 1e-10
        # each cloud's nearest union neighbor is its twin from the other set
        assert m.one_nna == 0.0

    def test_distinct_sets_are_fully_separable(self):
        ref = self._clouds(8, seed=1)
        far = [c + 100.0 for c in self._clouds(8, seed=2)]
        m = set_metrics(far, ref)
        assert m.one_nna == 1.0
        assert m.mmd > 1.0

    def test_mode_collapse_shows_in_coverage(self):
        ref = self._clouds(10, seed=3)
        collapsed = [ref[0].copy() for _ in range(10)]
        m = set_metrics(collapsed, ref)
        assert m.coverage == pytest.approx(0.1)

    def test_mmd_hand_value(self):
        ref = [np.zeros((4, 3)), np.full((4, 3), 2.0)]
        gen = [np.full((4, 3), 0.5)]
        # per-point squared distance 0.75 to ref[0], both directions
        m = set_metrics(gen, ref, distance="chamfer")
        d0 = chamfer(gen[0], ref[0])
        assert d0 == pytest.approx(1.5)
        assert m.mmd == pytest.approx((d0 + chamfer(gen[0], ref[1])) / 2)

    def test_emd_distance_option_and_accounting(self):
        ref = self._clouds(3, seed=5)
        gen = self._clouds(4, seed=6)
        m = set_metrics(gen, ref, distance="emd")
        assert m.distance_kind == "emd"
        assert m.num_generated == 4 and m.num_reference == 3

    def test_unknown_distance_and_empty_lists(self):
        ref = self._clouds(2, seed=7)
        with pytest.raises(ValueError, match="distance"):
            set_metrics(ref, ref, distance="hausdorff")
        with pytest.raises(ValueError, match="non-empty"):
            set_metrics([], ref)

    def test_degenerate_zero_distances_warn(self):
        cloud = self._clouds(1, seed=8)[0]
        clones = [cloud.copy(), cloud.copy()]
        with pytest.warns(UserWarning, match="degenerate"):
            set_metrics(clones, [cloud.copy(), cloud.copy()])
