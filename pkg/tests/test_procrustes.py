"""Weighted rigid fitting and repositioning."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from posmatch.geometry import CorrespondenceSet, RigidTransform, rotation_angle
from posmatch.procrustes import (DegenerateConfiguration, reposition, soft_procrustes, uncentred_fit,
                                 weighted_cost, weighted_kabsch)


def random_rigid(rng, t_scale=1.0):
    return RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * t_scale)


seeds = st.integers(0, 2**32 - 1)


class TestWeightedKabsch:
    def test_identical_sets(self):
        P = np.random.default_rng(0).normal(size=(10, 3))
        T = weighted_kabsch(P, P)
        np.testing.assert_allclose(T.R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(T.t, 0, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(3, 40))
    def test_exact_recovery(self, seed, n):
        rng = np.random.default_rng(seed)
        P = rng.normal(size=(n, 3))
        gt = random_rigid(rng, 5)
        w = rng.uniform(0.1, 1, n)
        T = weighted_kabsch(P, gt.apply(P), w)
        assert T.is_valid()
        np.testing.assert_allclose(T.R, gt.R, atol=1e-9)
        np.testing.assert_allclose(T.t, gt.t, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        P, Q = rng.normal(size=(2, 12, 3))
        w = rng.uniform(0.1, 1, 12)
        A, B = random_rigid(rng), random_rigid(rng)
        base = weighted_kabsch(P, Q, w)
        # fit(A P, B Q) == B . fit . A^-1
        moved = weighted_kabsch(A.apply(P), B.apply(Q), w)
        expect = B.compose(base).compose(A.inverse())
        np.testing.assert_allclose(moved.R, expect.R, atol=1e-8)
        np.testing.assert_allclose(moved.t, expect.t, atol=1e-8)

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(1)
        P, Q = rng.normal(size=(2, 8, 3))
        w = rng.uniform(0.1, 1, 8)
        a, b = weighted_kabsch(P, Q, w), weighted_kabsch(P, Q, 37.5 * w)
        np.testing.assert_allclose(a.R, b.R, atol=1e-13)
        np.testing.assert_allclose(a.t, b.t, atol=1e-13)

    def test_zero_weight_ignores_outlier(self):
        rng = np.random.default_rng(2)
        P = rng.normal(size=(6, 3))
        gt = random_rigid(rng)
        Q = gt.apply(P)
        Q[0] += 100
        T = weighted_kabsch(P, Q, [0, 1, 1, 1, 1, 1])
        np.testing.assert_allclose(T.R, gt.R, atol=1e-9)

    def test_near_planar_gives_proper_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            P = rng.normal(size=(20, 3)) * [1, 1, 1e-9]
            Q = rng.normal(size=(20, 3)) * [1, 1, 1e-9]
            T = weighted_kabsch(P, Q)
            assert np.linalg.det(T.R) == pytest.approx(1.0, abs=1e-12)

    def test_reflection_case(self):
        # Q is a mirror image of P; the fit must still be a rotation
        rng = np.random.default_rng(4)
        P = rng.normal(size=(10, 3))
        T = weighted_kabsch(P, P * [1, 1, -1])
        assert np.linalg.det(T.R) == pytest.approx(1.0, abs=1e-12)

    def test_optimal_against_perturbations(self):
        rng = np.random.default_rng(5)
        P = rng.normal(size=(15, 3))
        Q = random_rigid(rng).apply(P) + rng.normal(size=(15, 3)) * 0.1
        w = rng.uniform(0.1, 1, 15)
        T = weighted_kabsch(P, Q, w)
        best = weighted_cost(T, P, Q, w)
        for _ in range(500):
            dR = Rotation.from_rotvec(rng.normal(size=3) * 0.05).as_matrix()
            other = RigidTransform(dR @ T.R, T.t + rng.normal(size=3) * 0.05)
            assert weighted_cost(other, P, Q, w) >= best - 1e-12

    def test_collinear_raises(self):
        P = np.outer(np.arange(5.0), [1, 2, 3])
        with pytest.raises(DegenerateConfiguration):
            weighted_kabsch(P, P + 1)

    def test_coincident_raises(self):
        with pytest.raises(DegenerateConfiguration):
            weighted_kabsch(np.ones((4, 3)), np.zeros((4, 3)))

    def test_too_few_pairs(self):
        with pytest.raises(DegenerateConfiguration):
            weighted_kabsch(np.eye(3)[:2], np.eye(3)[:2])

    def test_bad_weights(self):
        P = np.random.default_rng(6).normal(size=(4, 3))
        with pytest.raises(ValueError):
            weighted_kabsch(P, P, [1, -1, 1, 1])
        with pytest.raises(ValueError):
            weighted_kabsch(P, P, np.zeros(4))
        with pytest.raises(ValueError):
            weighted_kabsch(P, P[:3])


class TestSoftProcrustes:
    def test_from_correspondence_set(self):
        rng = np.random.default_rng(7)
        S = rng.normal(size=(10, 3))
        gt = random_rigid(rng)
        T = gt.apply(S)[::-1]
        K = CorrespondenceSet(np.arange(10), np.arange(10)[::-1], np.full(10, 0.1))
        fit = soft_procrustes(K, S, T)
        assert rotation_angle(fit.R.T @ gt.R) < 1e-7
        np.testing.assert_allclose(fit.t, gt.t, atol=1e-9)

    def test_too_few(self):
        with pytest.raises(DegenerateConfiguration):
            soft_procrustes(CorrespondenceSet([0, 1], [0, 1], [0.5, 0.5]), np.eye(3), np.eye(3))

    def test_unknown_variant(self):
        K = CorrespondenceSet([0, 1, 2], [0, 1, 2], [1, 1, 1])
        with pytest.raises(ValueError):
            soft_procrustes(K, np.eye(3), np.eye(3), variant="other")

    def test_uncentred_variant_exact_at_identity(self):
        P = np.random.default_rng(8).normal(size=(8, 3))
        T = uncentred_fit(P, P)
        np.testing.assert_allclose(T.R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(T.t, 0, atol=1e-12)

    def test_uncentred_variant_not_least_squares_under_translation(self):
        rng = np.random.default_rng(9)
        P = rng.normal(size=(8, 3)) + 5
        gt = RigidTransform(Rotation.from_rotvec([0, 0, 0.3]).as_matrix(), [1, 2, 3])
        Q = gt.apply(P)
        K = CorrespondenceSet(np.arange(8), np.arange(8), np.ones(8))
        good = soft_procrustes(K, P, Q)
        literal = soft_procrustes(K, P, Q, variant="uncentred")
        assert weighted_cost(good, P, Q, np.ones(8)) < 1e-15
        assert weighted_cost(literal, P, Q, np.ones(8)) > 1.0


class TestReposition:
    def test_identity(self):
        P = np.random.default_rng(10).normal(size=(5, 3))
        np.testing.assert_array_equal(reposition(P, RigidTransform.identity()), P)

    def test_translation_example(self):
        out = reposition([[1.0, 2.0, 3.0]], RigidTransform(np.eye(3), [1, 0, 0]))
        np.testing.assert_array_equal(out, [[2.0, 2.0, 3.0]])

    def test_rotation_example(self):
        Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
        out = reposition([[1.0, 0, 0]], RigidTransform(Rz, [0, 0, 0]))
        np.testing.assert_allclose(out, [[0.0, 1.0, 0.0]], atol=1e-15)

    def test_pairwise_distances_preserved(self):
        rng = np.random.default_rng(11)
        P = rng.normal(size=(20, 3))
        out = reposition(P, random_rigid(rng, 3))
        d0 = np.linalg.norm(P[:, None] - P[None], axis=-1)
        d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
        np.testing.assert_allclose(d1, d0, atol=1e-12)
