"""Synthetic pair generators, descriptors and RANSAC registration."""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posmatch.geometry import CorrespondenceSet, RigidTransform, overlap_set, rotation_angle
from posmatch.procrustes import weighted_kabsch
from posmatch.ransac import RegistrationFailed, ransac_points, ransac_rigid
from posmatch.synth import (AnalyticWarp, coordinate_features, repetitive_features, synth_deformable_pair,
                            synth_rigid_pair)


class TestRigidPairs:
    @pytest.mark.parametrize("seed", range(5))
    def test_overlap_fraction_measured(self, seed):
        pair = synth_rigid_pair(seed, 1000, 0.3)
        _, ratio = overlap_set(pair.S, pair.T, pair.transform, 0.04)
        assert 0.25 <= ratio <= 0.35

    def test_exact_shared_count(self):
        pair = synth_rigid_pair(0, 200, 0.6)
        assert len(pair.K_gt) == 120
        assert len(pair.S) == len(pair.T) == 200

    def test_noiseless_gt_is_exact(self):
        pair = synth_rigid_pair(1, 300, 1.0)
        p, q = pair.K_gt.points(pair.S, pair.T)
        np.testing.assert_allclose(pair.transform.apply(p), q, atol=1e-12)
        fit = weighted_kabsch(p, q)
        np.testing.assert_allclose(fit.R, pair.transform.R, atol=1e-8)
        np.testing.assert_allclose(fit.t, pair.transform.t, atol=1e-8)

    def test_seed_determinism(self):
        a, b = synth_rigid_pair(9, 100, 0.5, 0.01), synth_rigid_pair(9, 100, 0.5, 0.01)
        np.testing.assert_array_equal(a.S, b.S)
        np.testing.assert_array_equal(a.T, b.T)
        assert a.K_gt.pairs() == b.K_gt.pairs()
        c = synth_rigid_pair(10, 100, 0.5, 0.01)
        assert not np.array_equal(a.S, c.S)

    def test_translation_bound(self):
        for seed in range(20):
            assert np.abs(synth_rigid_pair(seed, 50, 0.5, max_translation=0.5).transform.t).max() <= 0.5

    def test_invalid_overlap(self):
        with pytest.raises(ValueError):
            synth_rigid_pair(0, 100, 0.0)
        with pytest.raises(ValueError):
            synth_rigid_pair(0, 4, 0.5)


class TestDeformablePairs:
    def test_zero_magnitude_identity(self):
        pair = synth_deformable_pair(0, 100, "bend", magnitude=0.0)
        np.testing.assert_array_equal(pair.T, pair.S)

    @pytest.mark.parametrize("kind", AnalyticWarp.KINDS)
    def test_warp_matches_target(self, kind):
        pair = synth_deformable_pair(1, 100, kind, magnitude=0.3)
        np.testing.assert_array_equal(pair.warp(pair.S), pair.T)
        assert pair.K_gt.pairs() == {(i, i) for i in range(100)}

    def test_bend_closed_form(self):
        w = AnalyticWarp("bend", 0.5)
        a = 0.5 * 1.0
        np.testing.assert_allclose(w([[1.0, 2.0, 0.0]]), [[np.cos(a), 2.0, -np.sin(a)]], atol=1e-15)

    def test_twist_preserves_distances_within_x_slice(self):
        w = AnalyticWarp("twist", 0.4)
        p = np.array([[0.3, 0.1, 0.2], [0.3, -0.4, 0.5]])
        q = w(p)
        assert np.linalg.norm(q[0] - q[1]) == pytest.approx(np.linalg.norm(p[0] - p[1]), rel=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            AnalyticWarp("melt", 0.1)
        with pytest.raises(ValueError):
            AnalyticWarp("bend", -0.1)


class TestFeatures:
    def test_norm_and_determinism(self):
        pts = np.random.default_rng(2).uniform(0, 1, (50, 3))
        f = coordinate_features(pts, 96, seed=3)
        np.testing.assert_allclose(np.linalg.norm(f, axis=1), 4 * 96**0.25, rtol=1e-12)
        np.testing.assert_array_equal(f, coordinate_features(pts, 96, seed=3))

    def test_similarity_decays_with_distance(self):
        f = coordinate_features(np.array([[0, 0, 0], [0.01, 0, 0], [1.0, 0, 0]]), 528, bandwidth=0.1, norm=1.0)
        assert f[0] @ f[1] > 0.9
        assert abs(f[0] @ f[2]) < 0.2

    def test_repetitive_features_repeat(self):
        pts = np.array([[0.2, 0.3, 0.1], [1.2, 0.3, 0.1], [0.7, 0.3, 0.1]])
        f = repetitive_features(pts, 528, unique_weight=0.0, norm=1.0)
        assert f[0] @ f[1] == pytest.approx(1.0, abs=1e-9)
        assert f[0] @ f[2] < 0.5
        g = repetitive_features(pts, 528, unique_weight=0.2, norm=1.0)
        assert 0.9 < g[0] @ g[1] < 1.0 - 1e-3

    def test_repetitive_weight_range(self):
        with pytest.raises(ValueError):
            repetitive_features(np.zeros((2, 3)), 12, unique_weight=1.5)


def contaminated(seed, n=100, inlier_fraction=0.7):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-1, 1, (n, 3))
    gt = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-1, 1, 3))
    q = gt.apply(p) + rng.normal(scale=0.005, size=(n, 3))
    n_out = n - int(inlier_fraction * n)
    q[:n_out] = rng.uniform(-2, 2, (n_out, 3))
    return p, q, gt


class TestRansac:
    def test_seventy_percent_inliers(self):
        ok = 0
        for seed in range(100):
            p, q, gt = contaminated(seed)
            T, _ = ransac_points(p, q, 1000, 0.1, seed=seed)
            ok += np.degrees(rotation_angle(T.R.T @ gt.R)) < 1 and np.linalg.norm(T.t - gt.t) < 0.01
        assert ok >= 99

    def test_all_inliers_equals_procrustes(self):
        p, q, _ = contaminated(0, inlier_fraction=1.0)
        T, mask = ransac_points(p, q, 200, 0.1)
        assert mask.all()
        ref = weighted_kabsch(p, q)
        np.testing.assert_allclose(T.R, ref.R, atol=1e-8)
        np.testing.assert_allclose(T.t, ref.t, atol=1e-8)

    def test_deterministic_given_seed(self):
        p, q, _ = contaminated(1, inlier_fraction=0.5)
        a, _ = ransac_points(p, q, 300, 0.1, seed=4)
        b, _ = ransac_points(p, q, 300, 0.1, seed=4)
        np.testing.assert_array_equal(a.R, b.R)
        np.testing.assert_array_equal(a.t, b.t)

    def test_too_few(self):
        with pytest.raises(RegistrationFailed):
            ransac_points(np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(RegistrationFailed):
            ransac_rigid(CorrespondenceSet([0, 1], [0, 1]), np.eye(3), np.eye(3))

    def test_all_degenerate_samples_fail(self):
        line = np.outer(np.arange(10.0), [1, 0, 0])
        with pytest.raises(RegistrationFailed):
            ransac_points(line, line, 50)

    def test_from_correspondence_set(self):
        pair = synth_rigid_pair(2, 200, 0.6)
        T = ransac_rigid(pair.K_gt, pair.S, pair.T, 100)
        assert rotation_angle(T.R.T @ pair.transform.R) < 1e-6
