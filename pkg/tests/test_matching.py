"""Score matrix, dual softmax and match selection."""
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from posmatch.matching import (MatchConfig, dual_softmax, score_matrix, select_matches, softmax_factors,
                               top_soft_matches)
from posmatch.rope import EncodingConfig, dense_theta, relative_dot

CFG = EncodingConfig(6)
I6 = np.eye(6)


class TestScoreMatrix:
    def test_identity_projection_unit_example(self):
        e1 = I6[:1]
        S = score_matrix(e1, np.zeros((1, 3)), e1, np.zeros((1, 3)), I6, I6, CFG)
        assert S[0, 0] == pytest.approx(1 / math.sqrt(6), rel=1e-15)

    def test_projection_scaling_is_quadratic(self):
        rng = np.random.default_rng(0)
        xs, xt, ps, pt = rng.normal(size=(3, 6)), rng.normal(size=(2, 6)), rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
        W = rng.normal(size=(6, 6))
        base = score_matrix(xs, ps, xt, pt, W, W, CFG)
        np.testing.assert_allclose(score_matrix(xs, ps, xt, pt, 3 * W, 3 * W, CFG), 9 * base, rtol=1e-12)

    def test_entries_equal_relative_dot(self):
        rng = np.random.default_rng(1)
        cfg = EncodingConfig(12)
        xs, xt, ps, pt = rng.normal(size=(3, 12)), rng.normal(size=(2, 12)), rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
        WS, WT = rng.normal(size=(2, 12, 12))
        S = score_matrix(xs, ps, xt, pt, WS, WT, cfg)
        for i, j in itertools.product(range(3), range(2)):
            expect = relative_dot(WS @ xs[i], ps[i], WT @ xt[j], pt[j], cfg) / math.sqrt(12)
            assert S[i, j] == pytest.approx(expect, rel=1e-10, abs=1e-12)
            dense = (WS @ xs[i]) @ dense_theta(pt[j] - ps[i], cfg) @ (WT @ xt[j]) / math.sqrt(12)
            assert S[i, j] == pytest.approx(dense, rel=1e-9, abs=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            score_matrix(np.ones((2, 5)), np.ones((2, 3)), np.ones((2, 6)), np.ones((2, 3)), I6, I6, CFG)
        with pytest.raises(ValueError):
            score_matrix(np.ones((2, 6)), np.ones((3, 3)), np.ones((2, 6)), np.ones((2, 3)), I6, I6, CFG)
        with pytest.raises(ValueError):
            score_matrix(np.ones((2, 6)), np.ones((2, 3)), np.ones((2, 6)), np.ones((2, 3)), np.eye(5), I6, CFG)


finite = st.floats(-30, 30, allow_nan=False)


class TestDualSoftmax:
    def test_singleton(self):
        assert dual_softmax([[3.7]])[0, 0] == 1.0

    def test_uniform_two_by_two(self):
        np.testing.assert_allclose(dual_softmax(np.full((2, 2), 5.0)), 0.25, rtol=1e-15)

    def test_brute_force(self):
        rng = np.random.default_rng(2)
        S = rng.normal(size=(3, 4)) * 3
        e = np.exp(S)
        expect = e / e.sum(1, keepdims=True) * e / e.sum(0, keepdims=True)
        np.testing.assert_allclose(dual_softmax(S), expect, rtol=1e-13)

    def test_large_scores_stable(self):
        C = dual_softmax(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
        assert np.all(np.isfinite(C))
        np.testing.assert_allclose(C, np.eye(2), atol=1e-300)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
    def test_range_and_marginals(self, S):
        C = dual_softmax(S)
        row, col = softmax_factors(S)
        assert np.all((C >= 0) & (C <= 1))
        assert np.all(C.sum(axis=1) <= 1 + 1e-12) and np.all(C.sum(axis=0) <= 1 + 1e-12)
        np.testing.assert_allclose(row.sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(col.sum(0), 1.0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, 3, elements=finite))
    def test_row_shift_changes_only_column_factor(self, S, shift):
        row0, _ = softmax_factors(S)
        row1, _ = softmax_factors(S + shift[:, None])
        np.testing.assert_allclose(row0, row1, atol=1e-12)


class TestSelectMatches:
    def test_identity_dominant(self):
        C = np.full((4, 4), 0.01) + np.eye(4) * 0.8
        K = select_matches(C, MatchConfig(0.1, True))
        assert K.pairs() == {(i, i) for i in range(4)}
        np.testing.assert_allclose(K.conf, 0.81)

    def test_none_above_threshold(self):
        assert len(select_matches(np.full((3, 3), 0.05), MatchConfig(0.1, False))) == 0

    def test_empty_matrix(self):
        assert len(select_matches(np.zeros((0, 3)), MatchConfig())) == 0

    def test_threshold_is_strict(self):
        K = select_matches(np.array([[0.1, 0.2]]), MatchConfig(0.1, False))
        assert K.pairs() == {(0, 1)}

    def test_theta_range(self):
        with pytest.raises(ValueError):
            MatchConfig(theta_c=1.0)
        with pytest.raises(ValueError):
            MatchConfig(theta_c=-0.1)

    def test_brute_force_5x5(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            C = rng.uniform(0, 0.5, (5, 5))
            for mnn in (False, True):
                expect = set()
                for i, j in itertools.product(range(5), range(5)):
                    if C[i, j] <= 0.1:
                        continue
                    if mnn and not (C[i, j] == C[i].max() and C[i, j] == C[:, j].max()):
                        continue
                    expect.add((i, j))
                assert select_matches(C, MatchConfig(0.1, mnn)).pairs() == expect

    def test_mnn_at_most_one_per_row_and_column(self):
        rng = np.random.default_rng(4)
        K = select_matches(rng.uniform(0, 1, (30, 20)), MatchConfig(0.0, True))
        assert len(set(K.src.tolist())) == len(K) and len(set(K.tgt.tolist())) == len(K)


class TestTopSoft:
    def test_full_matrix(self):
        C = np.array([[0.2, 0.1], [0.3, 0.4]])
        K = top_soft_matches(C, 4)
        assert list(zip(K.src, K.tgt)) == [(1, 1), (1, 0), (0, 0), (0, 1)]
        np.testing.assert_allclose(K.conf, [0.4, 0.3, 0.2, 0.1], rtol=1e-15)

    def test_single(self):
        K = top_soft_matches(np.array([[0.2, 0.7], [0.1, 0.3]]), 1)
        assert K.pairs() == {(0, 1)} and K.conf[0] == 1.0

    def test_ties_row_major(self):
        K = top_soft_matches(np.full((2, 2), 0.5), 3)
        assert list(zip(K.src, K.tgt)) == [(0, 0), (0, 1), (1, 0)]

    def test_sort_oracle(self):
        rng = np.random.default_rng(5)
        for n in range(1, 17):
            C = rng.uniform(0, 1, (4, 4))
            K = top_soft_matches(C, n)
            cells = sorted(((-C[i, j], i, j) for i in range(4) for j in range(4)))[:n]
            assert [(i, j) for _, i, j in cells] == list(zip(K.src.tolist(), K.tgt.tolist()))
            total = -sum(c for c, _, _ in cells)
            np.testing.assert_allclose(K.conf, [-c / total for c, _, _ in cells], rtol=1e-13)
            assert K.conf.sum() == pytest.approx(1.0, abs=1e-14)

    def test_clips_to_size(self):
        assert len(top_soft_matches(np.ones((2, 2)), 10)) == 4

    def test_all_zero_uniform_with_warning(self):
        with pytest.warns(RuntimeWarning):
            K = top_soft_matches(np.zeros((3, 3)), 3)
        np.testing.assert_allclose(K.conf, 1 / 3)

    def test_rejects_nonpositive_count(self):
        with pytest.raises(ValueError):
            top_soft_matches(np.ones((2, 2)), 0)
