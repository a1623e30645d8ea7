"""Non-rigid ICP residuals, Jacobian and damped Gauss-Newton."""
import io
import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posmatch.acceptance import NICP_HARNESS, _nicp_fit, _random_graph_problem, finite_difference_jacobian
from posmatch.deform import DeformationGraph, GraphState, apply_update, build_graph, exp_so3, warp_points
from posmatch.nicp import (Matches, NicpConfig, assemble, corr_residual, corr_residuals,
                           energy, gauss_newton_solve, reg_residual, reg_residuals, residual_vector)
from posmatch.procrustes import weighted_kabsch
from posmatch.synth import synth_deformable_pair


def two_node_graph():
    return DeformationGraph([[0.0, 0, 0], [1.0, 0, 0]], [[0, 1], [1, 0]], gamma_skin=0.3)


class TestResiduals:
    def test_corr_identity_example(self):
        g = DeformationGraph([[0.0, 0, 0]], np.zeros((0, 2)))
        r = corr_residual([1, 0, 0], [1, 1, 0], 0.5, g, GraphState.identity(1), NicpConfig(lambda_c=4.0))
        np.testing.assert_allclose(r, 2.0 * 0.5 * np.array([0, -1, 0]), atol=1e-15)

    def test_reg_translation_example(self):
        g = two_node_graph()
        state = GraphState(np.tile(np.eye(3), (2, 1, 1)), [[0.0, 0, 0], [0.0, 0.5, 0]])
        r = reg_residual((0, 1), g, state, NicpConfig(lambda_a=4.0))
        np.testing.assert_allclose(r, 2.0 * np.array([0, -0.5, 0]), atol=1e-15)

    def test_reg_zero_under_global_rigid_motion(self):
        rng = np.random.default_rng(0)
        g = build_graph(rng.uniform(0, 1, (300, 3)), 0.2, min_component_nodes=1)
        R = Rotation.random(random_state=rng).as_matrix()
        t0 = rng.normal(size=3)
        state = GraphState(np.tile(R, (len(g), 1, 1)), g.nodes @ R.T + t0 - g.nodes)
        r = reg_residuals(g, state, NicpConfig())
        assert float((r**2).sum()) < 1e-18

    def test_energy_is_squared_norm(self):
        g, state, m, cfg = _random_graph_problem(np.random.default_rng(1))
        r = residual_vector(g, state, m, cfg)
        assert energy(g, state, m, cfg) == pytest.approx(float(r @ r), rel=1e-15)
        assert len(r) == 3 * (len(m) + len(g.edges))

    def test_hand_energy(self):
        g = DeformationGraph([[0.0, 0, 0]], np.zeros((0, 2)))
        m = Matches([[0.0, 0, 0]], [[1.0, 0, 0]], [1.0])
        assert energy(g, GraphState.identity(1), m, NicpConfig()) == 1.0

    def test_zero_confidence_rows_vanish(self):
        g = two_node_graph()
        m = Matches([[0.2, 0, 0], [0.8, 0, 0]], [[5.0, 5, 5], [0.8, 0.1, 0]], [0.0, 1.0])
        r = corr_residuals(g, GraphState.identity(2), m, NicpConfig())
        np.testing.assert_array_equal(r[0], 0.0)
        J, _ = assemble(g, GraphState.identity(2), m, NicpConfig())
        assert np.abs(J.toarray()[0:3]).max() == 0.0

    def test_scalar_confidence_broadcasts(self):
        m = Matches(np.zeros((4, 3)), np.ones((4, 3)), 0.5)
        np.testing.assert_array_equal(m.conf, [0.5] * 4)
        with pytest.raises(ValueError):
            Matches(np.zeros((4, 3)), np.ones((3, 3)), 1.0)


class TestJacobian:
    def test_single_node_translation_block(self):
        g = DeformationGraph([[0.0, 0, 0]], np.zeros((0, 2)))
        cfg = NicpConfig(lambda_c=4.0)
        m = Matches([[0.3, 0.1, 0]], [[0, 0, 0]], [0.7])
        J, _ = assemble(g, GraphState.identity(1), m, cfg)
        np.testing.assert_allclose(J.toarray()[:, 3:6], 2.0 * 0.7 * np.eye(3), atol=1e-15)

    def test_shape(self):
        g, state, m, cfg = _random_graph_problem(np.random.default_rng(2))
        J, r = assemble(g, state, m, cfg)
        assert J.shape == (3 * (len(m) + len(g.edges)), 6 * len(g))
        assert r.shape == (J.shape[0],)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        g, state, m, cfg = _random_graph_problem(np.random.default_rng(100 + seed))
        J = assemble(g, state, m, cfg)[0].toarray()
        J_fd = finite_difference_jacobian(g, state, m, cfg)
        scale = max(np.abs(J).max(), 1.0)
        np.testing.assert_allclose(J, J_fd, atol=1e-6 * scale)

    def test_rejects_pending_increment(self):
        g = two_node_graph()
        state = GraphState(np.tile(np.eye(3), (2, 1, 1)), np.zeros((2, 3)), np.ones((2, 3)))
        with pytest.raises(ValueError):
            assemble(g, state, Matches(np.zeros((1, 3)), np.zeros((1, 3)), 1.0), NicpConfig())


class TestSolver:
    def test_satisfied_matches_stop_immediately(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, (200, 3))
        g = build_graph(pts, 0.25, gamma_skin=0.25, min_component_nodes=1)
        state, trace = gauss_newton_solve(g, GraphState.identity(len(g)), Matches(pts, pts, 1.0))
        assert len(trace) <= 1
        np.testing.assert_allclose(warp_points(pts, g, state), pts, atol=1e-12)

    @pytest.mark.parametrize("kind,n", [("bend", 200), ("twist", 200), ("bend", 1000)])
    def test_recovers_analytic_warp(self, kind, n):
        pair = synth_deformable_pair(3, n, kind, magnitude=0.3, extent=0.5)
        g, state, trace = _nicp_fit(pair.S, pair.T)
        err = np.linalg.norm(warp_points(pair.S, g, state) - pair.T, axis=1).mean()
        assert err < 1e-3
        assert len(trace) <= 20
        e = [rec["energy"] for rec in trace]
        assert all(b <= a for a, b in zip(e, e[1:]))

    def test_rigid_target_agrees_with_procrustes(self):
        rng = np.random.default_rng(4)
        pair = synth_deformable_pair(4, 300, "bend", magnitude=0.0, extent=0.5)
        R = Rotation.from_rotvec([0.1, -0.2, 0.15]).as_matrix()
        T = pair.S @ R.T + [0.05, 0.02, -0.03]
        g, state, _ = _nicp_fit(pair.S, T)
        rigid = weighted_kabsch(pair.S, T)
        np.testing.assert_allclose(warp_points(pair.S, g, state), rigid.apply(pair.S), atol=1e-6)

    def test_trace_records_and_file(self):
        pair = synth_deformable_pair(5, 200, "bend", magnitude=0.3, extent=0.5)
        g = build_graph(pair.S, **NICP_HARNESS)
        buf = io.StringIO()
        _, trace = gauss_newton_solve(g, GraphState.identity(len(g)), Matches(pair.S, pair.T, 1.0),
                                      NicpConfig(lambda_a=0.01), trace_file=buf)
        lines = [json.loads(x) for x in buf.getvalue().splitlines()]
        assert lines == trace
        assert [r["iteration"] for r in trace] == list(range(1, len(trace) + 1))
        assert set(trace[0]) == {"iteration", "energy", "step_norm", "damping"}

    def test_respects_max_iters(self):
        pair = synth_deformable_pair(6, 200, "twist", magnitude=0.5, extent=0.5)
        g = build_graph(pair.S, **NICP_HARNESS)
        _, trace = gauss_newton_solve(g, GraphState.identity(len(g)), Matches(pair.S, pair.T, 1.0),
                                      NicpConfig(lambda_a=0.01, max_iters=2))
        assert len(trace) <= 2

    def test_sparse_path_matches_dense(self):
        pair = synth_deformable_pair(7, 300, "bend", magnitude=0.3, extent=0.5)
        g = build_graph(pair.S, **NICP_HARNESS)
        m = Matches(pair.S, pair.T, 1.0)
        a, _ = gauss_newton_solve(g, GraphState.identity(len(g)), m, NicpConfig(lambda_a=0.01, max_iters=3))
        b, _ = gauss_newton_solve(g, GraphState.identity(len(g)), m,
                                  NicpConfig(lambda_a=0.01, max_iters=3, dense_max_nodes=0))
        np.testing.assert_allclose(a.t, b.t, atol=1e-8)
        np.testing.assert_allclose(a.R, b.R, atol=1e-8)

    def test_pending_increment_applied_first(self):
        g = DeformationGraph([[0.0, 0, 0]], np.zeros((0, 2)))
        phi = np.array([[0.0, 0.0, 0.2]])
        s0 = GraphState(np.eye(3)[None], np.zeros((1, 3)), phi)
        m = Matches(np.eye(3), np.eye(3) @ exp_so3(phi[0]).T, 1.0)
        state, _ = gauss_newton_solve(g, s0, m)
        np.testing.assert_allclose(state.R[0], exp_so3(phi[0]), atol=1e-9)

    def test_no_matches_rejected(self):
        with pytest.raises(ValueError):
            gauss_newton_solve(two_node_graph(), GraphState.identity(2), Matches(np.zeros((0, 3)), np.zeros((0, 3)), 1.0))

    def test_unconstrained_nodes_still_solve_with_damping(self):
        # the far node has no matches and no edges; damping keeps the system solvable
        g = DeformationGraph([[0.0, 0, 0], [100.0, 0, 0]], np.zeros((0, 2)), gamma_skin=0.1, skin_k=1)
        m = Matches(np.eye(3) * 0.1, np.eye(3) * 0.1 + [0.01, 0, 0], 1.0)
        state, _ = gauss_newton_solve(g, GraphState.identity(2), m)
        np.testing.assert_allclose(warp_points(m.src, g, state), m.tgt, atol=1e-6)
        np.testing.assert_allclose(state.t[1], 0.0, atol=1e-6)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NicpConfig(lambda_c=0)
        with pytest.raises(ValueError):
            NicpConfig(max_iters=0)
        with pytest.raises(ValueError):
            NicpConfig(lm_damping=-1)
        assert (NicpConfig().lambda_c, NicpConfig().lambda_a) == (1.0, 10.0)

    def test_update_helper_consistent_with_solver_ordering(self):
        # unknown layout is [phi_1..phi_V | t_1..t_V]
        s = apply_update(GraphState.identity(2), np.r_[np.zeros(6), 1, 0, 0, 0, 2, 0])
        np.testing.assert_array_equal(s.t, [[1, 0, 0], [0, 2, 0]])
