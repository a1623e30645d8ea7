"""Non-rigid ICP on an embedded deformation graph.

Energy ``lambda_c * sum c^2 |W(p_s) - p_t|^2 + lambda_a * sum_edges |ARAP|^2``,
minimised by damped Gauss-Newton.  Unknowns are ordered as all rotation
increments ``phi_1..phi_V`` followed by all translations ``t_1..t_V``; the
Jacobian is taken at ``phi = 0`` and rotations are re-linearised after every
accepted step.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .deform import DeformationGraph, GraphState, apply_update, hat, warp_points
from .geometry import as_cloud


class UnderdeterminedSystem(RuntimeError):
    pass


@dataclass(frozen=True)
class NicpConfig:
    lambda_c: float = 1.0
    lambda_a: float = 10.0
    max_iters: int = 50
    step_tol: float = 1e-9
    energy_tol: float = 1e-12
    lm_damping: float = 1e-6
    dense_max_nodes: int = 1500

    def __post_init__(self):
        if self.lambda_c <= 0 or self.lambda_a <= 0:
            raise ValueError("term weights must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.lm_damping < 0:
            raise ValueError("lm_damping must be non-negative")


@dataclass
class Matches:
    """Point-level correspondences for the solver: source, target, confidence."""

    src: np.ndarray
    tgt: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        self.src = as_cloud(self.src)
        self.tgt = as_cloud(self.tgt)
        self.conf = np.broadcast_to(np.asarray(self.conf, dtype=np.float64), (len(self.src),)).copy()
        if len(self.src) != len(self.tgt):
            raise ValueError("source and target match lists differ in length")

    def __len__(self) -> int:
        return len(self.src)


def corr_residuals(graph: DeformationGraph, state: GraphState, matches: Matches,
                   config: NicpConfig, skin=None) -> np.ndarray:
    """``(K, 3)`` correspondence residuals ``sqrt(lc) c (W(p_s) - p_t)``."""
    if len(matches) == 0:
        return np.zeros((0, 3))
    warped = warp_points(matches.src, graph, state, skin)
    return np.sqrt(config.lambda_c) * matches.conf[:, None] * (warped - matches.tgt)


def reg_residuals(graph: DeformationGraph, state: GraphState, config: NicpConfig) -> np.ndarray:
    """``(E, 3)`` ARAP residuals ``sqrt(la) (R_i (g_j - g_i) + g_i + t_i - g_j - t_j)``."""
    if len(graph.edges) == 0:
        return np.zeros((0, 3))
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    g = graph.nodes
    rot = np.einsum("eab,eb->ea", state.R[i], g[j] - g[i])
    return np.sqrt(config.lambda_a) * (rot + g[i] + state.t[i] - g[j] - state.t[j])


def corr_residual(p_s, p_t, c, graph, state, config) -> np.ndarray:
    return corr_residuals(graph, state, Matches(np.reshape(p_s, (1, 3)), np.reshape(p_t, (1, 3)), [c]), config)[0]


def reg_residual(edge, graph, state, config) -> np.ndarray:
    i, j = edge
    g = graph.nodes
    return np.sqrt(config.lambda_a) * (state.R[i] @ (g[j] - g[i]) + g[i] + state.t[i] - g[j] - state.t[j])


def residual_vector(graph, state, matches, config, skin=None) -> np.ndarray:
    return np.concatenate([
        corr_residuals(graph, state, matches, config, skin).ravel(),
        reg_residuals(graph, state, config).ravel(),
    ])


def energy(graph, state, matches, config, skin=None) -> float:
    r = residual_vector(graph, state, matches, config, skin)
    return float(r @ r)


def _block_triplets(row_block, col_block, blocks):
    """Expand 3x3 blocks placed at (row_block, col_block) into COO triplets."""
    a, b = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    rows = (3 * row_block[:, None, None] + a).ravel()
    cols = (3 * col_block[:, None, None] + b).ravel()
    return rows, cols, blocks.reshape(-1)


def assemble(graph: DeformationGraph, state: GraphState, matches: Matches, config: NicpConfig,
             skin=None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse Jacobian (rows ``3(K + E)``, columns ``6V``) and residual vector."""
    if np.any(state.phi != 0):
        raise ValueError("Jacobian is defined at phi = 0; apply pending increments first")
    V, K, E = len(graph), len(matches), len(graph.edges)
    sc, sa = np.sqrt(config.lambda_c), np.sqrt(config.lambda_a)
    rows, cols, vals = [], [], []

    if K:
        ids, w = skin if skin is not None else graph.skinning(matches.src)
        k = ids.shape[1]
        g = graph.nodes[ids]
        arm = np.einsum("nkab,nkb->nka", state.R[ids], matches.src[:, None, :] - g)
        coef = (sc * matches.conf[:, None] * w)[..., None, None]            # (K, k, 1, 1)
        row_b = np.repeat(np.arange(K), k)
        for col_b, blk in ((ids.ravel(), -coef * hat(arm)),
                           (V + ids.ravel(), coef * np.eye(3))):
            r_, c_, v_ = _block_triplets(row_b, col_b, np.broadcast_to(blk, (K, k, 3, 3)))
            rows.append(r_), cols.append(c_), vals.append(v_)

    if E:
        i, j = graph.edges[:, 0], graph.edges[:, 1]
        arm = np.einsum("eab,eb->ea", state.R[i], graph.nodes[j] - graph.nodes[i])
        row_b = K + np.arange(E)
        eye = np.broadcast_to(np.eye(3), (E, 3, 3))
        for col_b, blk in ((i, -sa * hat(arm)), (V + i, sa * eye), (V + j, -sa * eye)):
            r_, c_, v_ = _block_triplets(row_b, col_b, blk)
            rows.append(r_), cols.append(c_), vals.append(v_)

    n_rows = 3 * (K + E)
    if rows:
        J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_rows, 6 * V)).tocsr()
    else:
        J = sp.csr_matrix((n_rows, 6 * V))
    return J, residual_vector(graph, state, matches, config, skin)


def _solve_normal(A, g, mu, dense: bool) -> np.ndarray:
    n = A.shape[0]
    if dense:
        M = A.toarray() + mu * np.eye(n)
        x = np.linalg.solve(M, -g)  # LU (LAPACK gesv)
    else:
        x = splu((A + mu * sp.identity(n, format="csr")).tocsc()).solve(-g)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("non-finite solution")
    return x


def gauss_newton_solve(graph: DeformationGraph, initial_state: GraphState, matches: Matches,
                       config: NicpConfig = NicpConfig(), max_damping_tries: int = 12,
                       trace_file=None) -> tuple[GraphState, list[dict]]:
    """Levenberg-damped Gauss-Newton.

    Solves ``(J^T J + mu I) delta = -J^T r`` each iteration.  A step is
    accepted only if it does not raise the energy (mu halves); otherwise mu
    grows tenfold and the step is retried.  Stops on ``max_iters``,
    ``|delta|_inf < step_tol`` or relative energy decrease below
    ``energy_tol``.  The trace holds one record per iteration.
    """
    if len(matches) < 1:
        raise ValueError("at least one match is required")
    if len(graph) == 0:
        raise ValueError("graph has no nodes")
    skin = graph.skinning(matches.src)
    state = initial_state.copy()
    if np.any(state.phi != 0):
        state = apply_update(state, np.concatenate([state.phi.ravel(), np.zeros(3 * len(state))]))
    dense = len(graph) <= config.dense_max_nodes
    mu = config.lm_damping
    J, r = assemble(graph, state, matches, config, skin)
    E = float(r @ r)
    trace: list[dict] = []

    for it in range(1, config.max_iters + 1):
        A = (J.T @ J).tocsr()
        g = J.T @ r
        accepted = solved = False
        for _ in range(max_damping_tries):
            try:
                delta = _solve_normal(A, g, mu, dense)
            except (np.linalg.LinAlgError, RuntimeError):
                mu = max(10.0 * mu, 1e-6)
                continue
            solved = True
            cand = apply_update(state, delta)
            E_new = energy(graph, cand, matches, config, skin)
            if E_new <= E:
                accepted = True
                break
            mu = max(10.0 * mu, 1e-12)
        if not solved:
            raise UnderdeterminedSystem("underdetermined system")
        if not accepted:
            break
        step = float(np.max(np.abs(delta))) if len(delta) else 0.0
        decrease = (E - E_new) / E if E > 0 else 0.0
        state, E = cand, E_new
        rec = {"iteration": it, "energy": E, "step_norm": step, "damping": mu}
        trace.append(rec)
        if trace_file is not None:
            trace_file.write(json.dumps(rec) + "\n")
        mu = mu / 2.0
        if step < config.step_tol or decrease < config.energy_tol:
            break
        J, r = assemble(graph, state, matches, config, skin)
    return state, trace
