"""Acceptance checks, shared by the test-suite and ``posmatch selftest``.

Each ``criterion_*`` function runs one check end to end and returns a
:class:`CriterionResult`; the wall-clock budget is part of the verdict.
Oracles are written independently of the library code they check (plain
loops, dense matrices, brute-force search).
"""
from __future__ import annotations

import json
import math
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .deform import GraphState, apply_update, build_graph, exp_so3, warp_points
from .geometry import CorrespondenceSet, RigidTransform, rotation_angle
from .matching import MatchConfig, dual_softmax, select_matches, softmax_factors
from .metrics import (correspondence_rmse, feature_matching_recall, flow_metrics, inlier_ratio, nfmr,
                      registration_recall)
from .nicp import Matches, NicpConfig, assemble, gauss_newton_solve, residual_vector
from .pipeline import PipelineWeights, run_pipeline
from .procrustes import soft_procrustes, weighted_cost, weighted_kabsch
from .ransac import ransac_rigid
from .rope import EncodingConfig, dense_theta, encode, relative_dot
from .synth import repetitive_features, sample_surface, synth_deformable_pair, synth_rigid_pair


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    seconds: float
    detail: str

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _finish(number, name, t0, budget, ok, detail) -> CriterionResult:
    dt = time.perf_counter() - t0
    if dt >= budget:
        ok = False
        detail += f"; over the {budget:g} s budget"
    return CriterionResult(number, name, bool(ok), dt, detail)


# --------------------------------------------------------------------------
# 1. Encoding identities
# --------------------------------------------------------------------------


def criterion_encoding(trials: int = 1000, seed: int = 0, budget: float = 5.0) -> CriterionResult:
    """Norm preservation, orthogonality, relative-position identity and
    sparse/dense agreement of the rotary position code."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    configs = {d: EncodingConfig(d) for d in (6, 12, 96, 528)}
    worst = dict(norm=0.0, orth=0.0, rel=0.0, dense=0.0)
    for _ in range(trials):
        cfg = configs[int(rng.choice(list(configs)))]
        p_i, p_j = rng.uniform(-5, 5, (2, 3))
        a, b = rng.normal(size=(2, cfg.d))
        M = dense_theta(p_i, cfg)
        enc = encode(p_i, a, cfg)
        worst["norm"] = max(worst["norm"], abs(np.linalg.norm(enc) - np.linalg.norm(a)))
        worst["orth"] = max(worst["orth"], np.abs(M.T @ M - np.eye(cfg.d)).max())
        worst["dense"] = max(worst["dense"], np.abs(enc - M @ a).max())
        lhs = relative_dot(a, p_i, b, p_j, cfg)
        rhs = a @ dense_theta(p_j - p_i, cfg) @ b
        worst["rel"] = max(worst["rel"], abs(lhs - rhs) / (np.linalg.norm(a) * np.linalg.norm(b)))
    ok = worst["norm"] < 1e-12 and worst["orth"] < 1e-12 and worst["rel"] < 1e-9 and worst["dense"] < 1e-12
    detail = (f"{trials} trials; max norm err {worst['norm']:.1e}, orth err {worst['orth']:.1e}, "
              f"relative-identity err {worst['rel']:.1e}, sparse-vs-dense {worst['dense']:.1e}")
    return _finish(1, "encoding identities", t0, budget, ok, detail)


# --------------------------------------------------------------------------
# 2. Procrustes construct-and-recover
# --------------------------------------------------------------------------


def _trace_costs(R_batch, P, Q, w):
    """Weighted cost of every rotation in ``R_batch`` with its optimal
    translation: ``sum w|Pc|^2 + sum w|Qc|^2 - 2 tr(R H)``."""
    w = w / w.sum()
    Pc, Qc = P - w @ P, Q - w @ Q
    H = (Pc * w[:, None]).T @ Qc  # sum w p q^T
    const = w @ (Pc**2).sum(1) + w @ (Qc**2).sum(1)
    return const - 2.0 * np.einsum("bij,ji->b", R_batch, H)


def _cost_with_optimal_t(R, P, Q, w):
    w = w / w.sum()
    t = w @ Q - R @ (w @ P)
    return weighted_cost(RigidTransform(R, t), P, Q, w)


def criterion_procrustes(pairs: int = 500, candidates: int = 100_000, seed: int = 0,
                         budget: float = 60.0) -> CriterionResult:
    """Exact recovery on noiseless pairs; optimality against random rotations
    on noisy pairs."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_rot = worst_t = 0.0
    worst_margin = np.inf
    worst_formula = 0.0
    for k in range(pairs):
        n = int(rng.integers(10, 501))
        P = rng.normal(size=(n, 3))
        gt = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-2, 2, 3))
        w = rng.uniform(0.1, 1.0, n)
        fit = weighted_kabsch(P, gt.apply(P), w)
        worst_rot = max(worst_rot, rotation_angle(fit.R @ gt.R.T))
        worst_t = max(worst_t, float(np.linalg.norm(fit.t - gt.t)))

        sigma_n = rng.uniform(0.01, 0.2)
        Q = gt.apply(P) + rng.normal(scale=sigma_n, size=P.shape)
        fit = weighted_kabsch(P, Q, w)
        best = _cost_with_optimal_t(fit.R, P, Q, w)
        Rc = Rotation.random(candidates, random_state=rng).as_matrix()
        # plus rotations close to the optimum, which random sampling never reaches
        near = exp_so3(rng.normal(scale=1e-3, size=(64, 3))) @ fit.R
        Rc = np.concatenate([Rc, near])
        costs = _trace_costs(Rc, P, Q, w)
        if k % 50 == 0:  # validate the closed-form cost against direct evaluation
            direct = np.array([_cost_with_optimal_t(R, P, Q, w) for R in Rc[:: max(1, len(Rc) // 200)]])
            worst_formula = max(worst_formula, np.abs(direct - costs[:: max(1, len(Rc) // 200)]).max())
        worst_margin = min(worst_margin, float(costs.min() - best))
    ok = worst_rot < 1e-8 and worst_t < 1e-9 and worst_margin >= -1e-9 and worst_formula < 1e-9
    detail = (f"{pairs} pairs; max rotation err {worst_rot:.1e} rad, translation err {worst_t:.1e} m; "
              f"min cost margin over {candidates} candidates {worst_margin:.2e} "
              f"(cost formula check {worst_formula:.1e})")
    return _finish(2, "Procrustes recovery and optimality", t0, budget, ok, detail)


# --------------------------------------------------------------------------
# 3. Jacobian vs finite differences
# --------------------------------------------------------------------------


def _random_graph_problem(rng):
    cloud = sample_surface(rng, int(rng.integers(60, 200)), extent=0.5)
    for spacing in (0.2, 0.25, 0.3, 0.4, 0.6):
        graph = build_graph(cloud, spacing, edge_k=int(rng.integers(2, 7)), gamma_skin=spacing,
                            skin_k=int(rng.integers(1, 7)), min_component_nodes=0)
        if len(graph) <= 30:
            break
    V = len(graph)
    state = GraphState(exp_so3(rng.normal(scale=0.5, size=(V, 3))), rng.normal(scale=0.1, size=(V, 3)))
    m = int(rng.integers(5, 40))
    src = cloud[rng.choice(len(cloud), m, replace=False)]
    matches = Matches(src, src + rng.normal(scale=0.1, size=src.shape), rng.uniform(0.2, 1.0, m))
    config = NicpConfig(lambda_c=float(rng.uniform(0.5, 2)), lambda_a=float(rng.uniform(0.1, 10)))
    return graph, state, matches, config


def finite_difference_jacobian(graph, state, matches, config, h: float = 1e-6) -> np.ndarray:
    """Central differences of the residual vector along each update coordinate."""
    n = 6 * len(graph)
    cols = []
    for c in range(n):
        e = np.zeros(n)
        e[c] = h
        r_plus = residual_vector(graph, apply_update(state, e), matches, config)
        r_minus = residual_vector(graph, apply_update(state, -e), matches, config)
        cols.append((r_plus - r_minus) / (2 * h))
    return np.stack(cols, axis=1)


def criterion_jacobian(graphs: int = 20, seed: int = 0, budget: float = 30.0) -> CriterionResult:
    """Analytic Jacobian blocks against central finite differences."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    max_nodes = 0
    for _ in range(graphs):
        graph, state, matches, config = _random_graph_problem(rng)
        max_nodes = max(max_nodes, len(graph))
        J = assemble(graph, state, matches, config)[0].toarray()
        F = finite_difference_jacobian(graph, state, matches, config)
        floor = 1e-6 * max(np.abs(F).max(), 1.0)
        for rb in range(0, J.shape[0], 3):
            for cb in range(0, J.shape[1], 3):
                a, f = J[rb:rb + 3, cb:cb + 3], F[rb:rb + 3, cb:cb + 3]
                err = np.abs(a - f).max() / max(np.abs(f).max(), np.abs(a).max(), floor)
                worst = max(worst, err)
    ok = worst < 1e-4 and max_nodes <= 30
    detail = f"{graphs} random graphs (<= {max_nodes} nodes); max block relative error {worst:.1e}"
    return _finish(3, "Jacobian vs finite differences", t0, budget, ok, detail)


# --------------------------------------------------------------------------
# 4. N-ICP recovery
# --------------------------------------------------------------------------

# Harness settings: a coarse graph (node spacing 0.1 m, Gaussian width equal
# to the spacing) and a weak as-rigid-as-possible weight, so that exact
# correspondences determine the bend/twist down to millimetres.
NICP_HARNESS = dict(node_spacing=0.1, edge_k=8, gamma_skin=0.1, skin_k=6, min_component_nodes=40)
NICP_HARNESS_CONFIG = NicpConfig(lambda_c=1.0, lambda_a=0.01, max_iters=50)


def _nicp_fit(S, T, config=NICP_HARNESS_CONFIG):
    graph = build_graph(S, **NICP_HARNESS)
    state, trace = gauss_newton_solve(graph, GraphState.identity(len(graph)), Matches(S, T, 1.0), config)
    return graph, state, trace


def _monotone(trace) -> bool:
    e = [rec["energy"] for rec in trace]
    return all(b <= a for a, b in zip(e, e[1:]))


def criterion_nicp(seed: int = 3, budget: float = 120.0) -> CriterionResult:
    """Bend/twist recovery from exact correspondences and agreement with the
    rigid fit on a rigid target."""
    t0 = time.perf_counter()
    errs, iters, mono = [], [], True
    for kind in ("bend", "twist"):
        for n in (200, 1000):
            pair = synth_deformable_pair(seed, n, kind, magnitude=0.3, extent=0.5)
            graph, state, trace = _nicp_fit(pair.S, pair.T)
            errs.append(float(np.linalg.norm(warp_points(pair.S, graph, state) - pair.T, axis=1).mean()))
            iters.append(len(trace))
            mono &= _monotone(trace)
    rng = np.random.default_rng(seed)
    S = sample_surface(rng, 500, extent=0.5)
    rigid = RigidTransform(exp_so3(np.array([0.1, -0.2, 0.15])), np.array([0.05, -0.03, 0.02]))
    T = rigid.apply(S)
    graph, state, trace = _nicp_fit(S, T)
    mono &= _monotone(trace)
    proc = soft_procrustes(CorrespondenceSet(np.arange(len(S)), np.arange(len(S))), S, T)
    agree = float(np.linalg.norm(warp_points(S, graph, state) - proc.apply(S), axis=1).mean())
    ok = max(errs) < 1e-3 and max(iters) <= 50 and mono and agree < 1e-4
    detail = (f"bend/twist mean errors {', '.join(f'{e:.1e}' for e in errs)} m in <= {max(iters)} iterations; "
              f"energy monotone: {mono}; rigid-target vs Procrustes {agree:.1e} m")
    return _finish(4, "N-ICP recovery", t0, budget, ok, detail)


# --------------------------------------------------------------------------
# 5. Metric oracles
# --------------------------------------------------------------------------


def _bf_ir(p, q, R, t, sigma):
    hits = 0
    for a, b in zip(p, q):
        w = R @ a + t
        hits += math.dist(w, b) < sigma
    return hits / len(p)


def _bf_knn(u, anchors, k):
    d = [math.dist(u, a) for a in anchors]
    order = sorted(range(len(anchors)), key=lambda i: (d[i], i))
    return order[:k], [d[i] for i in order[:k]]


def _bf_nfmr(pp, pq, gu, gv, sigma, k):
    hits = 0
    for u, v in zip(gu, gv):
        ids, d = _bf_knn(u, pp, k)
        if d[0] < 1e-12:
            f = pq[ids[0]] - pp[ids[0]]
        else:
            wts = [1.0 / x for x in d]
            f = sum(w * (pq[i] - pp[i]) for w, i in zip(wts, ids)) / sum(wts)
        hits += math.dist(u + f, v) < sigma
    return hits / len(gu)


def _bf_rmse(R, t, p, q):
    return math.sqrt(sum(math.dist(R @ a + t, b) ** 2 for a, b in zip(p, q)) / len(p))


def _bf_flow(pred, gt, a, r):
    hits = 0
    errs = []
    for x, y in zip(pred, gt):
        e = math.dist(x, y)
        m = math.sqrt(sum(c * c for c in y))
        errs.append(e)
        rel = e / m if m > 0 else (0.0 if e == 0 else math.inf)
        hits += (e < a) or (rel < r)
    return sum(errs) / len(errs), hits / len(pred)


def criterion_metrics(instances: int = 200, seed: int = 0) -> CriterionResult:
    """Library metrics equal brute-force versions; monotone in thresholds."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = []
    monotone = True
    for trial in range(instances):
        n = int(rng.integers(3, 51))
        gt = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-1, 1, 3))
        p = rng.uniform(-1, 1, (n, 3))
        q = gt.apply(p) + rng.normal(scale=rng.uniform(0.01, 0.2), size=(n, 3))
        sigma = float(rng.uniform(0.02, 0.3))
        if inlier_ratio(p, q, gt, sigma) != _bf_ir(p, q, gt.R, gt.t, sigma):
            mismatches.append(("IR", trial))

        # deformable: sparse predicted flow at anchors, GT pairs elsewhere
        gu = rng.uniform(-1, 1, (n, 3))
        gv = gu + 0.1 * np.sin(3 * gu)
        m = int(rng.integers(1, 51))
        pp = rng.uniform(-1, 1, (m, 3))
        if trial % 4 == 0:  # exercise the coincident-anchor rule
            pp[: min(m, n) // 2] = gu[: min(m, n) // 2]
        pq = pp + 0.1 * np.sin(3 * pp) + rng.normal(scale=0.02, size=pp.shape)
        k = int(rng.integers(1, 5))
        if nfmr(pp, pq, gu, gv, sigma, k) != _bf_nfmr(pp, pq, gu, gv, sigma, k):
            mismatches.append(("NFMR", trial))

        irs = rng.uniform(0, 0.2, n)
        thr = float(rng.uniform(0.01, 0.15))
        if feature_matching_recall(irs, thr) != sum(x > thr for x in irs) / n:
            mismatches.append(("FMR", trial))

        ests = [RigidTransform(gt.R, gt.t + rng.normal(scale=0.2, size=3)) for _ in range(5)]
        gtp = [(p, gt.apply(p))] * 5
        if registration_recall(ests, gtp, 0.2) != sum(_bf_rmse(T.R, T.t, p, gt.apply(p)) < 0.2 for T in ests) / 5:
            mismatches.append(("RR", trial))
        if not np.isclose(correspondence_rmse(ests[0], p, q), _bf_rmse(ests[0].R, ests[0].t, p, q), rtol=1e-12):
            mismatches.append(("RMSE", trial))

        gflow = rng.normal(scale=0.2, size=(n, 3))
        if trial % 5 == 0:
            gflow[0] = 0.0
        pflow = gflow + rng.normal(scale=0.05, size=(n, 3))
        if trial % 5 == 0:
            pflow[0] = 0.0
        epe, acc = flow_metrics(pflow, gflow, ((0.05, 0.05),))
        bf_epe, bf_acc = _bf_flow(pflow, gflow, 0.05, 0.05)
        if not (np.isclose(epe, bf_epe, rtol=1e-12) and acc == bf_acc):
            mismatches.append(("EPE/Acc", trial))

        # monotone sweeps
        sweep = np.sort(rng.uniform(0.001, 0.5, 6))
        monotone &= _nondecreasing([inlier_ratio(p, q, gt, s) for s in sweep])
        monotone &= _nondecreasing([nfmr(pp, pq, gu, gv, s, k) for s in sweep])
        monotone &= _nondecreasing([-feature_matching_recall(irs, s) for s in sweep])
        monotone &= _nondecreasing([registration_recall(ests, gtp, s) for s in sweep])
        monotone &= _nondecreasing([flow_metrics(pflow, gflow, ((s, s),))[1] for s in sweep])
    ok = not mismatches and monotone
    detail = f"{instances} instances; mismatches {mismatches[:5] or 'none'}; monotone in thresholds: {monotone}"
    return _finish(5, "metric oracles", t0, 600.0, ok, detail)


def _nondecreasing(xs) -> bool:
    return all(b >= a for a, b in zip(xs, xs[1:]))


# --------------------------------------------------------------------------
# 6. Dual-softmax invariants
# --------------------------------------------------------------------------


def _is_partial_matching(K: CorrespondenceSet) -> bool:
    return len(set(K.src.tolist())) == len(K) and len(set(K.tgt.tolist())) == len(K)


def criterion_dual_softmax(matrices: int = 1000, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad_range = bad_bound = bad_mnn = 0
    for _ in range(matrices):
        shape = tuple(rng.integers(1, 40, 2))
        S = rng.normal(scale=rng.uniform(0.1, 50), size=shape)
        if rng.random() < 0.2:  # ties
            S = np.round(S)
        C = dual_softmax(S)
        row, col = softmax_factors(S)
        bad_range += not (np.all(C >= 0) and np.all(C <= 1))
        bad_bound += not np.all(C <= np.minimum(row, col))
        for theta in (0.0, 0.1):
            bad_mnn += not _is_partial_matching(select_matches(C, MatchConfig(theta, True)))
    ok = bad_range == bad_bound == bad_mnn == 0
    detail = (f"{matrices} matrices; out-of-range {bad_range}, above min(row, col) {bad_bound}, "
              f"non-partial MNN matchings {bad_mnn}")
    return _finish(6, "dual-softmax invariants", t0, 600.0, ok, detail)


# --------------------------------------------------------------------------
# 7. End-to-end rigid pipeline
# --------------------------------------------------------------------------

# Scenes with repeated structure: descriptors repeat every metre, with a weak
# unique component.  Points are ~0.1 m apart on a 2 m x 2 m patch, the target
# is displaced by up to 3 m.  Identity transformer/projection weights, so any
# layer-to-layer change comes from repositioning alone.
PIPELINE_HARNESS = dict(d=528, n_points=300, noise_sigma=0.01, overlaps=(0.6, 0.8), max_translation=3.0,
                        period=1.0, unique_weight=0.2, bandwidth=0.1)


def pipeline_trial(seed: int, h: dict = PIPELINE_HARNESS, weights=None):
    """One synthetic pair through both layers and RANSAC.

    Returns ``(layer_irs, rmse)`` with IR at sigma = 0.1 m of each layer's
    selected matches and the GT-correspondence RMSE of the RANSAC estimate.
    """
    d = h["d"]
    pair = synth_rigid_pair(seed, h["n_points"], overlap_fraction=h["overlaps"][seed % len(h["overlaps"])],
                            noise_sigma=h["noise_sigma"], max_translation=h["max_translation"])
    feats = [repetitive_features(c, d, seed=1000 + seed, period=h["period"], unique_weight=h["unique_weight"],
                                 bandwidth=h["bandwidth"]) for c in (pair.S_canonical, pair.T_canonical)]
    weights = weights or PipelineWeights.identity(d)
    out = run_pipeline(pair.S, pair.T, *feats, weights, MatchConfig.rigid(), EncodingConfig(d))
    irs = [inlier_ratio(*layer.matches.points(pair.S, pair.T), pair.transform, 0.1) for layer in out.layers]
    est = ransac_rigid(out.matches, pair.S, pair.T, iterations=1000, inlier_sigma=0.1, seed=seed)
    rmse = correspondence_rmse(est, *pair.K_gt.points(pair.S, pair.T))
    return irs, rmse


def criterion_pipeline(trials: int = 50, budget: float = 300.0) -> CriterionResult:
    t0 = time.perf_counter()
    irs, rmses = zip(*(pipeline_trial(s) for s in range(trials)))
    irs = np.array(irs)
    rr = float(np.mean(np.array(rmses) < 0.2))
    better = float(np.mean(irs[:, 1] >= irs[:, 0]))
    ok = rr == 1.0 and better >= 0.9
    detail = (f"{trials} pairs; RR {rr:.2f}; layer-2 IR >= layer-1 IR in {better:.0%} "
              f"(mean IR {irs[:, 0].mean():.3f} -> {irs[:, 1].mean():.3f})")
    return _finish(7, "end-to-end pipeline", t0, budget, ok, detail)


# --------------------------------------------------------------------------
# 8. Hyperparameter defaults
# --------------------------------------------------------------------------

EXPECTED_DEFAULTS = {
    "rigid": {"metric.sigma_inlier": 0.1, "match.theta_c": 0.05, "match.use_mnn": False,
              "supervision.gt_match_radius": 0.06, "supervision.lambda_w": 0.0, "subsample.voxel": 0.025,
              "metric.rr_rmse_threshold": 0.2, "metric.fmr_ir_threshold": 0.05, "encoding.d": 528},
    "deformable": {"metric.sigma_inlier": 0.04, "match.theta_c": 0.1, "match.use_mnn": True,
                   "supervision.gt_match_radius": 0.024, "supervision.lambda_w": 0.1, "subsample.voxel": 0.01,
                   "metric.nfmr_threshold": 0.04, "nicp.gamma_skin": 0.009, "encoding.d": 528},
}


def dump_config(mode: str) -> dict:
    """Run ``posmatch config --mode <mode>`` in a fresh interpreter and parse its output."""
    proc = subprocess.run([sys.executable, "-m", "posmatch", "config", "--mode", mode],
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def criterion_config() -> CriterionResult:
    t0 = time.perf_counter()
    wrong = []
    for mode, expected in EXPECTED_DEFAULTS.items():
        doc = dump_config(mode)
        for key, value in expected.items():
            section, name = key.split(".")
            got = doc[section][name]
            if got != value or type(got) is not type(value):
                wrong.append(f"{mode}.{key}={got!r}")
    ok = not wrong
    detail = f"{sum(map(len, EXPECTED_DEFAULTS.values()))} values checked; wrong: {wrong or 'none'}"
    return _finish(8, "hyperparameter defaults", t0, 60.0, ok, detail)


CRITERIA = [criterion_encoding, criterion_procrustes, criterion_jacobian, criterion_nicp,
            criterion_metrics, criterion_dual_softmax, criterion_pipeline, criterion_config]


def run_all(stream=None) -> list[CriterionResult]:
    results = []
    for fn in CRITERIA:
        res = fn()
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    return results
