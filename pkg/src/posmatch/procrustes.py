"""Weighted rigid fitting from soft correspondences, and repositioning."""
from __future__ import annotations

import numpy as np

from .geometry import CorrespondenceSet, RigidTransform, as_cloud


class DegenerateConfiguration(ValueError):
    pass


def weighted_kabsch(P, Q, w=None, rank_tol: float = 1e-10) -> RigidTransform:
    """Rigid ``(R, t)`` minimising ``sum_k w_k |R P_k + t - Q_k|^2``.

    Weights are normalised internally, so only their ratios matter.
    Raises ``DegenerateConfiguration`` when the centred cross-covariance has
    rank below 2 (all points collinear or coincident).
    """
    P, Q = as_cloud(P), as_cloud(Q)
    if len(P) != len(Q):
        raise ValueError("point sets differ in length")
    if len(P) < 3:
        raise DegenerateConfiguration("at least 3 correspondences are required")
    w = np.ones(len(P)) if w is None else np.asarray(w, dtype=np.float64).reshape(-1)
    if len(w) != len(P) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    w = w / w.sum()
    mu_p = w @ P
    mu_q = w @ Q
    Pc, Qc = P - mu_p, Q - mu_q
    H = (Pc * w[:, None]).T @ Qc
    U, sv, Vt = np.linalg.svd(H)
    scale = max(np.sqrt(w @ (Pc**2).sum(1)) * np.sqrt(w @ (Qc**2).sum(1)), np.finfo(float).tiny)
    if sv[1] <= rank_tol * scale:
        raise DegenerateConfiguration("degenerate configuration")
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T))])
    R = V @ D @ U.T
    return RigidTransform(R, mu_q - R @ mu_p)


def uncentred_fit(P, Q, w=None) -> RigidTransform:
    """Uncentred variant, kept only for comparison with the default fit.

    ``H = sum w P Q^T = U S V^T``, ``R = U diag(1, 1, det(U V^T)) V^T`` and
    ``t = (sum P - R sum Q) / K``.  Note this maps ``Q`` toward ``P`` and
    ignores centroids, so it is not the least-squares fit of ``P`` onto ``Q``.
    """
    P, Q = as_cloud(P), as_cloud(Q)
    w = np.ones(len(P)) if w is None else np.asarray(w, dtype=np.float64)
    w = w / w.sum()
    H = (P * w[:, None]).T @ Q
    U, _, Vt = np.linalg.svd(H)
    R = U @ np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))]) @ Vt
    t = (P.sum(0) - R @ Q.sum(0)) / len(P)
    return RigidTransform(R, t)


def soft_procrustes(K_soft: CorrespondenceSet, S, T, variant: str = "kabsch") -> RigidTransform:
    """Fit ``(R, t)`` aligning ``S[src]`` onto ``T[tgt]`` with weights ``K_soft.conf``."""
    if len(K_soft) < 3:
        raise DegenerateConfiguration("at least 3 correspondences are required")
    P, Q = K_soft.points(S, T)
    if variant == "kabsch":
        return weighted_kabsch(P, Q, K_soft.conf)
    if variant == "uncentred":
        return uncentred_fit(P, Q, K_soft.conf)
    raise ValueError(f"unknown Procrustes variant {variant!r}")


def weighted_cost(transform: RigidTransform, P, Q, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    r = transform.apply(P) - Q
    return float(w @ (r**2).sum(axis=1))


def reposition(positions, transform: RigidTransform) -> np.ndarray:
    """Move source positions by the fitted transform; features are untouched."""
    return transform.apply(as_cloud(positions))
