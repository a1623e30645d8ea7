"""RANSAC rigid registration from putative correspondences."""
from __future__ import annotations

import numpy as np

from .geometry import CorrespondenceSet, RigidTransform
from .procrustes import DegenerateConfiguration, weighted_kabsch


class RegistrationFailed(RuntimeError):
    pass


def _batched_kabsch(P: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted Kabsch over a batch of point triples: ``P, Q`` are ``(B, 3, 3)``."""
    mp, mq = P.mean(axis=1), Q.mean(axis=1)
    H = np.einsum("bki,bkj->bij", P - mp[:, None], Q - mq[:, None])
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    D = np.ones((len(P), 3))
    D[:, 2] = d
    R = (V * D[:, None, :]) @ np.swapaxes(U, 1, 2)
    t = mq - np.einsum("bij,bj->bi", R, mp)
    return R, t


def ransac_points(p, q, iterations: int = 1000, inlier_sigma: float = 0.1, seed: int = 0,
                  batch: int = 256) -> tuple[RigidTransform, np.ndarray]:
    """Best 3-point hypothesis by inlier count, refit on its inliers.

    Returns ``(transform, inlier_mask)``.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    n = len(p)
    if n < 3:
        raise RegistrationFailed("registration failed: fewer than 3 correspondences")
    rng = np.random.default_rng(seed)
    best_count, best = -1, None
    done = 0
    while done < iterations:
        b = min(batch, iterations - done)
        # three distinct indices per hypothesis
        idx = np.argsort(rng.random((b, n)), axis=1)[:, :3] if n <= 64 else _distinct_triples(rng, n, b)
        P, Q = p[idx], q[idx]
        area = np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
        R, t = _batched_kabsch(P, Q)
        res = np.linalg.norm(np.einsum("bij,nj->bni", R, p) + t[:, None] - q[None], axis=2)
        counts = np.sum(res < inlier_sigma, axis=1)
        counts[area < 1e-12] = -1
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), (R[k], t[k])
        done += b
    if best is None or best_count < 3:
        raise RegistrationFailed("registration failed")
    hyp = RigidTransform(*best)
    inliers = np.linalg.norm(hyp.apply(p) - q, axis=1) < inlier_sigma
    try:
        return weighted_kabsch(p[inliers], q[inliers]), inliers
    except DegenerateConfiguration:
        return hyp, inliers


def _distinct_triples(rng, n, b):
    idx = rng.integers(0, n, size=(b, 3))
    bad = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
    while bad.any():
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), 3))
        bad = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
    return idx


def ransac_rigid(K_pred: CorrespondenceSet, S, T, iterations: int = 1000,
                 inlier_sigma: float = 0.1, seed: int = 0) -> RigidTransform:
    if len(K_pred) < 3:
        raise RegistrationFailed("registration failed: fewer than 3 correspondences")
    p, q = K_pred.points(S, T)
    return ransac_points(p, q, iterations, inlier_sigma, seed)[0]
