"""Correspondence and registration metrics for rigid and deformable pairs.

All functions take matched point coordinates, ``(n, 3)`` arrays of sources
``p`` and targets ``q`` aligned row by row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NearestNeighbors, RigidTransform, apply_warp, as_cloud, warn


@dataclass(frozen=True)
class MetricConfig:
    sigma_inlier: float = 0.04
    fmr_ir_threshold: float = 0.05
    rr_rmse_threshold: float = 0.2
    knn_k: int = 3
    acc_thresholds: tuple = ((0.05, 0.05), (0.1, 0.1))  # (absolute m, relative)

    def __post_init__(self):
        if self.sigma_inlier <= 0 or self.fmr_ir_threshold <= 0 or self.rr_rmse_threshold <= 0 or self.knn_k < 1:
            raise ValueError("metric thresholds must be positive")

    @classmethod
    def rigid(cls) -> "MetricConfig":
        return cls(sigma_inlier=0.1)

    @classmethod
    def deformable(cls) -> "MetricConfig":
        return cls(sigma_inlier=0.04)


def inlier_ratio(p, q, warp_gt, sigma: float) -> float:
    """Fraction of pairs with ``|W_gt(p) - q| < sigma``."""
    p, q = as_cloud(p), as_cloud(q)
    if len(p) == 0:
        warn("no predicted matches; inlier ratio is 0")
        return 0.0
    err = np.linalg.norm(apply_warp(warp_gt, p) - q, axis=1)
    return float(np.mean(err < sigma))


def scene_flow_interpolate(u, anchors, flows, k: int = 3) -> np.ndarray:
    """Inverse-distance weighted flow of the ``k`` nearest anchors at each ``u``.

    A query within 1e-12 of an anchor takes that anchor's flow exactly.
    Accepts a single point or an ``(n, 3)`` batch.
    """
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    u = as_cloud(u.reshape(-1, 3))
    A = as_cloud(anchors)
    F = np.asarray(flows, dtype=np.float64).reshape(-1, 3)
    if len(A) == 0:
        raise ValueError("no anchors")
    ids, dist = NearestNeighbors(A).knn(u, k)
    coincide = dist[:, 0] < 1e-12
    inv = 1.0 / np.where(coincide[:, None], 1.0, dist)
    out = np.einsum("nk,nka->na", inv, F[ids]) / inv.sum(axis=1, keepdims=True)
    out[coincide] = F[ids[coincide, 0]]
    return out[0] if single else out


def nfmr(pred_p, pred_q, gt_u, gt_v, sigma: float, k: int = 3) -> float:
    """Fraction of GT pairs ``(u, v)`` with ``|u + flow(u) - v| < sigma``, where
    ``flow`` interpolates the predicted sparse flow ``q - p``."""
    gt_u, gt_v = as_cloud(gt_u), as_cloud(gt_v)
    if len(gt_u) == 0:
        raise ValueError("empty ground-truth set")
    pred_p, pred_q = as_cloud(pred_p), as_cloud(pred_q)
    if len(pred_p) == 0:
        return 0.0
    flow = scene_flow_interpolate(gt_u, pred_p, pred_q - pred_p, k)
    return float(np.mean(np.linalg.norm(gt_u + flow - gt_v, axis=1) < sigma))


def feature_matching_recall(inlier_ratios, threshold: float = 0.05) -> float:
    ir = np.asarray(inlier_ratios, dtype=np.float64).reshape(-1)
    if len(ir) == 0:
        raise ValueError("no pairs")
    return float(np.mean(ir > threshold))


def correspondence_rmse(transform: RigidTransform, p, q) -> float:
    p, q = as_cloud(p), as_cloud(q)
    return float(np.sqrt(np.mean(np.sum((transform.apply(p) - q) ** 2, axis=1))))


def registration_recall(estimates, gt_pairs, threshold: float = 0.2) -> float:
    """Fraction of pairs whose GT-correspondence RMSE under the estimate is below ``threshold``.

    ``gt_pairs`` is a list of ``(p, q)`` coordinate arrays, one per estimate.
    """
    if len(estimates) != len(gt_pairs):
        raise ValueError("estimates and ground-truth lists differ in length")
    if not estimates:
        raise ValueError("no pairs")
    ok = [correspondence_rmse(T, p, q) < threshold for T, (p, q) in zip(estimates, gt_pairs)]
    return float(np.mean(ok))


def flow_metrics(pred_flow, gt_flow, thresholds=((0.05, 0.05), (0.1, 0.1))) -> tuple[float, ...]:
    """``(EPE, Acc_1, Acc_2, ...)``; a point is accurate when its error is
    below the absolute bound or its relative error below the relative bound."""
    pred = np.asarray(pred_flow, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_flow, dtype=np.float64).reshape(-1, 3)
    if len(pred) != len(gt):
        raise ValueError("flow arrays differ in length")
    if len(pred) == 0:
        raise ValueError("empty flow")
    err = np.linalg.norm(pred - gt, axis=1)
    mag = np.linalg.norm(gt, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(mag > 0, err / mag, np.where(err == 0, 0.0, np.inf))
    accs = [float(np.mean((err < a) | (rel < r))) for a, r in thresholds]
    return (float(err.mean()), *accs)
