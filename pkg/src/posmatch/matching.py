"""Position-aware scoring, dual-softmax confidence and match selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import softmax
from .geometry import CorrespondenceSet, as_cloud, warn
from .rope import EncodingConfig, PositionCode


@dataclass(frozen=True)
class MatchConfig:
    theta_c: float = 0.1
    use_mnn: bool = True

    def __post_init__(self):
        if not 0 <= self.theta_c < 1:
            raise ValueError("theta_c must lie in [0, 1)")

    @classmethod
    def rigid(cls) -> "MatchConfig":
        return cls(theta_c=0.05, use_mnn=False)

    @classmethod
    def deformable(cls) -> "MatchConfig":
        return cls(theta_c=0.1, use_mnn=True)


def score_matrix(featS, posS, featT, posT, W_S, W_T, config: EncodingConfig) -> np.ndarray:
    """``S(i, j) = <Theta(S_i) W_S x_i, Theta(T_j) W_T y_j> / sqrt(d)``."""
    xs = np.asarray(featS, dtype=np.float64)
    xt = np.asarray(featT, dtype=np.float64)
    ps, pt = as_cloud(posS), as_cloud(posT)
    d = config.d
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[1] != d or xt.shape[1] != d:
        raise ValueError(f"features must have {d} columns")
    if len(xs) != len(ps) or len(xt) != len(pt):
        raise ValueError("feature rows and positions disagree in count")
    W_S, W_T = np.asarray(W_S, float), np.asarray(W_T, float)
    if W_S.shape != (d, d) or W_T.shape != (d, d):
        raise ValueError("projections must be d x d")
    a = PositionCode(ps, config).apply(xs @ W_S.T)
    b = PositionCode(pt, config).apply(xt @ W_T.T)
    return a @ b.T / np.sqrt(d)


def softmax_factors(S) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise and column-wise softmax of the score matrix."""
    S = np.asarray(S, dtype=np.float64)
    return softmax(S, axis=1), softmax(S, axis=0)


def dual_softmax(S) -> np.ndarray:
    row, col = softmax_factors(S)
    return row * col


def select_matches(C, config: MatchConfig) -> CorrespondenceSet:
    """Cells above ``theta_c``; with MNN also the row- and column-argmax."""
    C = np.asarray(C, dtype=np.float64)
    if C.size == 0:
        return CorrespondenceSet.empty()
    mask = C > config.theta_c
    if config.use_mnn:
        mutual = np.zeros_like(mask)
        rows = np.arange(C.shape[0])
        best_j = C.argmax(axis=1)
        best_i = C.argmax(axis=0)
        mutual[rows, best_j] = best_i[best_j] == rows
        mask &= mutual
    i, j = np.nonzero(mask)
    return CorrespondenceSet(i, j, C[i, j])


def top_soft_matches(C, n_hat: int) -> CorrespondenceSet:
    """The ``n_hat`` most confident cells with confidences renormalised to sum 1.

    Ties go to the earlier cell in row-major order.
    """
    C = np.asarray(C, dtype=np.float64)
    if n_hat < 1:
        raise ValueError("n_hat must be >= 1")
    n_hat = min(n_hat, C.size)
    order = np.argsort(-C.ravel(), kind="stable")[:n_hat]
    i, j = np.unravel_index(order, C.shape)
    w = C[i, j]
    total = w.sum()
    if total <= 0:
        warn("all selected confidences are zero; using uniform weights")
        w = np.full(n_hat, 1.0 / n_hat)
    else:
        w = w / total
    return CorrespondenceSet(i, j, w)
