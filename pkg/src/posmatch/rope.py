"""Rotary 3D positional encoding.

The encoding of a point ``p = (x, y, z)`` is a block-diagonal rotation with
``d / 6`` blocks; block ``k`` rotates channel pairs ``(6k, 6k+1)``,
``(6k+2, 6k+3)`` and ``(6k+4, 6k+5)`` by the angles ``x*theta_k``,
``y*theta_k`` and ``z*theta_k``.  Because every block is a rotation,

    <Theta(p_i) a, Theta(p_j) b> = a^T Theta(p_j - p_i) b,

so dot products of encoded features only see relative positions.

Coordinates are used as given (meters, no normalisation).  Angles grow with
absolute coordinates, so callers with very large coordinates should centre
their clouds first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    d: int = 528
    base: float = 10000.0

    def __post_init__(self):
        if self.d <= 0 or self.d % 6:
            raise ValueError("dimension must be multiple of 6")
        if not self.base > 1:
            raise ValueError("base must exceed 1")


def theta_frequencies(config: EncodingConfig) -> np.ndarray:
    """``theta_k = base ** (-6 (k - 1) / d)`` for ``k = 1 .. d/6``."""
    k = np.arange(config.d // 6)
    return config.base ** (-6.0 * k / config.d)


def _angles(points: np.ndarray, config: EncodingConfig) -> np.ndarray:
    # (n, d/2): for block k the three angles x*th_k, y*th_k, z*th_k
    theta = theta_frequencies(config)
    return (points[:, None, :] * theta[None, :, None]).reshape(len(points), -1)


def _rotate_half(x: np.ndarray) -> np.ndarray:
    """Pairwise (a, b) -> (-b, a) along the last axis."""
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


class PositionCode:
    """Cos/sin tables of the encoding for a set of points.

    Only the ``O(d)`` tables are stored; ``apply`` realises ``Theta(p) x``
    as ``x * cos + rotate_half(x) * sin``.
    """

    def __init__(self, points, config: EncodingConfig):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.config = config
        ang = np.repeat(_angles(pts, config), 2, axis=1)
        self.cos_table = np.cos(ang)
        self.sin_table = np.sin(ang)
        self.cos_table.flags.writeable = False
        self.sin_table.flags.writeable = False

    def __len__(self) -> int:
        return len(self.cos_table)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.config.d:
            raise ValueError(f"feature length {x.shape[-1]} != d = {self.config.d}")
        if x.ndim == 1:
            x = x[None]
        if len(x) != len(self):
            raise ValueError("feature rows do not match encoded positions")
        return x * self.cos_table + _rotate_half(x) * self.sin_table

    def apply_transpose(self, x) -> np.ndarray:
        """``Theta(p)^T x`` (rotation by the negated angles)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        return x * self.cos_table - _rotate_half(x) * self.sin_table


def encode(p, x, config: EncodingConfig) -> np.ndarray:
    """``Theta(p) x``.  Accepts a single point/vector or row-aligned batches."""
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.d:
        raise ValueError(f"feature length {x.shape[-1]} != d = {config.d}")
    single = x.ndim == 1
    out = PositionCode(p.reshape(-1, 3), config).apply(x.reshape(-1, config.d))
    return out[0] if single else out


def dense_theta(p, config: EncodingConfig) -> np.ndarray:
    """The full ``d x d`` block-diagonal matrix for one point (reference form)."""
    x, y, z = np.asarray(p, dtype=np.float64).reshape(3)
    M = np.zeros((config.d, config.d))
    for k, th in enumerate(theta_frequencies(config)):
        for a, coord in enumerate((x, y, z)):
            c, s = np.cos(coord * th), np.sin(coord * th)
            i = 6 * k + 2 * a
            M[i, i], M[i, i + 1] = c, -s
            M[i + 1, i], M[i + 1, i + 1] = s, c
    return M


def relative_dot(x_i, p_i, x_j, p_j, config: EncodingConfig) -> float:
    """Dot product of the two encoded features."""
    return float(np.dot(encode(p_i, x_i, config), encode(p_j, x_j, config)))
