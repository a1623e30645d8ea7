"""Synthetic rigid and deformable pairs with exact ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CorrespondenceSet, RigidTransform, as_cloud


def sample_surface(rng: np.random.Generator, n: int, extent: float = 1.0) -> np.ndarray:
    """``n`` points on a random smooth height field over ``[-extent, extent]^2``.

    The field is a sum of a few Gaussian bumps and a tilted sinusoid, which
    gives an asymmetric shape without repeated structure.
    """
    xy = rng.uniform(-extent, extent, size=(n, 2))
    z = np.zeros(n)
    for _ in range(4):
        c = rng.uniform(-extent, extent, 2)
        s = rng.uniform(0.25, 0.6) * extent
        z += rng.uniform(-0.5, 0.5) * extent * np.exp(-np.sum((xy - c) ** 2, axis=1) / (2 * s**2))
    k = rng.normal(size=2) * 1.5 / extent
    z += 0.1 * extent * np.sin(xy @ k + rng.uniform(0, 2 * np.pi))
    return np.column_stack([xy, z])


def random_rigid(rng: np.random.Generator, max_translation: float = 1.0) -> RigidTransform:
    R = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(R, rng.uniform(-max_translation, max_translation, 3))


@dataclass
class RigidPair:
    S: np.ndarray
    T: np.ndarray
    transform: RigidTransform
    K_gt: CorrespondenceSet
    S_canonical: np.ndarray
    T_canonical: np.ndarray


def synth_rigid_pair(seed: int, n_points: int = 1000, overlap_fraction: float = 0.6,
                     noise_sigma: float = 0.0, extent: float = 1.0,
                     max_translation: float = 1.0) -> RigidPair:
    """Two complementary crops of one random surface, the target moved by a
    random rigid transform.

    Both clouds have ``n_points`` points; exactly ``round(overlap_fraction *
    n_points)`` of them are shared (before noise), listed in ``K_gt``.  Point
    order is shuffled independently in each cloud.
    """
    if not 0 < overlap_fraction <= 1:
        raise ValueError("overlap_fraction must lie in (0, 1]")
    n_shared = int(round(overlap_fraction * n_points))
    if n_shared < 3:
        raise ValueError("overlap target infeasible: fewer than 3 shared points")
    rng = np.random.default_rng(seed)
    n_total = 2 * n_points - n_shared
    base = sample_surface(rng, n_total, extent)
    direction = rng.normal(size=3)
    direction[2] = 0.0
    base = base[np.argsort(base @ direction, kind="stable")]
    src_idx = np.arange(0, n_points)
    tgt_idx = np.arange(n_points - n_shared, n_total)
    perm_s = rng.permutation(n_points)
    perm_t = rng.permutation(n_points)
    S_can = base[src_idx][perm_s]
    T_can = base[tgt_idx][perm_t]
    gt = random_rigid(rng, max_translation)

    # shared base ids -> positions in each shuffled cloud
    inv_s = np.empty(n_points, np.int64)
    inv_s[perm_s] = np.arange(n_points)
    inv_t = np.empty(n_points, np.int64)
    inv_t[perm_t] = np.arange(n_points)
    shared = np.arange(n_points - n_shared, n_points)
    K_gt = CorrespondenceSet(inv_s[shared], inv_t[shared - (n_points - n_shared)])

    if noise_sigma > 0:
        S_can = S_can + rng.normal(scale=noise_sigma, size=S_can.shape)
        T_can = T_can + rng.normal(scale=noise_sigma, size=T_can.shape)
    return RigidPair(S_can, gt.apply(T_can), gt, K_gt, S_can, T_can)


class AnalyticWarp:
    """Closed-form smooth deformation.

    ``bend``: rotate about the y axis by ``magnitude * x`` radians.
    ``twist``: rotate about the x axis by ``magnitude * x`` radians.
    ``wave``: lift ``z`` by ``magnitude * sin(pi x) cos(pi y / 2)`` meters.
    """

    KINDS = ("bend", "twist", "wave")

    def __init__(self, kind: str, magnitude: float):
        if kind not in self.KINDS:
            raise ValueError(f"unknown warp kind {kind!r}")
        if magnitude < 0:
            raise ValueError("magnitude must be non-negative")
        self.kind = kind
        self.magnitude = float(magnitude)

    def __call__(self, points) -> np.ndarray:
        p = as_cloud(points)
        x, y, z = p.T
        m = self.magnitude
        if self.kind == "wave":
            return np.column_stack([x, y, z + m * np.sin(np.pi * x) * np.cos(0.5 * np.pi * y)])
        a = m * x
        c, s = np.cos(a), np.sin(a)
        if self.kind == "bend":
            return np.column_stack([c * x + s * z, y, -s * x + c * z])
        return np.column_stack([x, c * y - s * z, s * y + c * z])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "magnitude": self.magnitude}


@dataclass
class DeformablePair:
    S: np.ndarray
    T: np.ndarray
    warp: AnalyticWarp
    K_gt: CorrespondenceSet


def synth_deformable_pair(seed: int, n_points: int = 500, warp_kind: str = "bend",
                          magnitude: float = 0.2, extent: float = 0.5) -> DeformablePair:
    """Surface patch and its analytically warped copy; ``K_gt`` is the identity pairing."""
    rng = np.random.default_rng(seed)
    S = sample_surface(rng, n_points, extent)
    warp = AnalyticWarp(warp_kind, magnitude)
    ids = np.arange(n_points)
    return DeformablePair(S, warp(S), warp, CorrespondenceSet(ids, ids))


def coordinate_features(points, d: int, seed: int = 0, bandwidth: float = 0.25,
                        norm: float | None = None) -> np.ndarray:
    """Random Fourier features of coordinates, one ``d``-vector per point.

    Points closer than ``bandwidth`` get similar features.  Rows are scaled to
    Euclidean length ``norm`` (default ``4 * d ** 0.25``, which puts the
    self-score ``|x|^2 / sqrt(d)`` at 16).
    """
    pts = as_cloud(points)
    rng = np.random.default_rng(seed)
    omega = rng.normal(scale=1.0 / bandwidth, size=(3, d // 2))
    phase = pts @ omega
    f = np.concatenate([np.cos(phase), np.sin(phase)], axis=1)
    if f.shape[1] < d:
        f = np.pad(f, ((0, 0), (0, d - f.shape[1])))
    f = f[:, rng.permutation(d)]
    target = norm if norm is not None else 4.0 * d**0.25
    return f * (target / np.linalg.norm(f, axis=1, keepdims=True))


def repetitive_features(points, d: int, seed: int = 0, period: float = 1.0,
                        unique_weight: float = 0.2, bandwidth: float = 0.1,
                        norm: float | None = None) -> np.ndarray:
    """Descriptors of a scene with repeated structure.

    Mostly a function of ``(x mod period, y mod period, z)`` -- so points one
    period apart look alike -- plus a weaker component (``unique_weight``)
    that tells the copies apart.  Descriptor similarity alone is then
    ambiguous at the scale of ``period``, which is where position-aware
    scoring is supposed to help.
    """
    pts = as_cloud(points)
    if not 0 <= unique_weight <= 1:
        raise ValueError("unique_weight must lie in [0, 1]")
    folded = pts.copy()
    folded[:, :2] = np.mod(folded[:, :2], period)
    a = coordinate_features(folded, d, seed=seed, bandwidth=bandwidth, norm=1.0)
    b = coordinate_features(pts, d, seed=seed + 7, bandwidth=bandwidth, norm=1.0)
    f = np.sqrt(1.0 - unique_weight**2) * a + unique_weight * b
    target = norm if norm is not None else 4.0 * d**0.25
    return f * (target / np.linalg.norm(f, axis=1, keepdims=True))
