"""Point cloud primitives: containers, exact nearest-neighbour search,
voxel subsampling, warps, overlap and ground-truth correspondences.

Point clouds are plain ``(n, 3)`` float64 arrays; ids are row indices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    return pts


# --------------------------------------------------------------------------
# Rigid transforms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidTransform:
    """Rotation ``R`` (3x3) and translation ``t`` (3,), mapping p -> R p + t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t

    __call__ = apply

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def is_valid(self, tol: float = 1e-10) -> bool:
        return bool(
            np.max(np.abs(self.R.T @ self.R - np.eye(3))) < tol
            and abs(np.linalg.det(self.R) - 1.0) < tol
        )

    def to_dict(self) -> dict:
        return {"R": self.R.ravel().tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        R = np.asarray(d["R"], dtype=np.float64)
        t = np.asarray(d["t"], dtype=np.float64)
        if R.size != 9 or t.size != 3:
            raise ValueError("transform needs R with 9 entries and t with 3")
        return cls(R.reshape(3, 3), t)


def rotation_angle(R: np.ndarray) -> float:
    """Angle (rad) of a rotation matrix, robust near 0 and pi."""
    # atan2 form keeps precision for tiny angles where arccos does not
    skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(skew), 0.5 * (np.trace(R) - 1.0)))


# --------------------------------------------------------------------------
# Warp functions
# --------------------------------------------------------------------------


class TabulatedWarp:
    """Per-point displacement known only at a fixed set of source points.

    Evaluating at a point that is not (bit-for-bit, up to ``tol``) one of the
    tabulated sources raises ``ValueError``.
    """

    def __init__(self, source, displacement, tol: float = 1e-12):
        self.source = as_cloud(source)
        self.displacement = np.asarray(displacement, dtype=np.float64).reshape(-1, 3)
        if len(self.source) != len(self.displacement):
            raise ValueError("source and displacement lengths differ")
        self.tol = tol
        self._tree = cKDTree(self.source) if len(self.source) else None

    def __call__(self, points) -> np.ndarray:
        pts = as_cloud(points)
        if len(pts) == 0:
            return pts.copy()
        if self._tree is None:
            raise ValueError("tabulated warp has no entries")
        dist, idx = self._tree.query(pts, k=1)
        if np.any(dist > self.tol):
            raise ValueError("tabulated warp evaluated away from its source points")
        return pts + self.displacement[idx]


def apply_warp(warp, points) -> np.ndarray:
    """Evaluate any warp (RigidTransform, graph warp, tabulated, or callable)."""
    return np.asarray(warp(as_cloud(points)), dtype=np.float64)


# --------------------------------------------------------------------------
# Correspondences
# --------------------------------------------------------------------------


@dataclass
class CorrespondenceSet:
    """Index pairs ``(src[k], tgt[k])`` with a confidence ``conf[k]``."""

    src: np.ndarray
    tgt: np.ndarray
    conf: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.tgt = np.asarray(self.tgt, dtype=np.int64).reshape(-1)
        if self.conf is None:
            self.conf = np.ones(len(self.src))
        self.conf = np.asarray(self.conf, dtype=np.float64).reshape(-1)
        if not (len(self.src) == len(self.tgt) == len(self.conf)):
            raise ValueError("src, tgt and conf must have equal length")
        if not np.all(np.isfinite(self.conf)):
            raise ValueError("confidences must be finite")

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.src)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.tgt.tolist()))

    def transpose(self) -> "CorrespondenceSet":
        return CorrespondenceSet(self.tgt.copy(), self.src.copy(), self.conf.copy())

    def subset(self, mask) -> "CorrespondenceSet":
        return CorrespondenceSet(self.src[mask], self.tgt[mask], self.conf[mask])

    def check_bounds(self, n_src: int, n_tgt: int) -> None:
        if len(self) and (
            self.src.min() < 0 or self.src.max() >= n_src
            or self.tgt.min() < 0 or self.tgt.max() >= n_tgt
        ):
            raise IndexError("correspondence id out of range")

    def points(self, S, T) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the paired points, ``(S[src], T[tgt])``."""
        S, T = as_cloud(S), as_cloud(T)
        self.check_bounds(len(S), len(T))
        return S[self.src], T[self.tgt]

    def to_dict(self) -> dict:
        return {
            "pairs": [[int(i), int(j), float(c)] for i, j, c in zip(self.src, self.tgt, self.conf)]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorrespondenceSet":
        pairs = d["pairs"]
        if not pairs:
            return cls.empty()
        arr = np.asarray(pairs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("pairs must be [[i, j, conf], ...]")
        if np.any(arr[:, :2] != np.round(arr[:, :2])):
            raise ValueError("pair ids must be integers")
        return cls(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])


# --------------------------------------------------------------------------
# Spatial search
# --------------------------------------------------------------------------


class NearestNeighbors:
    """Exact nearest-neighbour index over a fixed cloud.

    Ties are resolved toward the lowest point id.
    """

    def __init__(self, cloud):
        self.cloud = as_cloud(cloud)
        self._tree = cKDTree(self.cloud) if len(self.cloud) else None

    def __len__(self) -> int:
        return len(self.cloud)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(ids, distances)`` of the nearest cloud point to each query."""
        q = as_cloud(queries)
        if self._tree is None:
            raise ValueError("empty target")
        if len(q) == 0:
            return np.zeros(0, np.int64), np.zeros(0)
        if len(self.cloud) == 1:
            idx = np.zeros(len(q), np.int64)
        else:
            d2, i2 = self._tree.query(q, k=2)
            idx = i2[:, 0].astype(np.int64)
            for r in np.flatnonzero(d2[:, 0] == d2[:, 1]):
                idx[r] = self._lowest_tied(q[r], d2[r, 0])
        dist = np.linalg.norm(self.cloud[idx] - q, axis=1)
        return idx, dist

    def _lowest_tied(self, p: np.ndarray, d: float) -> int:
        cand = np.asarray(self._tree.query_ball_point(p, d * (1 + 1e-12) + 1e-300), dtype=np.int64)
        dist = np.linalg.norm(self.cloud[cand] - p, axis=1)
        return int(cand[dist == dist.min()].min())

    def knn(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``k`` nearest ids and distances, shape ``(n, min(k, len(cloud)))``."""
        q = as_cloud(queries)
        if self._tree is None:
            raise ValueError("empty target")
        k = min(k, len(self.cloud))
        dist, idx = self._tree.query(q, k=k)
        return np.asarray(idx, np.int64).reshape(len(q), k), np.asarray(dist).reshape(len(q), k)

    def radius(self, queries, r: float) -> list[list[int]]:
        if self._tree is None:
            return [[] for _ in range(len(queries))]
        return self._tree.query_ball_point(as_cloud(queries), r)


def nearest_neighbor(query, cloud) -> tuple[int, float]:
    """Nearest point of ``cloud`` to a single ``query``: ``(id, distance)``."""
    idx, dist = NearestNeighbors(cloud).query(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(idx[0]), float(dist[0])


# --------------------------------------------------------------------------
# Subsampling, overlap, GT correspondences
# --------------------------------------------------------------------------


def grid_subsample(cloud, voxel: float, mode: str = "centroid") -> tuple[np.ndarray, np.ndarray]:
    """Voxel-grid subsampling on a grid anchored at the origin.

    Returns ``(points, cell_of)`` where ``cell_of[i]`` is the output id that
    input point ``i`` fell into.  ``mode="centroid"`` places each output
    point at the mean of its cell; ``mode="first"`` keeps the lowest-id input
    point of the cell instead.  Output order follows sorted cell keys.
    """
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    pts = as_cloud(cloud)
    if len(pts) == 0:
        return pts.copy(), np.zeros(0, np.int64)
    keys = np.floor(pts / voxel).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if mode == "centroid":
        counts = np.bincount(inverse)
        out = np.zeros((len(first), 3))
        np.add.at(out, inverse, pts)
        out /= counts[:, None]
    elif mode == "first":
        out = pts[first]
    else:
        raise ValueError(f"unknown subsample mode {mode!r}")
    return out, inverse.astype(np.int64)


def overlap_set(S, T, warp, sigma: float) -> tuple[np.ndarray, float]:
    """Source ids whose warped position has a target neighbour closer than ``sigma``.

    Returns ``(ids, overlap_ratio)``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    S, T = as_cloud(S), as_cloud(T)
    if len(S) == 0 or len(T) == 0:
        return np.zeros(0, np.int64), 0.0
    _, dist = NearestNeighbors(T).query(apply_warp(warp, S))
    ids = np.flatnonzero(dist < sigma)
    return ids, len(ids) / len(S)


def mutual_nn_correspondences(S_warped, T, radius: float) -> CorrespondenceSet:
    """Mutual nearest neighbours closer than ``radius``, confidence 1."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    S, T = as_cloud(S_warped), as_cloud(T)
    if len(S) == 0 or len(T) == 0:
        return CorrespondenceSet.empty()
    j_of_i, dist = NearestNeighbors(T).query(S)
    i_of_j, _ = NearestNeighbors(S).query(T)
    i = np.arange(len(S))
    keep = (i_of_j[j_of_i] == i) & (dist < radius)
    return CorrespondenceSet(i[keep], j_of_i[keep], np.ones(int(keep.sum())))


def warn(msg: str) -> None:
    warnings.warn(msg, RuntimeWarning, stacklevel=3)
