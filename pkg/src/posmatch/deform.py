"""Embedded deformation graph.

Nodes ``g_i`` carry a rotation ``R_i`` and translation ``t_i``.  A point is
moved by blending the node transforms with Gaussian skinning weights:

    W(p) = sum_i w_{p,i} (R_i (p - g_i) + g_i + t_i),   sum_i w_{p,i} = 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import NearestNeighbors, as_cloud


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(v) @ u == cross(v, u)``; batched over leading axes."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula; batched over leading axes."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    K = hat(phi)
    K2 = K @ K
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * K2


def orthonormalize(R) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.ones(U.shape[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


@dataclass
class DeformationGraph:
    """Nodes, directed edge list (both orientations of every undirected edge)
    and skinning parameters."""

    nodes: np.ndarray
    edges: np.ndarray
    gamma_skin: float = 0.009
    skin_k: int | None = 6

    def __post_init__(self):
        self.nodes = as_cloud(self.nodes)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.gamma_skin <= 0:
            raise ValueError("gamma_skin must be positive")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= len(self.nodes)):
            raise ValueError("edge endpoint out of range")
        self._nn = NearestNeighbors(self.nodes) if len(self.nodes) else None

    def __len__(self) -> int:
        return len(self.nodes)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": self.edges.tolist(),
            "gamma_skin": self.gamma_skin,
            "skin_k": self.skin_k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationGraph":
        return cls(np.asarray(d["nodes"], float).reshape(-1, 3), np.asarray(d["edges"], np.int64).reshape(-1, 2),
                   float(d["gamma_skin"]), d.get("skin_k"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def skinning(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Node ids ``(n, k)`` and normalised weights ``(n, k)`` per point."""
        pts = as_cloud(points)
        if self._nn is None:
            raise ValueError("graph has no nodes")
        k = len(self.nodes) if self.skin_k is None else min(self.skin_k, len(self.nodes))
        ids, dist = self._nn.knn(pts, k)
        d2 = dist**2
        # shifting by the nearest distance cancels in the normalisation and avoids underflow
        w = np.exp(-(d2 - d2[:, :1]) / (2.0 * self.gamma_skin**2))
        return ids, w / w.sum(axis=1, keepdims=True)


def sample_nodes(cloud, node_spacing: float) -> np.ndarray:
    """Greedy radius sampling in point order: a point becomes a node unless it
    lies strictly within ``node_spacing`` of an earlier node."""
    pts = as_cloud(cloud)
    nn = NearestNeighbors(pts)
    covered = np.zeros(len(pts), bool)
    chosen = []
    for i in range(len(pts)):
        if covered[i]:
            continue
        chosen.append(i)
        near = nn.radius(pts[i : i + 1], node_spacing)[0]
        d = np.linalg.norm(pts[near] - pts[i], axis=1)
        covered[np.asarray(near, np.int64)[d < node_spacing]] = True
    return np.asarray(chosen, np.int64)


def build_graph(cloud, node_spacing: float, edge_k: int = 8, gamma_skin: float = 0.009,
                skin_k: int | None = 6, min_component_nodes: int = 40) -> DeformationGraph:
    """Sample nodes over ``cloud``, connect each to its ``edge_k`` nearest nodes
    (symmetrised) and drop connected components smaller than
    ``min_component_nodes``."""
    pts = as_cloud(cloud)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    if node_spacing <= 0 or edge_k < 1:
        raise ValueError("node_spacing must be positive and edge_k >= 1")
    nodes = pts[sample_nodes(pts, node_spacing)]
    n = len(nodes)
    if n > 1:
        ids, _ = NearestNeighbors(nodes).knn(nodes, edge_k + 1)
        src = np.repeat(np.arange(n), ids.shape[1])
        dst = ids.ravel()
        keep = src != dst
        und = np.unique(np.sort(np.stack([src[keep], dst[keep]], 1), axis=1), axis=0)
    else:
        und = np.zeros((0, 2), np.int64)
    if min_component_nodes > 1:
        adj = coo_matrix((np.ones(len(und)), (und[:, 0], und[:, 1])), shape=(n, n))
        _, label = connected_components(adj, directed=False)
        sizes = np.bincount(label)
        alive = sizes[label] >= min_component_nodes
        remap = -np.ones(n, np.int64)
        remap[alive] = np.arange(int(alive.sum()))
        nodes = nodes[alive]
        und = remap[und]
        und = und[(und >= 0).all(axis=1)]
    edges = np.concatenate([und, und[:, ::-1]], axis=0) if len(und) else und.reshape(0, 2)
    return DeformationGraph(nodes, edges, gamma_skin, skin_k)


@dataclass
class GraphState:
    """Per-node accumulated rotation ``R``, translation ``t`` and the rotation
    increment ``phi`` (zero between updates)."""

    R: np.ndarray
    t: np.ndarray
    phi: np.ndarray = field(default=None)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(-1, 3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1, 3)
        if self.phi is None:
            self.phi = np.zeros_like(self.t)
        if len(self.R) != len(self.t):
            raise ValueError("R and t sizes disagree")

    @classmethod
    def identity(cls, n_nodes: int) -> "GraphState":
        return cls(np.tile(np.eye(3), (n_nodes, 1, 1)), np.zeros((n_nodes, 3)))

    def __len__(self) -> int:
        return len(self.t)

    def copy(self) -> "GraphState":
        return GraphState(self.R.copy(), self.t.copy(), self.phi.copy())


def skinning_weights(p, graph: DeformationGraph) -> list[tuple[int, float]]:
    ids, w = graph.skinning(np.asarray(p, dtype=np.float64).reshape(1, 3))
    return list(zip(ids[0].tolist(), w[0].tolist()))


def warp_points(points, graph: DeformationGraph, state: GraphState, skin=None) -> np.ndarray:
    pts = as_cloud(points)
    ids, w = skin if skin is not None else graph.skinning(pts)
    g = graph.nodes[ids]                                       # (n, k, 3)
    moved = np.einsum("nkab,nkb->nka", state.R[ids], pts[:, None, :] - g) + g + state.t[ids]
    return np.einsum("nk,nka->na", w, moved)


def warp_point(p, graph: DeformationGraph, state: GraphState) -> np.ndarray:
    return warp_points(np.asarray(p, float).reshape(1, 3), graph, state)[0]


def apply_update(state: GraphState, delta) -> GraphState:
    """``R_i <- exp(dphi_i) R_i``, ``t_i <- t_i + dt_i``; ``delta`` is ``[phi block | t block]``."""
    n = len(state)
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    if len(delta) != 6 * n:
        raise ValueError(f"update length {len(delta)} != 6 * {n}")
    dphi = delta[: 3 * n].reshape(n, 3)
    dt = delta[3 * n :].reshape(n, 3)
    R = orthonormalize(exp_so3(dphi) @ state.R)
    return GraphState(R, state.t + dt, np.zeros((n, 3)))


class GraphWarp:
    """Callable warp backed by a deformation graph and a state."""

    def __init__(self, graph: DeformationGraph, state: GraphState):
        self.graph = graph
        self.state = state

    def __call__(self, points) -> np.ndarray:
        return warp_points(points, self.graph, self.state)

    def with_state(self, state: GraphState) -> "GraphWarp":
        return GraphWarp(self.graph, state)
