"""Forward pass of the position-aware transformer block and the training
losses (evaluated only; nothing here is differentiated).

Positions and features travel separately.  Positions enter only through
the rotary code on queries and keys, so they shape the attention weights
but never the values.  For the same reason the query concatenated into the
MLP input is the position-free projection ``W_q x_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CorrespondenceSet, apply_warp, as_cloud, warn
from .rope import EncodingConfig, PositionCode


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AttentionWeights:
    """Projections ``W_q, W_k, W_v`` (d x d) and a 2d -> d -> d -> d MLP.

    ``mlp`` is a list of three ``(W, b)`` layers with ``W`` shaped
    ``(out, in)``.
    """

    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    mlp: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.W_q.shape[0]

    def validate(self) -> None:
        d = self.d
        for name in ("W_q", "W_k", "W_v"):
            W = getattr(self, name)
            if W.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {W.shape}")
        shapes = [(d, 2 * d), (d, d), (d, d)]
        if len(self.mlp) != 3:
            raise ValueError("MLP needs exactly three layers")
        for (W, b), shp in zip(self.mlp, shapes):
            if W.shape != shp or b.shape != (shp[0],):
                raise ValueError(f"MLP layer shape {W.shape} != {shp}")
        for arr in self.arrays().values():
            if not np.all(np.isfinite(arr)):
                raise ValueError("attention weights must be finite")

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"W_q": self.W_q, "W_k": self.W_k, "W_v": self.W_v}
        for i, (W, b) in enumerate(self.mlp):
            out[f"mlp{i}.W"] = W
            out[f"mlp{i}.b"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "AttentionWeights":
        w = cls(
            np.asarray(arrays["W_q"], float), np.asarray(arrays["W_k"], float), np.asarray(arrays["W_v"], float),
            [(np.asarray(arrays[f"mlp{i}.W"], float), np.asarray(arrays[f"mlp{i}.b"], float)) for i in range(3)],
        )
        w.validate()
        return w

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, mlp_scale: float = 1.0) -> "AttentionWeights":
        """Seeded uniform(-1/sqrt(d), 1/sqrt(d)) initialisation."""
        lim = 1.0 / np.sqrt(d)
        u = lambda *shape: rng.uniform(-lim, lim, size=shape)
        mlp = [(u(d, 2 * d), u(d)), (u(d, d), u(d)), (u(d, d) * mlp_scale, u(d) * mlp_scale)]
        return cls(u(d, d), u(d, d), u(d, d), mlp)

    @classmethod
    def zeros(cls, d: int) -> "AttentionWeights":
        z = lambda *shape: np.zeros(shape)
        return cls(z(d, d), z(d, d), z(d, d), [(z(d, 2 * d), z(d)), (z(d, d), z(d)), (z(d, d), z(d))])


@dataclass
class TransformerWeights:
    self_attn: AttentionWeights
    cross_attn: AttentionWeights

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, mlp_scale: float = 1.0) -> "TransformerWeights":
        return cls(AttentionWeights.random(d, rng, mlp_scale), AttentionWeights.random(d, rng, mlp_scale))

    @classmethod
    def zeros(cls, d: int) -> "TransformerWeights":
        return cls(AttentionWeights.zeros(d), AttentionWeights.zeros(d))


def mlp_forward(layers, h: np.ndarray) -> np.ndarray:
    for idx, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if idx < len(layers) - 1:
            h = gelu(h)
    return h


def _check(features, positions, config: EncodingConfig) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    p = as_cloud(positions)
    if x.ndim != 2 or x.shape[1] != config.d:
        raise ValueError(f"features must be (n, {config.d}), got {x.shape}")
    if len(x) != len(p):
        raise ValueError("feature rows and positions disagree in count")
    return x, p


def attention_weights(features_q, positions_q, features_kv, positions_kv,
                      weights: AttentionWeights, config: EncodingConfig) -> np.ndarray:
    """Row-stochastic attention matrix ``a_ij = softmax_j(q_i . k_j / sqrt(d))``."""
    xq, pq = _check(features_q, positions_q, config)
    xk, pk = _check(features_kv, positions_kv, config)
    q = PositionCode(pq, config).apply(xq @ weights.W_q.T)
    k = PositionCode(pk, config).apply(xk @ weights.W_k.T)
    return softmax(q @ k.T / np.sqrt(config.d), axis=1)


def cross_attention(features_q, positions_q, features_kv, positions_kv,
                    weights: AttentionWeights, config: EncodingConfig) -> np.ndarray:
    """Update query-side features by attending over the key/value side."""
    xq, _ = _check(features_q, positions_q, config)
    xk, _ = _check(features_kv, positions_kv, config)
    if len(xk) == 0:
        raise ValueError("key/value side is empty")
    a = attention_weights(features_q, positions_q, features_kv, positions_kv, weights, config)
    v = xk @ weights.W_v.T
    msg = a @ v
    return xq + mlp_forward(weights.mlp, np.concatenate([xq @ weights.W_q.T, msg], axis=1))


def self_attention(features, positions, weights: AttentionWeights, config: EncodingConfig) -> np.ndarray:
    return cross_attention(features, positions, features, positions, weights, config)


def transformer_block(featS, posS, featT, posT, weights: TransformerWeights,
                      config: EncodingConfig) -> tuple[np.ndarray, np.ndarray]:
    """Self attention on each cloud, then cross attention in both directions.

    The two cross-attention directions read the same self-attended inputs.
    """
    s = self_attention(featS, posS, weights.self_attn, config)
    t = self_attention(featT, posT, weights.self_attn, config)
    s2 = cross_attention(s, posS, t, posT, weights.cross_attn, config)
    t2 = cross_attention(t, posT, s, posS, weights.cross_attn, config)
    return s2, t2


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma_focal: float = 2.0
    lambda_w: float = 0.1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma_focal < 0 or self.lambda_w < 0:
            raise ValueError("gamma_focal and lambda_w must be non-negative")


CLAMP_EPS = 1e-12


def matching_loss(C, K_gt: CorrespondenceSet, config: LossConfig = LossConfig()) -> float:
    """Focal loss ``-mean(alpha (1 - C)^gamma log C)`` over ground-truth cells."""
    C = np.asarray(C, dtype=np.float64)
    if len(K_gt) == 0:
        raise ValueError("empty ground-truth match set")
    K_gt.check_bounds(*C.shape)
    c = C[K_gt.src, K_gt.tgt]
    if np.any(c <= 0):
        warn(f"{int(np.sum(c <= 0))} ground-truth confidences are zero; clamped to {CLAMP_EPS}")
        c = np.maximum(c, CLAMP_EPS)
    c = np.minimum(c, 1.0)
    return float(np.mean(-config.alpha * (1.0 - c) ** config.gamma_focal * np.log(c)))


def warping_loss(S_hat, transform, warp_gt, overlap_ids) -> float:
    """Mean L1 distance between GT-warped and rigidly fitted overlap points."""
    S = as_cloud(S_hat)
    ids = np.asarray(sorted(overlap_ids) if isinstance(overlap_ids, (set, frozenset)) else overlap_ids,
                     dtype=np.int64).reshape(-1)
    if len(ids) == 0:
        warn("empty overlap set; warping loss is 0")
        return 0.0
    if ids.min() < 0 or ids.max() >= len(S):
        raise IndexError("overlap id out of range")
    P = S[ids]
    diff = apply_warp(warp_gt, P) - transform.apply(P)
    return float(np.mean(np.abs(diff).sum(axis=1)))
