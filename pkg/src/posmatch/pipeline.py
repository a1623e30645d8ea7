"""Two-pass Transformer -> Matching -> Procrustes (TMP) pipeline.

Layer 1 runs on the input positions.  Its soft Procrustes fit moves the
source positions (repositioning) before layer 2, which receives the layer-1
transformer outputs as features.  Final matches come from the layer-2
confidence matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import LossConfig, TransformerWeights, matching_loss, transformer_block, warping_loss
from .geometry import CorrespondenceSet, RigidTransform, as_cloud, warn
from .matching import MatchConfig, dual_softmax, score_matrix, select_matches, top_soft_matches
from .procrustes import DegenerateConfiguration, reposition, soft_procrustes
from .rope import EncodingConfig

N_LAYERS = 2


@dataclass
class TMPWeights:
    transformer: TransformerWeights
    W_S: np.ndarray
    W_T: np.ndarray


@dataclass
class PipelineWeights:
    layers: list[TMPWeights]

    def __post_init__(self):
        if len(self.layers) != N_LAYERS:
            raise ValueError(f"pipeline needs exactly {N_LAYERS} TMP layers")
        d = self.layers[0].W_S.shape[0]
        for layer in self.layers:
            for w in (layer.transformer.self_attn, layer.transformer.cross_attn):
                w.validate()
                if w.d != d:
                    raise ValueError("inconsistent feature dimension across layers")
            if layer.W_S.shape != (d, d) or layer.W_T.shape != (d, d):
                raise ValueError("matching projections must be d x d")

    @property
    def d(self) -> int:
        return self.layers[0].W_S.shape[0]

    @classmethod
    def identity(cls, d: int) -> "PipelineWeights":
        """Transformer blocks that pass features through; identity projections."""
        return cls([TMPWeights(TransformerWeights.zeros(d), np.eye(d), np.eye(d)) for _ in range(N_LAYERS)])

    @classmethod
    def random(cls, d: int, seed: int, mlp_scale: float = 1.0) -> "PipelineWeights":
        rng = np.random.default_rng(seed)
        lim = 1.0 / np.sqrt(d)
        return cls([
            TMPWeights(TransformerWeights.random(d, rng, mlp_scale),
                       rng.uniform(-lim, lim, (d, d)), rng.uniform(-lim, lim, (d, d)))
            for _ in range(N_LAYERS)
        ])

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for li, layer in enumerate(self.layers):
            for blk in ("self_attn", "cross_attn"):
                for k, v in getattr(layer.transformer, blk).arrays().items():
                    out[f"layer{li}.{blk}.{k}"] = v
            out[f"layer{li}.W_S"] = layer.W_S
            out[f"layer{li}.W_T"] = layer.W_T
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "PipelineWeights":
        from .attention import AttentionWeights

        layers = []
        for li in range(N_LAYERS):
            blocks = {}
            for blk in ("self_attn", "cross_attn"):
                prefix = f"layer{li}.{blk}."
                blocks[blk] = AttentionWeights.from_arrays(
                    {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
            layers.append(TMPWeights(TransformerWeights(**blocks),
                                     np.asarray(arrays[f"layer{li}.W_S"], float),
                                     np.asarray(arrays[f"layer{li}.W_T"], float)))
        return cls(layers)


@dataclass
class GroundTruth:
    """Ground truth for loss evaluation: GT warp, GT matches and the source
    overlap ids."""

    warp: object
    K_gt: CorrespondenceSet
    overlap_ids: np.ndarray


@dataclass
class LayerOutput:
    features_src: np.ndarray
    features_tgt: np.ndarray
    positions_src: np.ndarray
    confidence: np.ndarray
    soft_matches: CorrespondenceSet
    transform: RigidTransform | None
    matches: CorrespondenceSet | None = None
    matching_loss: float | None = None
    warping_loss: float | None = None


@dataclass
class PipelineOutput:
    matches: CorrespondenceSet
    layers: list[LayerOutput] = field(default_factory=list)
    has_gt: bool = False

    @property
    def confidences(self) -> list[np.ndarray]:
        return [l.confidence for l in self.layers]

    @property
    def transforms(self) -> list[RigidTransform | None]:
        return [l.transform for l in self.layers]


def _fit(C, S, T, layer_idx: int) -> RigidTransform | None:
    try:
        return soft_procrustes(top_soft_matches(C, len(S)), S, T)
    except DegenerateConfiguration as exc:
        warn(f"layer {layer_idx + 1} Procrustes fit failed ({exc})")
        return None


def run_pipeline(S_hat, T_hat, featS, featT, weights: PipelineWeights,
                 match_config: MatchConfig = MatchConfig(), encoding_config: EncodingConfig | None = None,
                 gt: GroundTruth | None = None, loss_config: LossConfig = LossConfig(),
                 reposition_enabled: bool = True) -> PipelineOutput:
    """Run both TMP layers.

    Each layer's Procrustes fit maps the original source positions onto the
    target.  If the layer-1 fit is degenerate, layer 2 keeps the original
    positions.  ``reposition_enabled=False`` forces that fallback (useful to
    isolate the effect of repositioning).
    """
    S, T = as_cloud(S_hat), as_cloud(T_hat)
    cfg = encoding_config or EncodingConfig(weights.d)
    if cfg.d != weights.d:
        raise ValueError("encoding dimension does not match weights")
    xs, xt = np.asarray(featS, float), np.asarray(featT, float)
    if len(xs) != len(S) or len(xt) != len(T):
        raise ValueError("feature rows must match cloud sizes")

    out = PipelineOutput(CorrespondenceSet.empty(), has_gt=gt is not None)
    pos_s = S
    for li, layer in enumerate(weights.layers):
        xs, xt = transformer_block(xs, pos_s, xt, T, layer.transformer, cfg)
        C = dual_softmax(score_matrix(xs, pos_s, xt, T, layer.W_S, layer.W_T, cfg))
        fit = _fit(C, S, T, li)
        lo = LayerOutput(xs, xt, pos_s, C, top_soft_matches(C, len(S)), fit,
                         select_matches(C, match_config))
        if gt is not None:
            lo.matching_loss = matching_loss(C, gt.K_gt, loss_config)
            lo.warping_loss = (warping_loss(S, fit, gt.warp, gt.overlap_ids)
                               if fit is not None else float("nan"))
        out.layers.append(lo)
        if li == 0:
            pos_s = reposition(S, fit) if (fit is not None and reposition_enabled) else S
    out.matches = out.layers[-1].matches
    return out


def total_loss(output: PipelineOutput, lambda_w: float) -> float:
    """``(L_m^1 + L_m^2) + lambda_w (L_w^1 + L_w^2)``."""
    if not output.has_gt:
        raise ValueError("pipeline was run without ground truth")
    lm = sum(l.matching_loss for l in output.layers)
    if lambda_w == 0:
        return float(lm)
    return float(lm + lambda_w * sum(l.warping_loss for l in output.layers))
