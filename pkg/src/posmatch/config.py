"""Run configuration: per-mode defaults and a strict JSON loader.

``rigid`` defaults correspond to 3DMatch-style scans, ``deformable`` to
4DMatch-style scans.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .attention import LossConfig
from .matching import MatchConfig
from .metrics import MetricConfig
from .nicp import NicpConfig
from .rope import EncodingConfig

MODES = ("rigid", "deformable")


class ConfigError(ValueError):
    pass


@dataclass
class EncodingSection:
    d: int = 528
    base: float = 10000.0


@dataclass
class MatchSection:
    theta_c: float = 0.05
    use_mnn: bool = False


@dataclass
class MetricSection:
    sigma_inlier: float = 0.1
    nfmr_threshold: float | None = None
    fmr_ir_threshold: float | None = 0.05
    rr_rmse_threshold: float | None = 0.2
    knn_k: int = 3


@dataclass
class SupervisionSection:
    gt_match_radius: float = 0.06
    lambda_w: float = 0.0
    alpha: float = 0.25
    gamma_focal: float = 2.0


@dataclass
class SubsampleSection:
    voxel: float = 0.025
    mode: str = "centroid"


@dataclass
class NicpSection:
    lambda_c: float = 1.0
    lambda_a: float = 10.0
    max_iters: int = 50
    step_tol: float = 1e-9
    energy_tol: float = 1e-12
    lm_damping: float = 1e-6
    node_spacing: float = 0.05
    edge_k: int = 8
    gamma_skin: float = 0.009
    skin_k: int = 6
    min_component_nodes: int = 40


@dataclass
class RansacSection:
    iterations: int = 1000
    inlier_sigma: float = 0.1


@dataclass
class RunConfig:
    mode: str = "rigid"
    seed: int = 0
    encoding: EncodingSection = field(default_factory=EncodingSection)
    match: MatchSection = field(default_factory=MatchSection)
    metric: MetricSection = field(default_factory=MetricSection)
    supervision: SupervisionSection = field(default_factory=SupervisionSection)
    subsample: SubsampleSection = field(default_factory=SubsampleSection)
    nicp: NicpSection = field(default_factory=NicpSection)
    ransac: RansacSection = field(default_factory=RansacSection)

    @classmethod
    def defaults(cls, mode: str = "rigid") -> "RunConfig":
        if mode == "rigid":
            return cls(mode="rigid")
        if mode == "deformable":
            return cls(
                mode="deformable",
                match=MatchSection(theta_c=0.1, use_mnn=True),
                metric=MetricSection(sigma_inlier=0.04, nfmr_threshold=0.04,
                                     fmr_ir_threshold=None, rr_rmse_threshold=None),
                supervision=SupervisionSection(gt_match_radius=0.024, lambda_w=0.1),
                subsample=SubsampleSection(voxel=0.01),
                ransac=RansacSection(inlier_sigma=0.04),
            )
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        """Mode defaults overlaid with ``doc``; unknown keys are rejected."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        base = cls.defaults(doc.get("mode", "rigid"))
        cfg = _overlay(base, doc, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(doc)

    def validate(self) -> None:
        try:
            self.encoding_config()
            self.match_config()
            self.loss_config()
            self.metric_config()
            self.nicp_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.subsample.voxel <= 0 or self.supervision.gt_match_radius <= 0:
            raise ConfigError("voxel and gt_match_radius must be positive")
        if self.nicp.node_spacing <= 0 or self.nicp.gamma_skin <= 0:
            raise ConfigError("node_spacing and gamma_skin must be positive")
        if self.ransac.iterations < 1 or self.ransac.inlier_sigma <= 0:
            raise ConfigError("ransac needs iterations >= 1 and positive inlier_sigma")

    def encoding_config(self) -> EncodingConfig:
        return EncodingConfig(self.encoding.d, self.encoding.base)

    def match_config(self) -> MatchConfig:
        return MatchConfig(self.match.theta_c, self.match.use_mnn)

    def loss_config(self) -> LossConfig:
        s = self.supervision
        return LossConfig(s.alpha, s.gamma_focal, s.lambda_w)

    def metric_config(self) -> MetricConfig:
        m = self.metric
        return MetricConfig(sigma_inlier=m.sigma_inlier,
                            fmr_ir_threshold=m.fmr_ir_threshold or 0.05,
                            rr_rmse_threshold=m.rr_rmse_threshold or 0.2,
                            knn_k=m.knn_k)

    def nicp_config(self) -> NicpConfig:
        n = self.nicp
        return NicpConfig(n.lambda_c, n.lambda_a, n.max_iters, n.step_tol, n.energy_tol, n.lm_damping)


def _overlay(obj, doc: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in doc.items():
        where = f"{path}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            updates[key] = _overlay(current, value, where + ".")
        else:
            updates[key] = _coerce(value, current, where)
    return dataclasses.replace(obj, **updates)


def _coerce(value, current, where):
    if isinstance(current, bool) or isinstance(value, bool):
        if not isinstance(value, bool) or not (isinstance(current, bool) or current is None):
            raise ConfigError(f"{where!r} has the wrong type")
        return value
    if value is None:
        if current is None:
            return None
        raise ConfigError(f"{where!r} may not be null")
    if isinstance(current, int) and not isinstance(current, bool):
        if not isinstance(value, int):
            raise ConfigError(f"{where!r} must be an integer")
        return value
    if isinstance(current, float) or current is None:
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where!r} must be a number")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where!r} must be a string")
        if where == "mode" and value not in MODES:
            raise ConfigError(f"unknown mode {value!r}")
        return value
    raise ConfigError(f"cannot set {where!r}")
