"""``posmatch`` command-line interface.

Most commands work on a *pair directory* laid out as::

    source.ply  target.ply          the two clouds
    gt.json                         mode, GT transform or warp, GT matches
    source_features.lprd            per-point descriptors (matrix files)
    target_features.lprd
    matches.json                    written by ``match``
    transform.json                  written by ``register-rigid``
    warped.ply trace.jsonl graph.json   written by ``register-nonrigid``
    report.json                     written by ``eval``

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .deform import GraphState, build_graph, warp_points
from .fileio import FormatError, read_json, read_matrix, read_weights, write_json, write_matrix
from .geometry import CorrespondenceSet, RigidTransform, grid_subsample
from .metrics import correspondence_rmse, flow_metrics, inlier_ratio, nfmr
from .nicp import Matches, UnderdeterminedSystem, gauss_newton_solve
from .pipeline import PipelineWeights, run_pipeline
from .ply import PlyError, read_ply, write_ply
from .procrustes import DegenerateConfiguration
from .ransac import RegistrationFailed, ransac_rigid
from .synth import AnalyticWarp, coordinate_features, repetitive_features, synth_deformable_pair, synth_rigid_pair

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _load_config(args, mode: str | None = None) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
        if mode is not None and cfg.mode != mode:
            raise ConfigError(f"config is for mode {cfg.mode!r} but the data is {mode!r}")
    else:
        cfg = RunConfig.defaults(mode or "rigid")
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    return cfg


def _out_dir(args, default: Path) -> Path:
    out = Path(args.out) if args.out else default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_gt(pair: Path) -> dict:
    gt = read_json(pair / "gt.json")
    if gt.get("mode") not in ("rigid", "deformable"):
        raise FormatError(f"{pair / 'gt.json'}: unknown mode")
    return gt


def _gt_warp(gt: dict):
    if gt["mode"] == "rigid":
        return RigidTransform.from_dict(gt["transform"])
    return AnalyticWarp(**gt["warp"])


def _load_matches(pair: Path, use_gt: bool) -> CorrespondenceSet:
    if use_gt:
        return CorrespondenceSet.from_dict(_load_gt(pair)["K_gt"])
    return CorrespondenceSet.from_dict(read_json(pair / "matches.json"))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args, args.mode)
    out = _out_dir(args, Path("."))
    d = cfg.encoding.d
    if cfg.mode == "rigid":
        pair = synth_rigid_pair(cfg.seed, args.n_points or 1000, args.overlap, args.noise)
        S, T = pair.S, pair.T
        gt = {"mode": "rigid", "seed": cfg.seed, "transform": pair.transform.to_dict(),
              "K_gt": pair.K_gt.to_dict()}
        canon = (pair.S_canonical, pair.T_canonical)
    else:
        pair = synth_deformable_pair(cfg.seed, args.n_points or 500, args.warp, args.magnitude)
        S, T = pair.S, pair.T
        gt = {"mode": "deformable", "seed": cfg.seed, "warp": pair.warp.to_dict(), "K_gt": pair.K_gt.to_dict()}
        canon = (pair.S, pair.S)  # target descriptors follow the material point
    # descriptor bandwidth on the order of the point spacing
    bw = args.bandwidth or (0.1 if cfg.mode == "rigid" else 0.04)
    if args.features == "repetitive":
        feats = [repetitive_features(c, d, seed=cfg.seed, bandwidth=bw) for c in canon]
    else:
        feats = [coordinate_features(c, d, seed=cfg.seed, bandwidth=bw) for c in canon]
    write_ply(out / "source.ply", S)
    write_ply(out / "target.ply", T)
    write_json(out / "gt.json", gt)
    write_matrix(out / "source_features.lprd", feats[0])
    write_matrix(out / "target_features.lprd", feats[1])
    write_json(out / "config.json", cfg.to_dict())
    print(f"wrote {cfg.mode} pair ({len(S)} + {len(T)} points) to {out}")
    return EXIT_OK


def cmd_subsample(args) -> int:
    cfg = _load_config(args)
    voxel = args.voxel if args.voxel is not None else cfg.subsample.voxel
    if voxel <= 0:
        raise UsageError("voxel must be positive")
    src = Path(args.input)
    pts, _ = grid_subsample(read_ply(src), voxel, cfg.subsample.mode)
    out = _out_dir(args, src.parent)
    dest = out / (src.stem + "_sub.ply")
    if dest.resolve() == src.resolve():
        raise UsageError("refusing to overwrite the input")
    write_ply(dest, pts)
    print(f"{len(pts)} points -> {dest}")
    return EXIT_OK


def cmd_match(args) -> int:
    pair = Path(args.pair)
    gt = _load_gt(pair)
    cfg = _load_config(args, gt["mode"])
    S, T = read_ply(pair / "source.ply"), read_ply(pair / "target.ply")
    fs, ft = read_matrix(pair / "source_features.lprd"), read_matrix(pair / "target_features.lprd")
    d = cfg.encoding.d
    weights = PipelineWeights.from_arrays(read_weights(args.weights)) if args.weights else PipelineWeights.identity(d)
    if weights.d != d or fs.ndim != 2 or fs.shape[1] != d or ft.ndim != 2 or ft.shape[1] != d:
        raise UsageError(f"features and weights must have dimension d = {d}")
    result = run_pipeline(S, T, fs, ft, weights, cfg.match_config(), cfg.encoding_config())
    out = _out_dir(args, pair)
    write_json(out / "matches.json", result.matches.to_dict())
    write_json(out / "layers.json", {"transforms": [t.to_dict() if t is not None else None
                                                    for t in result.transforms],
                                     "n_matches": [len(l.matches) for l in result.layers]})
    print(f"{len(result.matches)} matches -> {out / 'matches.json'}")
    return EXIT_OK


def cmd_register_rigid(args) -> int:
    pair = Path(args.pair)
    gt = _load_gt(pair)
    cfg = _load_config(args, gt["mode"])
    S, T = read_ply(pair / "source.ply"), read_ply(pair / "target.ply")
    K = _load_matches(pair, args.use_gt)
    K.check_bounds(len(S), len(T))
    est = ransac_rigid(K, S, T, cfg.ransac.iterations, cfg.ransac.inlier_sigma, cfg.seed)
    out = _out_dir(args, pair)
    write_json(out / "transform.json", est.to_dict())
    print(f"transform -> {out / 'transform.json'}")
    return EXIT_OK


def cmd_register_nonrigid(args) -> int:
    pair = Path(args.pair)
    gt = _load_gt(pair)
    cfg = _load_config(args, gt["mode"])
    S, T = read_ply(pair / "source.ply"), read_ply(pair / "target.ply")
    K = _load_matches(pair, args.use_gt)
    K.check_bounds(len(S), len(T))
    n = cfg.nicp
    graph = build_graph(S, n.node_spacing, n.edge_k, n.gamma_skin, n.skin_k, n.min_component_nodes)
    if len(graph) == 0:
        raise UsageError("no deformation nodes survive component pruning")
    p, q = K.points(S, T)
    out = _out_dir(args, pair)
    with open(out / "trace.jsonl", "w") as trace_file:
        state, _ = gauss_newton_solve(graph, GraphState.identity(len(graph)), Matches(p, q, K.conf),
                                      cfg.nicp_config(), trace_file=trace_file)
    write_ply(out / "warped.ply", warp_points(S, graph, state))
    doc = graph.to_dict()
    doc["state"] = {"R": state.R.reshape(-1, 9).tolist(), "t": state.t.tolist()}
    write_json(out / "graph.json", doc)
    print(f"{len(graph)} nodes; warped cloud -> {out / 'warped.ply'}")
    return EXIT_OK


REPORT_FIELDS = ("pair", "mode", "n_matches", "inlier_ratio", "nfmr", "rmse", "registered", "epe",
                 "acc_strict", "acc_relaxed")


def evaluate_pair(pair_dir: str, config_doc: dict) -> dict:
    """Metric report for one pair directory; fields not applicable are ``None``."""
    pair = Path(pair_dir)
    cfg = RunConfig.from_dict(config_doc)
    gt = _load_gt(pair)
    warp = _gt_warp(gt)
    S, T = read_ply(pair / "source.ply"), read_ply(pair / "target.ply")
    K_gt = CorrespondenceSet.from_dict(gt["K_gt"])
    K = _load_matches(pair, False)
    K.check_bounds(len(S), len(T))
    sigma = cfg.metric.sigma_inlier
    p, q = K.points(S, T)
    u, v = K_gt.points(S, T)
    report = dict.fromkeys(REPORT_FIELDS)
    report.update(pair=str(pair), mode=gt["mode"], n_matches=len(K), inlier_ratio=inlier_ratio(p, q, warp, sigma),
                  nfmr=nfmr(p, q, u, v, cfg.metric.nfmr_threshold or sigma, cfg.metric.knn_k))
    if (pair / "transform.json").exists():
        est = RigidTransform.from_dict(read_json(pair / "transform.json"))
        report["rmse"] = correspondence_rmse(est, u, v)
        report["registered"] = bool(report["rmse"] < cfg.metric_config().rr_rmse_threshold)
    if (pair / "warped.ply").exists():
        warped = read_ply(pair / "warped.ply")
        if len(warped) != len(S):
            raise FormatError("warped.ply does not match the source cloud")
        epe, a1, a2 = flow_metrics(warped - S, warp(S) - S)
        report.update(epe=epe, acc_strict=a1, acc_relaxed=a2)
    return report


def cmd_eval(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    pairs = [str(Path(p)) for p in args.pairs]
    modes = {_load_gt(Path(p))["mode"] for p in pairs}
    if len(modes) > 1:
        raise UsageError("all pairs must share one mode")
    cfg = _load_config(args, modes.pop())
    doc = cfg.to_dict()
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(evaluate_pair, pairs, [doc] * len(pairs)))
    else:
        reports = [evaluate_pair(p, doc) for p in pairs]
    irs = [r["inlier_ratio"] for r in reports]
    summary = {
        "n_pairs": len(reports),
        "mean_inlier_ratio": float(np.mean(irs)),
        "mean_nfmr": float(np.mean([r["nfmr"] for r in reports])),
        "feature_matching_recall": float(np.mean(np.array(irs) > cfg.metric_config().fmr_ir_threshold)),
        "registration_recall": (float(np.mean([r["registered"] for r in reports]))
                                if all(r["registered"] is not None for r in reports) else None),
    }
    doc = {"pairs": reports, "summary": summary}
    out = Path(args.out) if args.out else Path(pairs[0])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", doc)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    results = run_all(stream=sys.stdout)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def cmd_config(args) -> int:
    cfg = _load_config(args, None if args.config else args.mode)
    print(cfg.to_json())
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (unknown keys are rejected)")
    common.add_argument("--seed", type=int, help="overrides the config seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="posmatch", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic pair with ground truth")
    p.add_argument("--mode", choices=("rigid", "deformable"), default=None)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--overlap", type=float, default=0.6, help="rigid: shared fraction of points")
    p.add_argument("--noise", type=float, default=0.0, help="rigid: per-point Gaussian noise (m)")
    p.add_argument("--warp", choices=AnalyticWarp.KINDS, default="bend")
    p.add_argument("--magnitude", type=float, default=0.2)
    p.add_argument("--features", choices=("unique", "repetitive"), default="unique")
    p.add_argument("--bandwidth", type=float, default=None, help="descriptor length scale (m)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("subsample", parents=[common], help="voxel-grid subsample a PLY file")
    p.add_argument("input")
    p.add_argument("--voxel", type=float, default=None)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("match", parents=[common], help="two-pass matching -> matches.json")
    p.add_argument("pair")
    p.add_argument("--weights", help="directory of matrix files with pipeline weights (default: identity)")
    p.set_defaults(func=cmd_match)

    for name, fn, what in (("register-rigid", cmd_register_rigid, "RANSAC -> transform.json"),
                           ("register-nonrigid", cmd_register_nonrigid, "N-ICP -> warped.ply + trace")):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("pair")
        p.add_argument("--use-gt", action="store_true", help="use the GT correspondences instead of matches.json")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", parents=[common], help="metric report for one or more pairs")
    p.add_argument("pairs", nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", parents=[common], help="run the acceptance checks")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("config", parents=[common], help="print the resolved configuration")
    p.add_argument("--mode", choices=("rigid", "deformable"), default="rigid")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DegenerateConfiguration, UnderdeterminedSystem, RegistrationFailed, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, FormatError, PlyError, UsageError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
