"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .config import TrainConfig, resolve_config
from .data import clip_indices, load_manifest, read_clip, read_landmarks, write_frames
from .detector import (
    DetectorConfig,
    REFERENCE_BUDGET,
    analytic_param_count,
    init_detector_params,
    parameter_report,
)
from .encoder import TINY, load_weights
from .errors import ConfigError, DataError, NumericalError, SidenetError
from .imageops import write_pgm
from .metrics import average_precision, video_auroc, video_scores
from .perturb import KINDS, apply_perturbation, clip_psnr
from .rng import fnv1a64
from .spatial import (
    MiningSample,
    attention_grids,
    mine_part_prototypes,
    mining_meta,
    prototypes_from_archive,
    prototypes_to_entries,
)
from .train import evaluate_split, load_checkpoint, score_clip, train

VITL_DIMS = {"layers": 24, "heads": 16, "head_dim": 64, "patches": 256}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidenet", description="side-network video deepfake detector")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--weights", help="encoder tensor archive")
    parser.add_argument("--checkpoint", help="detector checkpoint archive")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine facial part prototypes into an archive")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--phi", help="mined prototype archive (needed when FCG is on)")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate AUROC/AP on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("score", help="score a single clip")
    p.add_argument("--clip", required=True)

    p = sub.add_parser("perturb", help="emit perturbed copies of a clip")
    p.add_argument("--clip", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--severity", type=int)
    p.add_argument("--all", action="store_true", help="every kind at every severity")

    p = sub.add_parser("dump-affinity", help="write per-query attention heatmaps")
    p.add_argument("--clip", required=True, nargs="+")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("params", help="report the trainable parameter count")
    p.add_argument("--profile", choices=("vitl", "tiny"), default="vitl")
    return parser


def _config_from_args(args) -> TrainConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve_config(args.config, overrides)


def _need_weights(args):
    if not args.weights:
        raise ConfigError("this command requires --weights <encoder archive>")
    return load_weights(args.weights)


def _load_detector(args, config: TrainConfig, weights):
    if not args.checkpoint:
        raise ConfigError("this command requires --checkpoint <detector archive>")
    meta = read_archive(args.checkpoint).meta
    stored = TrainConfig.from_dict(meta["config"]) if "config" in meta else config
    det = stored.detector_config(weights.config)
    params = init_detector_params(det, stored.seed)
    load_checkpoint(args.checkpoint, params)
    return params, stored


def _select_mining_samples(records, config: TrainConfig):
    usable = [r for r in records if r.split == "train" and r.landmark_path is not None]
    if not usable:
        raise DataError("mining needs train-split records with landmark paths")
    ranked = sorted(usable, key=lambda r: (fnv1a64(f"{config.seed}:{r.video_id}".encode()), r.video_id))
    samples = []
    for rec in ranked:
        if len(samples) >= config.mining_frames:
            break
        video = read_clip(rec.clip_path)
        landmarks = read_landmarks(rec.landmark_path)
        n = min(video.shape[0], landmarks.shape[0])
        step = max(1, n // 4)
        for f in range(0, n, step):
            samples.append(MiningSample(frame=video[f], landmarks=landmarks[f]))
            if len(samples) >= config.mining_frames:
                break
    return samples


def _uniform_clip(path, frames_per_clip: int) -> np.ndarray:
    video = read_clip(path)
    n = video.shape[0]
    if n < frames_per_clip:
        raise DataError(f"clip {path} has {n} frames, fewer than frames_per_clip={frames_per_clip}")
    return video[clip_indices(0, n, frames_per_clip)]


def _cmd_mine(args, config: TrainConfig) -> int:
    weights = _need_weights(args)
    records = load_manifest(args.manifest)
    samples = _select_mining_samples(records, config)
    protos = mine_part_prototypes(samples, weights, attr=config.spatial_attr,
                                  rounds=config.mining_rounds, seed=config.seed)
    meta = mining_meta(config.seed, config.mining_rounds, config.spatial_attr)
    meta["frames"] = len(samples)
    write_archive(args.out, prototypes_to_entries(protos), meta)
    print(f"mined {protos.shape[0]} layers x {protos.shape[1]} parts from {len(samples)} frames -> {args.out}")
    return 0


def _cmd_train(args, config: TrainConfig) -> int:
    weights = _need_weights(args)
    records = load_manifest(args.manifest)
    prototypes = None
    if args.phi:
        prototypes = prototypes_from_archive(read_archive(args.phi))
    result = train(config, records, weights, prototypes, args.out_dir, resume=args.resume)
    print(f"stopped at epoch {result.stopped_epoch}; best val AUROC {result.best_val_auroc:.4f}")
    print(f"best checkpoint: {result.best_path}")
    print(f"history: {Path(args.out_dir) / 'history.json'}")
    return 0


def _cmd_eval(args, config: TrainConfig) -> int:
    weights = _need_weights(args)
    params, stored = _load_detector(args, config, weights)
    records = [r for r in load_manifest(args.manifest) if r.split == args.split]
    if not records:
        raise DataError(f"manifest has no records in split {args.split!r}")
    scores, vids, labels = evaluate_split(records, params, weights, stored)
    auc = video_auroc(scores, vids, labels)
    _, means, ys = video_scores(scores, vids, labels)
    ap = average_precision(means, ys)
    print(f"split={args.split} videos={len(set(vids))} clips={len(scores)}")
    print(f"video AUROC: {auc:.4f}")
    print(f"video AP:    {ap:.4f}")
    return 0


def _cmd_score(args, config: TrainConfig) -> int:
    weights = _need_weights(args)
    params, stored = _load_detector(args, config, weights)
    clip = _uniform_clip(args.clip, stored.frames_per_clip)
    result = score_clip(clip, params, weights)
    for key in sorted(result):
        value = result[key]
        print(f"{key}: {value:.6f}" if isinstance(value, float) else f"{key}: {value}")
    return 0


def _cmd_perturb(args, config: TrainConfig) -> int:
    clip = read_clip(args.clip)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.all:
        targets = [(k, s) for k in KINDS for s in range(1, 6)]
    else:
        if not args.kind or args.severity is None:
            raise ConfigError("perturb needs --kind and --severity (or --all)")
        targets = [(args.kind, args.severity)]
    for kind, severity in targets:
        out = apply_perturbation(clip, kind, severity, seed=config.seed)
        path = out_dir / f"{kind}_s{severity}.frames"
        write_frames(path, out)
        print(f"{path}  psnr={clip_psnr(clip, out):.2f}dB")
    return 0


def _cmd_dump_affinity(args, config: TrainConfig) -> int:
    weights = _need_weights(args)
    params, stored = _load_detector(args, config, weights)
    if not params.config.use_spatial:
        raise ConfigError("checkpoint has no spatial module; nothing to dump")
    from .encoder import encode_frames, normalize_frames

    accum = None
    for clip_path in args.clip:
        clip = _uniform_clip(clip_path, stored.frames_per_clip)
        taps = encode_frames(normalize_frames(clip, weights), weights)
        grids = [attention_grids(params.queries[l].data, taps[l], stored.spatial_attr)
                 for l in range(params.config.layers)]
        stacked = np.mean(grids, axis=0)  # layer-averaged (N,T,g,g)
        accum = stacked if accum is None else accum + stacked
    accum /= len(args.clip)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n, t = accum.shape[0], accum.shape[1]
    for qi in range(n):
        for fi in range(t):
            write_pgm(out_dir / f"query{qi}_frame{fi}.pgm", accum[qi, fi])
    print(f"wrote {n * t} heatmaps ({n} queries x {t} frames) to {out_dir}")
    return 0


def _cmd_params(args, config: TrainConfig) -> int:
    if args.weights:
        enc = load_weights(args.weights).config
        dims = {"layers": enc.layers, "heads": enc.heads, "head_dim": enc.head_dim, "patches": enc.patches}
    elif args.profile == "tiny":
        dims = {"layers": TINY.layers, "heads": TINY.heads, "head_dim": TINY.head_dim, "patches": TINY.patches}
    else:
        dims = dict(VITL_DIMS)
    det = DetectorConfig(
        frames=config.frames_per_clip,
        n_queries=config.n_queries,
        spatial_attr=config.spatial_attr,
        temporal_attrs=config.attr_tuple,
        use_spatial=config.use_spatial,
        use_temporal=config.use_temporal,
        use_fcg=config.use_fcg,
        share_temporal_weights=config.share_temporal_weights,
        aggregate=config.aggregate,
        **dims,
    )
    report = parameter_report(det)
    print(f"profile: {args.profile if not args.weights else 'from weights'}  "
          f"(L={det.layers}, H={det.heads}, D={det.head_dim}, P={det.patches}, T={det.frames})")
    print(f"temporal weights: {report['temporal_weights']}")
    for group, count in report["groups"].items():
        print(f"  {group:18s} {count:>10,d}")
    print(f"total trainable:     {report['total']:>10,d}")
    print(f"reference budget:    {REFERENCE_BUDGET:>10,d}  (published 250.0K figure for the "
          f"ViT-L/14 setup; this configuration is {report['ratio_to_reference']:.2f}x of it)")
    assert analytic_param_count(det) == report["total"]
    return 0


_COMMANDS = {
    "mine": _cmd_mine,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "perturb": _cmd_perturb,
    "dump-affinity": _cmd_dump_affinity,
    "params": _cmd_params,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except SidenetError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
