"""Training loop: deterministic clip scheduling, the three-head objective
with the FCG term, early stopping on validation video AUROC, and archive
checkpoints that resume bit-exactly.

All randomness derives functionally from (seed, purpose, epoch, ...), so
a resumed run replays the identical decision stream without serialized
generator state.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .autodiff import AdamW, Graph, Tensor, functional as F, no_grad
from .config import TrainConfig
from .data import (
    AugmentConfig,
    apply_dataset_fraction,
    apply_loo_exclusion,
    augment_clip,
    clip_frame_count,
    plan_windows,
    read_clip,
    sample_clip,
)
from .detector import DetectorParams, detector_forward, focal_loss, init_detector_params
from .encoder import EncoderWeights, encode_frames, normalize_frames
from .errors import ConfigError, DataError, NumericalError
from .metrics import video_auroc
from .rng import make_rng
from .spatial import fcg_loss


@dataclass
class TrainResult:
    history: dict
    best_path: Path
    last_path: Path
    best_val_auroc: float
    stopped_epoch: int


class EarlyStopper:
    """Maximize a metric; stop after `patience` non-improving epochs."""

    def __init__(self, patience: int, best: float = float("-inf"), since_improve: int = 0):
        self.patience = int(patience)
        self.best = best
        self.since_improve = since_improve

    def update(self, value: float) -> bool:
        """Record one epoch's metric; returns True when it improved."""
        if value > self.best:
            self.best = value
            self.since_improve = 0
            return True
        self.since_improve += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_improve >= self.patience


def history_digest(history: dict) -> str:
    """Hash of the training trajectory (per-step and per-epoch records)."""
    trajectory = {"epochs": history.get("epochs", []), "steps": history.get("steps", [])}
    blob = json.dumps(trajectory, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, params: DetectorParams, optimizer: AdamW, config: TrainConfig,
                    epoch: int, best_val: float, since_improve: int) -> None:
    tensors = {name: t.data for name, t in params.named_parameters().items()}
    tensors.update(optimizer.state_arrays())
    meta = {
        "kind": "checkpoint",
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "seed": config.seed,
        "epoch": int(epoch),
        "step": int(optimizer.step_count),
        "best_val_auroc": float(best_val),
        "epochs_since_improve": int(since_improve),
        "detector": {
            "layers": params.config.layers,
            "heads": params.config.heads,
            "head_dim": params.config.head_dim,
            "patches": params.config.patches,
        },
    }
    write_archive(path, tensors, meta)


def load_checkpoint(path, params: DetectorParams, optimizer: AdamW | None = None) -> dict:
    """Restore parameter (and optimizer) tensors in place; returns meta."""
    ar = read_archive(path)
    named = params.named_parameters()
    for name, tensor in named.items():
        arr = ar[name]
        if arr.shape != tensor.data.shape:
            raise ConfigError(f"checkpoint tensor '{name}' has shape {arr.shape}, expected {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype).copy()
    if optimizer is not None:
        optimizer.load_state_arrays({k: ar[k] for k in ar.names() if k.startswith("opt/")},
                                    step_count=int(ar.meta.get("step", 0)))
    return ar.meta


def _encode_clip(frames_u8: np.ndarray, weights: EncoderWeights):
    return encode_frames(normalize_frames(frames_u8, weights), weights)


@dataclass
class _ClipJob:
    record: object
    start: int
    length: int
    window_index: int


def _plan_epoch_clips(records, config: TrainConfig, epoch: int) -> list[_ClipJob]:
    by_video: dict[str, list] = {}
    for r in records:
        by_video.setdefault(r.video_id, []).append(r)
    jobs: list[_ClipJob] = []
    for vid in sorted(by_video):
        rec = by_video[vid][0]
        n = clip_frame_count(rec.clip_path)
        if n < config.frames_per_clip:
            raise DataError(f"video {vid!r} has {n} frames, fewer than frames_per_clip={config.frames_per_clip}")
        rng = make_rng(config.seed, "windows", epoch, vid)
        for wi, (start, length) in enumerate(plan_windows(n, config.fps, rng, config.clips_per_video)):
            if length >= config.frames_per_clip:
                jobs.append(_ClipJob(rec, start, length, wi))
    order = make_rng(config.seed, "order", epoch).permutation(len(jobs))
    return [jobs[i] for i in order]


def _load_training_clip(job: _ClipJob, config: TrainConfig, epoch: int) -> np.ndarray:
    video = read_clip(job.record.clip_path)
    clip = sample_clip(video, job.start, job.length, config.frames_per_clip)
    if config.augment:
        rng = make_rng(config.seed, "aug", epoch, job.record.video_id, job.window_index)
        clip = augment_clip(clip, rng, AugmentConfig())
    return clip


def evaluate_split(records, params: DetectorParams, weights: EncoderWeights,
                   config: TrainConfig, purpose: str = "eval"):
    """Deterministic per-video scoring; returns (clip_scores, video_ids, labels)."""
    scores, vids, labels = [], [], []
    by_video: dict[str, object] = {}
    for r in records:
        by_video.setdefault(r.video_id, r)
    for vid in sorted(by_video):
        rec = by_video[vid]
        video = read_clip(rec.clip_path)
        n = video.shape[0]
        rng = make_rng(config.seed, purpose, vid)
        windows = plan_windows(n, config.fps, rng, config.eval_clips_per_video)
        for start, length in windows:
            if length < config.frames_per_clip:
                continue
            clip = sample_clip(video, start, length, config.frames_per_clip)
            taps = _encode_clip(clip, weights)
            with no_grad():
                out = detector_forward(params, taps)
            scores.append(out.score.item())
            vids.append(vid)
            labels.append(rec.y)
    return scores, vids, labels


def train(config: TrainConfig, records, weights: EncoderWeights,
          prototypes: np.ndarray | None, out_dir, resume=None) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "checkpoint_best.nta"
    last_path = out_dir / "checkpoint_last.nta"

    records = apply_loo_exclusion(records, config.loo_exclusion)
    records = apply_dataset_fraction(records, config.dataset_fraction, config.seed)
    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "val"]
    if not train_records:
        raise ConfigError("training split is empty after filtering")
    if not val_records:
        raise ConfigError("validation split is empty; early stopping needs one")
    if config.use_fcg and config.use_spatial and prototypes is None:
        raise ConfigError("FCG is enabled but no mined part prototypes were provided (run `mine` first)")

    det_config = config.detector_config(weights.config)
    params = init_detector_params(det_config, config.seed,
                                  prototypes if config.use_fcg and config.use_spatial else None)
    optimizer = AdamW(params.named_parameters(), lr=config.lr,
                      betas=(config.beta1, config.beta2), weight_decay=config.weight_decay)

    history: dict = {"epochs": [], "steps": [], "config_hash": config.digest()}
    start_epoch = 1
    stopper = EarlyStopper(config.patience)
    if resume is not None:
        meta = load_checkpoint(resume, params, optimizer)
        start_epoch = int(meta["epoch"]) + 1
        stopper = EarlyStopper(config.patience, best=float(meta["best_val_auroc"]),
                               since_improve=int(meta["epochs_since_improve"]))
        history_file = Path(resume).parent / "history.json"
        if history_file.is_file():
            history = json.loads(history_file.read_text(encoding="utf-8"))

    proto_const = None
    if config.use_fcg and config.use_spatial and prototypes is not None:
        proto_const = prototypes.astype(np.float32)

    stopped_epoch = start_epoch - 1
    hit_step_cap = False
    for epoch in range(start_epoch, config.epochs + 1):
        stopped_epoch = epoch
        jobs = _plan_epoch_clips(train_records, config, epoch)
        epoch_losses = []
        for batch_start in range(0, len(jobs), config.batch_size):
            if config.max_steps and optimizer.step_count >= config.max_steps:
                hit_step_cap = True
                break
            batch = jobs[batch_start : batch_start + config.batch_size]
            taps_batch = []
            for job in batch:
                clip = _load_training_clip(job, config, epoch)
                taps_batch.append((_encode_clip(clip, weights), job.record.y))
            with Graph() as graph:
                branch_sums: dict[str, Tensor] = {}
                total = None
                for taps, y in taps_batch:
                    out = detector_forward(params, taps)
                    for name, logit in out.logits().items():
                        term = focal_loss(logit, y, config.focal_gamma)
                        branch_sums[name] = term if name not in branch_sums else F.add(branch_sums[name], term)
                        total = term if total is None else F.add(total, term)
                loss = F.mul(total, 1.0 / len(taps_batch))
                fcg_value = None
                if proto_const is not None:
                    guidance = fcg_loss(params.queries, proto_const, tau=config.tau, sign=config.fcg_sign)
                    fcg_value = guidance.item()
                    if config.w_fcg > 0:
                        loss = F.add(loss, F.mul(guidance, config.w_fcg))
                if not np.isfinite(loss.data).all():
                    raise NumericalError(f"training loss became non-finite at step {optimizer.step_count + 1}")
                graph.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            step_entry = {
                "step": optimizer.step_count,
                "epoch": epoch,
                "loss": float(loss.item()),
                "clips": len(taps_batch),
            }
            for name, t in branch_sums.items():
                step_entry[f"loss_{name}"] = float(t.item()) / len(taps_batch)
            if fcg_value is not None:
                step_entry["loss_fcg"] = float(fcg_value)
            history["steps"].append(step_entry)
            epoch_losses.append(step_entry["loss"])

        train_eval = evaluate_split(train_records, params, weights, config, purpose="train-eval")
        val_eval = evaluate_split(val_records, params, weights, config, purpose="val-eval")
        train_auroc = video_auroc(*train_eval)
        val_auroc = video_auroc(*val_eval)
        improved = stopper.update(val_auroc)
        history["epochs"].append({
            "epoch": epoch,
            "step": optimizer.step_count,
            "mean_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
            "train_auroc": float(train_auroc),
            "val_auroc": float(val_auroc),
            "best_val_auroc": float(stopper.best),
            "since_improve": stopper.since_improve,
        })
        save_checkpoint(last_path, params, optimizer, config, epoch, stopper.best, stopper.since_improve)
        if improved or not best_path.exists():
            save_checkpoint(best_path, params, optimizer, config, epoch, stopper.best, stopper.since_improve)
        (out_dir / "history.json").write_text(json.dumps(history, indent=1), encoding="utf-8")
        if stopper.should_stop or hit_step_cap:
            break

    (out_dir / "history.json").write_text(json.dumps(history, indent=1), encoding="utf-8")
    return TrainResult(history=history, best_path=best_path, last_path=last_path,
                       best_val_auroc=stopper.best, stopped_epoch=stopped_epoch)


def score_clip(clip_u8: np.ndarray, params: DetectorParams, weights: EncoderWeights) -> dict:
    """Score one (T,3,S,S) clip; returns score, per-branch logits, timing."""
    t0 = time.perf_counter()
    taps = _encode_clip(clip_u8, weights)
    t1 = time.perf_counter()
    with no_grad():
        out = detector_forward(params, taps)
    t2 = time.perf_counter()
    result = {
        "score": out.score.item(),
        "encode_seconds": t1 - t0,
        "decode_seconds": t2 - t1,
        "total_seconds": t2 - t0,
    }
    for name, logit in out.logits().items():
        result[f"logit_{name}"] = logit.item()
    return result
