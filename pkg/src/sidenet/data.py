"""Dataset ingestion: manifests, clip containers, landmarks, clip
sampling, and the video-level augmentation pipeline.

Clips are pre-decoded: either a packed raw-frame container (12-byte
header of little-endian uint32 count/height/width followed by 8-bit RGB
frames) or a directory of image files read in sorted name order.

Manifest: UTF-8, one record per line, tab-separated
    clip_path  label  video_id  split  [landmark_path]  [manipulation_tag]
with '-' for an absent optional field and '#' starting comment lines.

Landmark files: 68 lines of "x y" per frame, frames separated by one
blank line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .imageops import from_uint8, gaussian_blur, jpeg_roundtrip, resize_bilinear, to_uint8
from .rng import fnv1a64

LABELS = ("real", "fake")
SPLITS = ("train", "val", "test")
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".bmp")


@dataclass
class ManifestRecord:
    clip_path: Path
    label: str
    video_id: str
    split: str
    landmark_path: Path | None = None
    manipulation_tag: str | None = None

    @property
    def y(self) -> int:
        return 1 if self.label == "fake" else 0


def load_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) < 4:
            raise DataError(f"{path}:{lineno}: expected at least 4 tab-separated fields, got {len(fields)}")
        clip, label, video_id, split = fields[:4]
        if label not in LABELS:
            raise DataError(f"{path}:{lineno}: unknown label {label!r} (expected real|fake)")
        if split not in SPLITS:
            raise DataError(f"{path}:{lineno}: unknown split {split!r} (expected train|val|test)")
        if clip in seen:
            raise DataError(f"{path}:{lineno}: duplicate clip path {clip!r} (first at line {seen[clip]})")
        seen[clip] = lineno
        clip_path = (base / clip).resolve()
        if not clip_path.exists():
            raise DataError(f"{path}:{lineno}: clip path does not exist: {clip_path}")
        lmk = fields[4] if len(fields) > 4 and fields[4] not in ("", "-") else None
        lmk_path = None
        if lmk is not None:
            lmk_path = (base / lmk).resolve()
            if not lmk_path.is_file():
                raise DataError(f"{path}:{lineno}: landmark path does not exist: {lmk_path}")
        tag = fields[5] if len(fields) > 5 and fields[5] not in ("", "-") else None
        records.append(ManifestRecord(clip_path, label, video_id, split, lmk_path, tag))
    if not records:
        raise DataError(f"manifest has no records: {path}")
    return records


# ---------------------------------------------------------------------------
# frame containers

def write_frames(path, frames: np.ndarray) -> None:
    """Write (F,3,H,W) or (F,H,W,3) uint8 frames as a packed container."""
    arr = np.asarray(frames)
    if arr.dtype != np.uint8 or arr.ndim != 4:
        raise DataError(f"frames must be 4-d uint8, got {arr.dtype} {arr.shape}")
    if arr.shape[1] == 3 and arr.shape[-1] != 3:
        arr = arr.transpose(0, 2, 3, 1)
    count, h, w, c = arr.shape
    if c != 3:
        raise DataError(f"frames must be RGB, got {c} channels")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", count, h, w))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_frames_header(path) -> tuple[int, int, int]:
    """(count, height, width) from a packed container without the payload."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(12)
    except OSError as exc:
        raise DataError(f"cannot open frame container: {exc}")
    if len(head) != 12:
        raise DataError(f"frame container too short: {path}")
    return struct.unpack("<III", head)


def read_clip(path) -> np.ndarray:
    """Load a clip as (F,3,H,W) uint8 from a container or image directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"clip directory holds no image files: {path}")
        frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in files]
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise DataError(f"clip directory frames disagree on size: {sorted(shapes)}")
        return np.stack(frames).transpose(0, 3, 1, 2).copy()
    count, h, w = read_frames_header(path)
    payload = np.fromfile(path, dtype=np.uint8, offset=12)
    expected = count * h * w * 3
    if payload.size != expected:
        raise DataError(f"frame container payload is {payload.size} bytes, expected {expected}: {path}")
    return payload.reshape(count, h, w, 3).transpose(0, 3, 1, 2).copy()


def clip_frame_count(path) -> int:
    path = Path(path)
    if path.is_dir():
        return len([p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES])
    return read_frames_header(path)[0]


# ---------------------------------------------------------------------------
# landmarks

def read_landmarks(path) -> np.ndarray:
    """(F,68,2) landmark coordinates."""
    frames: list[list[tuple[float, float]]] = []
    current: list[tuple[float, float]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            if current:
                frames.append(current)
                current = []
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        current.append((float(parts[0]), float(parts[1])))
    if current:
        frames.append(current)
    if not frames:
        raise DataError(f"landmark file is empty: {path}")
    for i, f in enumerate(frames):
        if len(f) != 68:
            raise DataError(f"{path}: frame {i} has {len(f)} landmarks, expected 68")
    return np.asarray(frames, dtype=np.float64)


def write_landmarks(path, landmarks: np.ndarray) -> None:
    lines = []
    for frame in landmarks:
        for x, y in frame:
            lines.append(f"{float(x):.3f} {float(y):.3f}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# clip sampling

MIN_CLIP_SECONDS = 2.0
MAX_CLIP_SECONDS = 4.0


def plan_windows(n_frames: int, fps: float, rng, max_clips: int = 4) -> list[tuple[int, int]]:
    """Non-overlapping (start, length) windows of 2-4 s; short videos
    yield one full-span window."""
    min_len = int(round(MIN_CLIP_SECONDS * fps))
    if n_frames < min_len:
        return [(0, n_frames)]
    windows = []
    start = 0
    while len(windows) < max_clips and n_frames - start >= min_len:
        length = int(round(rng.uniform(MIN_CLIP_SECONDS, MAX_CLIP_SECONDS) * fps))
        length = min(length, n_frames - start)
        windows.append((start, length))
        start += length
    return windows


def clip_indices(start: int, length: int, frames_per_clip: int) -> np.ndarray:
    """Uniformly spaced frame indices inside [start, start+length)."""
    if length < frames_per_clip:
        raise DataError(f"window of {length} frames cannot supply {frames_per_clip} samples")
    return start + (np.arange(frames_per_clip) * length) // frames_per_clip


def sample_clip(video: np.ndarray, start: int, length: int, frames_per_clip: int) -> np.ndarray:
    idx = clip_indices(start, length, frames_per_clip)
    return video[idx].copy()


# ---------------------------------------------------------------------------
# deterministic dataset shaping

def subsample_video_ids(video_ids, fraction: float, seed: int) -> set:
    """Retain ceil(fraction * V) ids in seeded hash order (superset
    monotone in fraction)."""
    if not (0 < fraction <= 1.0):
        raise ConfigError(f"dataset_fraction must lie in (0,1], got {fraction}")
    ids = sorted(set(video_ids))
    ranked = sorted(ids, key=lambda v: (fnv1a64(f"{seed}:{v}".encode()), v))
    keep = ceil(fraction * len(ids))
    return set(ranked[:keep])


def apply_dataset_fraction(records, fraction: float, seed: int):
    if fraction >= 1.0:
        return list(records)
    train_ids = {r.video_id for r in records if r.split == "train"}
    keep = subsample_video_ids(train_ids, fraction, seed)
    return [r for r in records if r.split != "train" or r.video_id in keep]


def apply_loo_exclusion(records, tag: str):
    """Drop the tagged manipulation's fakes from train/val; test untouched."""
    if not tag:
        return list(records)
    return [
        r for r in records
        if not (r.split in ("train", "val") and r.label == "fake" and r.manipulation_tag == tag)
    ]


# ---------------------------------------------------------------------------
# video-level augmentation

@dataclass
class AugmentConfig:
    p_hflip: float = 0.5
    p_crop: float = 0.8
    p_color: float = 0.5
    p_jpeg: float = 0.3
    p_blur: float = 0.3
    p_downscale: float = 0.3
    crop_scale: tuple = (0.8, 1.0)
    brightness: float = 0.2
    contrast: float = 0.2
    jpeg_quality: tuple = (30, 90)
    blur_sigma: tuple = (0.5, 1.5)
    downscale: tuple = (0.5, 0.9)

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(p_hflip=0.0, p_crop=0.0, p_color=0.0, p_jpeg=0.0, p_blur=0.0, p_downscale=0.0)


def augment_clip(clip: np.ndarray, rng, cfg: AugmentConfig | None = None) -> np.ndarray:
    """Apply one gated transform draw identically to every frame.

    All gates off returns the clip unchanged (bit-exact).
    """
    cfg = cfg or AugmentConfig()
    t, c, h, w = clip.shape
    do_flip = rng.random() < cfg.p_hflip
    do_crop = rng.random() < cfg.p_crop
    do_color = rng.random() < cfg.p_color
    do_jpeg = rng.random() < cfg.p_jpeg
    do_blur = rng.random() < cfg.p_blur
    do_down = rng.random() < cfg.p_downscale
    if not any((do_flip, do_crop, do_color, do_jpeg, do_blur, do_down)):
        return clip.copy()

    crop_side = top = left = 0
    if do_crop:
        frac = rng.uniform(*cfg.crop_scale)
        crop_side = max(2, int(round(frac * min(h, w))))
        top = int(rng.integers(0, h - crop_side + 1))
        left = int(rng.integers(0, w - crop_side + 1))
    if do_color:
        brightness = float(rng.uniform(-cfg.brightness, cfg.brightness))
        contrast = float(rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast))
    if do_blur:
        sigma = float(rng.uniform(*cfg.blur_sigma))
    if do_down:
        factor = float(rng.uniform(*cfg.downscale))
    if do_jpeg:
        quality = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))

    out = np.empty_like(clip)
    for i in range(t):
        img = from_uint8(clip[i])
        if do_flip:
            img = img[:, :, ::-1]
        if do_crop:
            img = resize_bilinear(np.ascontiguousarray(img[:, top : top + crop_side, left : left + crop_side]), h, w)
        if do_color:
            img = np.clip((img - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0)
        if do_blur:
            img = gaussian_blur(img, sigma)
        if do_down:
            dh, dw = max(2, int(round(h * factor))), max(2, int(round(w * factor)))
            img = resize_bilinear(resize_bilinear(img, dh, dw), h, w)
        frame = to_uint8(np.clip(img, 0.0, 1.0))
        if do_jpeg:
            frame = jpeg_roundtrip(frame, quality)
        out[i] = frame
    return out
