"""Robustness perturbation suite.

Seven perturbation kinds, five severity levels each; severity 0 is the
bit-exact identity. Ladder constants are artifact-defined approximations
of common broadcast degradations, constructed so distortion is monotone
in severity on a fixed clip: noise reuses one seeded field scaled by a
growing sigma, block occlusion takes prefixes of one seeded placement
list, and the remaining ladders move a single strength parameter.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .imageops import from_uint8, gaussian_blur, jpeg_roundtrip, psnr, resize_bilinear, to_gray, to_uint8
from .rng import make_rng

KINDS = ("saturation", "contrast", "block", "noise", "blur", "jpeg", "compress")

SATURATION_FACTOR = (0.8, 0.6, 0.4, 0.2, 0.0)
CONTRAST_FACTOR = (0.85, 0.7, 0.55, 0.4, 0.25)
BLOCK_COUNT = (2, 4, 8, 16, 32)
NOISE_SIGMA = (4.0, 8.0, 14.0, 22.0, 32.0)
BLUR_SIGMA = (0.6, 1.2, 2.0, 3.2, 5.0)
JPEG_QUALITY = (90, 70, 50, 30, 10)
COMPRESS_LADDER = ((0.9, 70), (0.75, 55), (0.6, 40), (0.45, 25), (0.3, 15))


def _saturate(clip, level):
    f = SATURATION_FACTOR[level - 1]
    out = np.empty_like(clip)
    for i, frame in enumerate(clip):
        img = from_uint8(frame)
        gray = to_gray(img)[None]
        out[i] = to_uint8(np.clip(gray + f * (img - gray), 0.0, 1.0))
    return out


def _contrast(clip, level):
    f = CONTRAST_FACTOR[level - 1]
    x = clip.astype(np.float64)
    return np.clip(np.rint((x - 127.5) * f + 127.5), 0, 255).astype(np.uint8)


def _block(clip, level, seed):
    t, c, h, w = clip.shape
    side = max(2, h // 8)
    rng = make_rng(seed, "perturb-block")
    # one placement list per clip; severities use growing prefixes so the
    # occluded area is nested and distortion cannot shrink with severity
    max_count = BLOCK_COUNT[-1]
    tops = rng.integers(0, max(1, h - side + 1), size=(t, max_count))
    lefts = rng.integers(0, max(1, w - side + 1), size=(t, max_count))
    out = clip.copy()
    for i in range(t):
        for b in range(BLOCK_COUNT[level - 1]):
            top, left = int(tops[i, b]), int(lefts[i, b])
            out[i, :, top : top + side, left : left + side] = 0
    return out


def _noise(clip, level, seed):
    rng = make_rng(seed, "perturb-noise")
    field = rng.normal(0.0, 1.0, size=clip.shape)  # shared field, scaled per severity
    sigma = NOISE_SIGMA[level - 1]
    return np.clip(np.rint(clip.astype(np.float64) + sigma * field), 0, 255).astype(np.uint8)


def _blur(clip, level):
    sigma = BLUR_SIGMA[level - 1]
    out = np.empty_like(clip)
    for i, frame in enumerate(clip):
        out[i] = to_uint8(np.clip(gaussian_blur(from_uint8(frame), sigma), 0.0, 1.0))
    return out


def _jpeg(clip, level):
    quality = JPEG_QUALITY[level - 1]
    out = np.empty_like(clip)
    for i, frame in enumerate(clip):
        out[i] = jpeg_roundtrip(frame, quality)
    return out


def _compress(clip, level):
    factor, quality = COMPRESS_LADDER[level - 1]
    t, c, h, w = clip.shape
    dh, dw = max(2, int(round(h * factor))), max(2, int(round(w * factor)))
    out = np.empty_like(clip)
    for i, frame in enumerate(clip):
        img = resize_bilinear(resize_bilinear(from_uint8(frame), dh, dw), h, w)
        out[i] = jpeg_roundtrip(to_uint8(np.clip(img, 0.0, 1.0)), quality)
    return out


def apply_perturbation(clip: np.ndarray, kind: str, severity: int, seed: int = 0) -> np.ndarray:
    """Perturbed copy of a (T,3,H,W) uint8 clip."""
    if kind not in KINDS:
        raise ConfigError(f"unknown perturbation kind {kind!r}; expected one of {KINDS}")
    if not (0 <= severity <= 5):
        raise ConfigError(f"severity must lie in 0..5, got {severity}")
    clip = np.asarray(clip)
    if clip.dtype != np.uint8 or clip.ndim != 4:
        raise ConfigError(f"perturbation input must be 4-d uint8, got {clip.dtype} {clip.shape}")
    if severity == 0:
        return clip.copy()
    if kind == "saturation":
        return _saturate(clip, severity)
    if kind == "contrast":
        return _contrast(clip, severity)
    if kind == "block":
        return _block(clip, severity, seed)
    if kind == "noise":
        return _noise(clip, severity, seed)
    if kind == "blur":
        return _blur(clip, severity)
    if kind == "jpeg":
        return _jpeg(clip, severity)
    return _compress(clip, severity)


def clip_psnr(reference: np.ndarray, perturbed: np.ndarray) -> float:
    return psnr(reference, perturbed)
