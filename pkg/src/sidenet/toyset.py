"""Synthetic desk-scale datasets with controllable spatial/temporal cues.

Each video is an animated "face card": a phase-animated low-frequency
background drifting smoothly over time, with four characteristic part
regions (lips, skin, eyes, nose) drawn at fixed positions and synthetic
68-point landmarks to match.

Variants:
  spatiotemporal  fakes add per-frame independent high-frequency flicker
                  inside the face box (both per-frame texture statistics
                  and temporal coherence separate the classes)
  temporal        fakes re-render the same trajectory with per-frame time
                  jitter: frame i shows position i + jitter_i, so frame
                  marginals and clip coverage match the real videos and
                  only temporal coherence separates the classes (a
                  spatial-only model is blind)
"""

from __future__ import annotations

import argparse
from math import pi
from pathlib import Path

import numpy as np

from .data import write_frames, write_landmarks
from .errors import ConfigError
from .rng import make_rng

VARIANTS = ("spatiotemporal", "temporal")

FACE_BOX = (6, 28, 6, 26)  # rows then cols of the flicker region


def _landmark_template(size: int) -> np.ndarray:
    """68 synthetic landmarks laid out like an aligned face.

    On the Tiny 4x4 patch grid (8 px patches at size 32) each part owns
    disjoint patches: eyes 5/6, nose 9/10, lips 13/14, skin (jaw + brows)
    the border ring.
    """
    s = size / 32.0
    pts = np.zeros((68, 2), dtype=np.float64)
    # jaw 0-16: face sides and lower-left corner
    pts[0:8, 0] = 3.0
    pts[0:8, 1] = np.linspace(8.5, 29.5, 8)
    pts[8:16, 0] = 29.0
    pts[8:16, 1] = np.linspace(8.5, 29.5, 8)
    pts[16] = (5.0, 30.5)
    # brows 17-26: top band
    pts[17:22, 0] = np.linspace(5, 14, 5)
    pts[17:22, 1] = 4.0
    pts[22:27, 0] = np.linspace(18, 27, 5)
    pts[22:27, 1] = 4.0
    # nose 27-35: bridge plus nostril row
    pts[27:32, 0] = 17.0
    pts[27:32, 1] = np.linspace(16.5, 21.5, 5)
    pts[32:36, 0] = np.linspace(12, 19, 4)
    pts[32:36, 1] = 22.5
    # eyes 36-47: six points each around the two pupils
    for base, cx in ((36, 12.0), (42, 20.0)):
        ang = np.linspace(0, 2 * pi, 6, endpoint=False)
        pts[base : base + 6, 0] = cx + 2.4 * np.cos(ang)
        pts[base : base + 6, 1] = 11.5 + 1.5 * np.sin(ang)
    # lips 48-67: two rings
    ang = np.linspace(0, 2 * pi, 12, endpoint=False)
    pts[48:60, 0] = 16 + 5.0 * np.cos(ang)
    pts[48:60, 1] = 27 + 1.8 * np.sin(ang)
    ang = np.linspace(0, 2 * pi, 8, endpoint=False)
    pts[60:68, 0] = 16 + 2.8 * np.cos(ang)
    pts[60:68, 1] = 27 + 1.0 * np.sin(ang)
    return np.clip(pts * s, 0, size - 1)


def _render_video(rng, frames: int, size: int, positions: np.ndarray | None = None):
    """Render a trajectory as (F,3,S,S) uint8 plus per-frame landmarks.

    positions maps each output frame to a trajectory time index; identity
    gives a temporally coherent (real) video.
    """
    s = size / 32.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    fx = rng.uniform(1.0, 3.0) / size
    fy = rng.uniform(1.0, 3.0) / size
    gx = rng.uniform(1.0, 3.0) / size
    phase0 = rng.uniform(0, 2 * pi)
    cycles = rng.uniform(0.4, 0.8)  # texture phase revolutions per video
    warm = rng.uniform(0.0, 0.15)
    static = rng.normal(0.0, 0.02, size=(3, size, size))
    template = _landmark_template(size)
    if positions is None:
        positions = np.arange(frames)

    video = np.zeros((frames, 3, size, size), dtype=np.uint8)
    landmarks = np.zeros((frames, 68, 2), dtype=np.float64)
    for t in range(frames):
        pos = float(positions[t])
        phase = phase0 + 2 * pi * cycles * pos / frames  # animated texture phase
        dx = 1.0 * np.sin(2 * pi * pos / frames + phase0)
        dy = 1.0 * np.cos(2 * pi * pos / frames + phase0)
        base = (
            0.5
            + 0.32 * np.sin(2 * pi * (fx * (xx - dx) + fy * (yy - dy)) + phase)
            + 0.10 * np.cos(2 * pi * gx * (xx + yy) + 3.0 * phase0)
        )
        img = np.stack([base + warm, base, base - warm * 0.5])
        # part textures in patch-grid-aligned face regions
        def region(r0, r1, c0, c1):
            return (slice(None), slice(int(r0 * s), int(r1 * s)), slice(int(c0 * s), int(c1 * s)))

        lips = region(24, 32, 8, 24)
        img[lips] = 0.35 + 0.25 * np.sin(yy[lips[1], lips[2]] * 2.2)[None]
        img[0][lips[1], lips[2]] += 0.3  # reddish lips
        eyes = region(8, 16, 8, 24)
        img[eyes] = 0.75
        for cx in (12.0, 20.0):
            ey, ex = np.mgrid[eyes[1], eyes[2]]
            blob = np.exp(-(((ex - cx * s) ** 2) + ((ey - 11.5 * s) ** 2)) / (4.0 * s * s))
            img[eyes] = img[eyes] * (1 - blob) + 0.05 * blob
        nose = region(16, 24, 8, 24)
        img[nose] = 0.5 + 0.4 * np.sin(xx[nose[1], nose[2]] * (2.1 / s))[None]
        img[2][nose[1], nose[2]] += 0.2  # bluish nose band
        img += static
        video[t] = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
        landmarks[t] = template  # parts are face-fixed; only the backdrop moves
    return video, landmarks


def _jitter_positions(rng, frames: int, span: int = 10) -> np.ndarray:
    """Per-frame time indices with independent jitter, clipped in range."""
    jitter = rng.integers(-span, span + 1, size=frames)
    return np.clip(np.arange(frames) + jitter, 0, frames - 1)


def _add_flicker(video: np.ndarray, rng, size: int) -> np.ndarray:
    """Per-frame independent high-frequency noise inside the face box."""
    r0, r1, c0, c1 = (int(v * size / 32.0) for v in FACE_BOX)
    out = video.astype(np.float64)
    noise = rng.uniform(-1.0, 1.0, size=(video.shape[0], 3, r1 - r0, c1 - c0))
    out[:, :, r0:r1, c0:c1] += 90.0 * noise
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def generate_toyset(out_dir, variant: str = "spatiotemporal", n_train: int = 64,
                    n_val: int = 16, n_test: int = 0, seed: int = 0,
                    frames: int = 60, fps: float = 25.0, size: int = 32) -> Path:
    """Write videos, landmarks, and a manifest; returns the manifest path."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown toyset variant {variant!r}; expected one of {VARIANTS}")
    out_dir = Path(out_dir)
    (out_dir / "videos").mkdir(parents=True, exist_ok=True)
    (out_dir / "landmarks").mkdir(parents=True, exist_ok=True)
    rows = []
    counter = 0
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for i in range(count):
            label = "real" if i % 2 == 0 else "fake"
            vid = f"{split}{i:04d}"
            rng = make_rng(seed, "toyset", counter)
            tag = "-"
            if label == "fake" and variant == "temporal":
                positions = _jitter_positions(make_rng(seed, "jitter", counter), frames)
                video, landmarks = _render_video(rng, frames, size, positions=positions)
                tag = "jitter"
            else:
                video, landmarks = _render_video(rng, frames, size)
                if label == "fake":
                    video = _add_flicker(video, rng, size)
                    tag = "flicker"
            clip_rel = f"videos/{vid}.frames"
            lmk_rel = f"landmarks/{vid}.lmk"
            write_frames(out_dir / clip_rel, video)
            write_landmarks(out_dir / lmk_rel, landmarks)
            rows.append(f"{clip_rel}\t{label}\t{vid}\t{split}\t{lmk_rel}\t{tag}")
            counter += 1
    manifest = out_dir / "manifest.tsv"
    manifest.write_text("# clip_path\tlabel\tvideo_id\tsplit\tlandmark_path\tmanipulation_tag\n"
                        + "\n".join(rows) + "\n", encoding="utf-8")
    return manifest


def main(argv=None):
    parser = argparse.ArgumentParser(description="generate a synthetic toy dataset")
    parser.add_argument("out_dir")
    parser.add_argument("--variant", choices=VARIANTS, default="spatiotemporal")
    parser.add_argument("--train", type=int, default=64)
    parser.add_argument("--val", type=int, default=16)
    parser.add_argument("--test", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--frames", type=int, default=60)
    parser.add_argument("--size", type=int, default=32)
    args = parser.parse_args(argv)
    manifest = generate_toyset(args.out_dir, args.variant, args.train, args.val, args.test,
                               args.seed, args.frames, size=args.size)
    print(f"wrote {manifest}")


if __name__ == "__main__":
    main()
