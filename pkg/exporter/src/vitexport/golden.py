"""Golden activation fixtures: per-layer taps for fixed input frames."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .archive import read_archive, write_archive
from .model import ReferenceViT

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".bmp")


def load_frames(path) -> np.ndarray:
    """(F,3,S,S) uint8 frames from an image directory or packed container."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"no image files under {path}")
        frames = np.stack([np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in files])
        return frames.transpose(0, 3, 1, 2).copy()
    blob = path.read_bytes()
    count, h, w = struct.unpack_from("<III", blob, 0)
    arr = np.frombuffer(blob, dtype=np.uint8, offset=12, count=count * h * w * 3)
    return arr.reshape(count, h, w, 3).transpose(0, 3, 1, 2).copy()


def export_golden_taps(archive_path, frames: np.ndarray, out_dir) -> list[Path]:
    """One tap archive per frame plus a manifest; returns written paths."""
    tensors, meta = read_archive(archive_path)
    model = ReferenceViT(tensors, meta)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for fi, frame in enumerate(frames):
        taps = model.forward_taps(model.normalize(frame[None]))
        payload = {}
        for l, tap in enumerate(taps):
            payload[f"layer{l}/q"] = tap.q[0]
            payload[f"layer{l}/k"] = tap.k[0]
            payload[f"layer{l}/v"] = tap.v[0]
            payload[f"layer{l}/patches"] = tap.patches[0]
        fmeta = {
            "kind": "golden-taps",
            "frame": frame.reshape(-1).tolist(),
            "frame_shape": list(frame.shape),
            "layers": model.layers,
            "heads": model.heads,
        }
        path = out_dir / f"golden_frame{fi}.nta"
        write_archive(path, payload, fmeta)
        written.append(path)
        entries.append({"taps": path.name})
    (out_dir / "golden_manifest.json").write_text(
        json.dumps({"frames": entries, "archive": Path(archive_path).name}, indent=1),
        encoding="utf-8",
    )
    return written


def verify_tap_relation(archive_path, frame: np.ndarray) -> float:
    """Recompute q from saved layer inputs; returns max abs deviation.

    Internal consistency check: the recorded query tap must equal the
    affine transform of the normalized layer input.
    """
    import torch

    tensors, meta = read_archive(archive_path)
    model = ReferenceViT(tensors, meta)
    x = model.normalize(frame[None])
    ps, grid, width = model.patch_size, model.grid, model.width
    t = 1
    patches = (
        x.reshape(t, 3, grid, ps, grid, ps).permute(0, 2, 4, 1, 3, 5).reshape(t, grid * grid, -1)
    )
    tokens = patches @ model.t["patch_embed/weight"].reshape(width, -1).T
    if "patch_embed/bias" in model.t:
        tokens = tokens + model.t["patch_embed/bias"]
    seq = torch.cat([model.t["class_token"].expand(t, 1, width), tokens], dim=1) + model.t["pos_embed"]
    if "pre_norm/gain" in model.t:
        seq = torch.nn.functional.layer_norm(seq, (width,), model.t["pre_norm/gain"],
                                             model.t["pre_norm/bias"], eps=1e-5)
    pre = torch.nn.functional.layer_norm(seq, (width,), model.t["layer0/ln1/gain"],
                                         model.t["layer0/ln1/bias"], eps=1e-5)
    manual_q = (pre @ model.t["layer0/attn/wq"].T + model.t["layer0/attn/bq"])[:, 1:]
    taps = model.forward_taps(x)
    recorded = taps[0].q[0].reshape(grid * grid, width)
    return float(np.abs(manual_q[0].numpy() - recorded).max())
