"""Pixel-level utilities shared by augmentation, mining, and perturbation.

Images are channel-first float32 arrays in [0,1] unless a function says
otherwise. Everything here is deterministic; randomness stays with the
callers.
"""

from __future__ import annotations

import io

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import ConfigError

LUMA = np.asarray([0.299, 0.587, 0.114], dtype=np.float32)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C,H,W) float image, half-pixel centers."""
    c, h, w = img.shape
    if out_h == h and out_w == w:
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy)[None, :, None] + bot * wy[None, :, None]).astype(np.float32)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding, radius 3*sigma."""
    if sigma <= 0:
        return img.copy()
    radius = max(1, int(round(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t * t) / (2.0 * sigma * sigma))
    kernel = (kernel / kernel.sum()).astype(np.float32)

    def conv_last(x):
        pad = [(0, 0)] * (x.ndim - 1) + [(radius, radius)]
        xp = np.pad(x, pad, mode="reflect")
        win = sliding_window_view(xp, kernel.size, axis=-1)
        return np.einsum("...k,k->...", win, kernel).astype(np.float32)

    out = conv_last(img)
    out = np.swapaxes(conv_last(np.swapaxes(out, -1, -2)), -1, -2)
    return np.ascontiguousarray(out)


def jpeg_roundtrip(frame_u8: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode a (3,H,W) uint8 frame through the JPEG codec."""
    hwc = np.ascontiguousarray(frame_u8.transpose(1, 2, 0))
    buf = io.BytesIO()
    Image.fromarray(hwc, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    dec = np.asarray(Image.open(buf).convert("RGB"), dtype=np.uint8)
    return np.ascontiguousarray(dec.transpose(2, 0, 1))


def to_gray(img: np.ndarray) -> np.ndarray:
    """(3,H,W) -> (H,W) luma."""
    return np.tensordot(LUMA, img, axes=(0, 0))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img_u8: np.ndarray) -> np.ndarray:
    return img_u8.astype(np.float32) / 255.0


def psnr(a_u8: np.ndarray, b_u8: np.ndarray) -> float:
    """Peak signal-to-noise ratio between two uint8 arrays; inf if equal."""
    if a_u8.shape != b_u8.shape:
        raise ConfigError(f"psnr shape mismatch: {a_u8.shape} vs {b_u8.shape}")
    diff = a_u8.astype(np.float64) - b_u8.astype(np.float64)
    mse = float((diff * diff).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / mse)


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary portable graymap from a float array scaled to its own max."""
    g = np.asarray(gray, dtype=np.float64)
    peak = g.max()
    scaled = np.zeros_like(g) if peak <= 0 else g / peak
    data = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
