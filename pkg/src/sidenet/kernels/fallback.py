"""Pure numpy implementations of the hot kernels.

These are the reference lane: the compiled extension in _native.pyx must
match them numerically (same convention, summation order may differ at
float rounding level). Convolution is expressed through im2col windows so
the contraction runs inside BLAS.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data) -> int:
    """FNV-1a 64-bit over a bytes-like object."""
    h = _FNV_OFFSET
    for b in memoryview(data).cast("B"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _windows(x: np.ndarray, k: int, padding: int, stride: int) -> np.ndarray:
    """(B,C,H,W) -> sliding windows (B,C,H',W',k,k) honoring pad/stride."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def conv2d_forward(x, w, bias, padding: int, stride: int):
    win = _windows(x, w.shape[-1], padding, stride)
    out = np.einsum("ocuv,bcijuv->boij", w, win, optimize=True)
    if bias is not None:
        out += bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_grad_kernel(dy, x, k: int, padding: int, stride: int):
    win = _windows(x, k, padding, stride)
    return np.ascontiguousarray(np.einsum("boij,bcijuv->ocuv", dy, win, optimize=True))


def conv2d_grad_input(dy, w, x_shape, padding: int, stride: int):
    b, c, h, wd = x_shape
    k = w.shape[-1]
    hp, wp = h + 2 * padding, wd + 2 * padding
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros((b, c, hp, wp), dtype=dy.dtype)
    # scatter each kernel offset back onto the padded input grid
    contrib = np.einsum("boij,ocuv->bcijuv", dy, w, optimize=True)
    for u in range(k):
        for v in range(k):
            dxp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += contrib[
                :, :, :, :, u, v
            ]
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxp)
