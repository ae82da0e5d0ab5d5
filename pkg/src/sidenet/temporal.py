"""Temporal decoder: patch-temporal self-attention affinities, local
affinity aggregation (C1), residual cross-time mixing (W), and spatial
aggregation over the patch grid (C2).

The patch-temporal step produces the normalized affinity maps themselves;
no value projection is applied. Affinities depend only on the frozen
encoder taps, so they enter the trainable path as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, functional as F
from .errors import ConfigError, ShapeError
from .rng import make_rng


def temporal_affinity(taps, attrs=("q", "k", "v")) -> np.ndarray:
    """Per-patch temporal self-attention maps.

    For each patch, attribute, and head, affinity[t1, t2] is the softmax
    over t2 of the scaled dot product between the attribute vectors at
    times t1 and t2. Output is (P, len(attrs)*H, T, T), channels grouped
    attribute-major in the order given.
    """
    if not attrs:
        raise ConfigError("temporal module needs at least one attention attribute")
    blocks = []
    for name in attrs:
        a = taps.attr(name)
        t, p, heads, dim = a.shape
        if t < 2:
            raise ConfigError(f"temporal affinity requires T >= 2 frames, got {t}")
        x = np.ascontiguousarray(a.transpose(1, 2, 0, 3))  # (P,H,T,D)
        scores = (x @ np.swapaxes(x, -1, -2)) / math.sqrt(dim)  # (P,H,T,T)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        blocks.append(e / e.sum(axis=-1, keepdims=True))
    return np.ascontiguousarray(np.concatenate(blocks, axis=1), dtype=np.float32)


@dataclass
class TemporalLayerParams:
    """Trainable tensors for one decoder layer's temporal path."""

    conv1_kernel: Tensor  # (1, |attrs|*H, k, k)
    conv1_bias: Tensor  # (1,)
    mix_weight: Tensor  # (T'*T', T'*T')
    mix_bias: Tensor  # (T'*T',)
    conv2_kernel: Tensor  # (1, T'*T', k, k)
    conv2_bias: Tensor  # (1,)


def init_temporal_params(channels: int, t_prime: int, kernel_size: int, seed: int,
                         tag: str = "temporal") -> TemporalLayerParams:
    """Centered-uniform fan-in init for kernels and mixer, zero biases."""
    rng = make_rng(seed, tag)
    k = kernel_size
    flat = t_prime * t_prime

    def uniform(shape, fan_in):
        limit = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=shape).astype(np.float32)

    return TemporalLayerParams(
        conv1_kernel=Tensor(uniform((1, channels, k, k), channels * k * k), requires_grad=True),
        conv1_bias=Tensor(np.zeros(1, dtype=np.float32), requires_grad=True),
        mix_weight=Tensor(uniform((flat, flat), flat), requires_grad=True),
        mix_bias=Tensor(np.zeros(flat, dtype=np.float32), requires_grad=True),
        conv2_kernel=Tensor(uniform((1, flat, k, k), flat * k * k), requires_grad=True),
        conv2_bias=Tensor(np.zeros(1, dtype=np.float32), requires_grad=True),
    )


def affinity_conv(affinity: Tensor, params: TemporalLayerParams, padding: int, stride: int) -> Tensor:
    """(P, C, T, T) affinities -> (P, T', T') via the C1 kernel."""
    if affinity.shape[1] != params.conv1_kernel.shape[1]:
        raise ShapeError(
            f"affinity channels {affinity.shape[1]} != C1 input channels {params.conv1_kernel.shape[1]}"
        )
    out = F.conv2d(affinity, params.conv1_kernel, params.conv1_bias, padding=padding, stride=stride)
    p, _, th, tw = out.shape
    return F.reshape(out, (p, th, tw))


def residual_mix(m2: Tensor, params: TemporalLayerParams) -> Tensor:
    """Flatten the two temporal axes and apply x + xW + b per patch."""
    p, th, tw = m2.shape
    flat = F.reshape(m2, (p, th * tw))
    return F.add(flat, F.add(F.matmul(flat, params.mix_weight), params.mix_bias))


def spatial_aggregate(m3: Tensor, params: TemporalLayerParams, padding: int, stride: int) -> Tensor:
    """Mix across the patch grid with C2; returns the length-P embedding."""
    p, flat = m3.shape
    grid = math.isqrt(p)
    if grid * grid != p:
        raise ConfigError(f"patch count {p} is not a perfect square; cannot form the patch grid")
    stacked = F.reshape(F.permute(m3, (1, 0)), (flat, grid, grid))
    out = F.conv2d(stacked, params.conv2_kernel, params.conv2_bias, padding=padding, stride=stride)
    return F.reshape(out, (out.shape[1] * out.shape[2],))


def temporal_forward(affinity, params: TemporalLayerParams, padding: int = 2, stride: int = 1) -> Tensor:
    """Full temporal path from (P,C,T,T) affinities to the e_t embedding."""
    aff = affinity if isinstance(affinity, Tensor) else Tensor(affinity)
    m2 = affinity_conv(aff, params, padding, stride)
    m3 = residual_mix(m2, params)
    return spatial_aggregate(m3, params, padding, stride)


def conv_output_extent(extent: int, kernel_size: int, padding: int, stride: int) -> int:
    out = (extent + 2 * padding - kernel_size) / stride + 1
    if out != int(out) or out < 1:
        raise ConfigError(
            f"convolution output extent {(extent, kernel_size, padding, stride)} is not a positive integer"
        )
    return int(out)
