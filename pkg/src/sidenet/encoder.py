"""Frozen, forward-only ViT image encoder with per-layer feature taps.

Weights come from a named tensor archive (see archive.py). For every
transformer layer the encoder records the post-projection query/key/value
attributes (before attention) and the layer's output patch embeddings,
class token excluded. Weights are never gradient-tracked: taps enter the
trainable decoder as constants.

Archive tensor naming scheme (the exporter writes the same names):

    patch_embed/weight (width,3,ps,ps)   patch_embed/bias (width,) [optional]
    class_token (width,)                 pos_embed (P+1,width)
    pre_norm/gain|bias (width,)          [optional]
    layer{l}/ln1/gain|bias               layer{l}/attn/wq|bq|wk|bk|wv|bv|wo|bo
    layer{l}/ln2/gain|bias               layer{l}/mlp/w1|b1|w2|b2
    final_norm/gain|bias

Linear weights are stored (out, in) and applied as x @ W.T + b. Metadata
records head count, per-channel normalization mean/std, and the MLP
activation ("quick_gelu" or "gelu").
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .archive import Archive, read_archive
from .autodiff import Tensor, functional as F
from .errors import ArchiveError, ConfigError, DataError, ShapeError

ATTR_NAMES = ("q", "k", "v")


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    heads: int
    head_dim: int
    patch_size: int
    image_size: int
    activation: str = "quick_gelu"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.activation not in ("quick_gelu", "gelu"):
            raise ConfigError(f"unknown encoder activation {self.activation!r}")

    @property
    def width(self) -> int:
        return self.heads * self.head_dim

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def patches(self) -> int:
        return self.grid * self.grid


# desk-scale test profile
TINY = EncoderConfig(layers=4, heads=4, head_dim=16, patch_size=8, image_size=32)


@dataclass
class LayerTaps:
    """Per-layer attention attributes (T,P,H,D) and patch embeddings (T,P,H*D)."""

    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    patches: np.ndarray

    def attr(self, name: str) -> np.ndarray:
        if name not in ATTR_NAMES:
            raise ConfigError(f"unknown attention attribute {name!r}; expected one of {ATTR_NAMES}")
        return {"q": self.queries, "k": self.keys, "v": self.values}[name]


@dataclass
class EncoderWeights:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    mean: np.ndarray = field(default_factory=lambda: np.full(3, 0.5, dtype=np.float32))
    std: np.ndarray = field(default_factory=lambda: np.full(3, 0.5, dtype=np.float32))

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ArchiveError(f"encoder weights missing tensor '{name}'")


def _required_names(layers: int) -> list[str]:
    names = ["patch_embed/weight", "class_token", "pos_embed", "final_norm/gain", "final_norm/bias"]
    for l in range(layers):
        names += [f"layer{l}/ln1/{p}" for p in ("gain", "bias")]
        names += [f"layer{l}/attn/{p}" for p in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]
        names += [f"layer{l}/ln2/{p}" for p in ("gain", "bias")]
        names += [f"layer{l}/mlp/{p}" for p in ("w1", "b1", "w2", "b2")]
    return names


def _expected_shapes(cfg: EncoderConfig, hidden: int) -> dict[str, tuple]:
    w = cfg.width
    shapes = {
        "patch_embed/weight": (w, 3, cfg.patch_size, cfg.patch_size),
        "class_token": (w,),
        "pos_embed": (cfg.patches + 1, w),
        "final_norm/gain": (w,),
        "final_norm/bias": (w,),
    }
    for l in range(cfg.layers):
        for p in ("gain", "bias"):
            shapes[f"layer{l}/ln1/{p}"] = (w,)
            shapes[f"layer{l}/ln2/{p}"] = (w,)
        for p in ("wq", "wk", "wv", "wo"):
            shapes[f"layer{l}/attn/{p}"] = (w, w)
        for p in ("bq", "bk", "bv", "bo"):
            shapes[f"layer{l}/attn/{p}"] = (w,)
        shapes[f"layer{l}/mlp/w1"] = (hidden, w)
        shapes[f"layer{l}/mlp/b1"] = (hidden,)
        shapes[f"layer{l}/mlp/w2"] = (w, hidden)
        shapes[f"layer{l}/mlp/b2"] = (w,)
    return shapes


def weights_from_archive(ar: Archive, config: EncoderConfig | None = None) -> EncoderWeights:
    meta = ar.meta
    if config is None:
        if "class_token" not in ar:
            raise ArchiveError("archive is missing tensor 'class_token'")
        width = int(ar["class_token"].shape[0])
        heads = int(meta.get("heads", 0))
        if heads <= 0:
            raise ArchiveError("archive metadata missing positive 'heads'")
        if width % heads:
            raise ArchiveError(f"width {width} not divisible by heads {heads}")
        layers = 0
        while f"layer{layers}/ln1/gain" in ar:
            layers += 1
        if layers == 0:
            raise ArchiveError("archive contains no encoder layers (layer0/ln1/gain missing)")
        pw = ar["patch_embed/weight"]
        if pw.ndim != 4 or pw.shape[0] != width or pw.shape[1] != 3:
            raise ArchiveError(f"patch_embed/weight has shape {pw.shape}, expected ({width},3,ps,ps)")
        patch_size = int(pw.shape[2])
        tokens = int(ar["pos_embed"].shape[0])
        grid = math.isqrt(tokens - 1)
        if grid * grid != tokens - 1:
            raise ArchiveError(f"pos_embed rows {tokens} do not match a square patch grid + class token")
        config = EncoderConfig(
            layers=layers,
            heads=heads,
            head_dim=width // heads,
            patch_size=patch_size,
            image_size=patch_size * grid,
            activation=str(meta.get("activation", "quick_gelu")),
        )

    hidden = None
    if f"layer0/mlp/w1" in ar:
        hidden = int(ar["layer0/mlp/w1"].shape[0])
    expected = _expected_shapes(config, hidden if hidden is not None else 4 * config.width)
    for name in _required_names(config.layers):
        if name not in ar:
            raise ArchiveError(f"archive is missing tensor '{name}'")
        got = ar[name].shape
        want = expected[name]
        if tuple(got) != want:
            raise ArchiveError(f"tensor '{name}' has shape {tuple(got)}, expected {want}")

    mean = np.asarray(meta.get("mean", [0.5, 0.5, 0.5]), dtype=np.float32)
    std = np.asarray(meta.get("std", [0.5, 0.5, 0.5]), dtype=np.float32)
    if mean.shape != (3,) or std.shape != (3,):
        raise ArchiveError("normalization mean/std must each have 3 entries")
    return EncoderWeights(config=config, tensors=dict(ar.tensors), mean=mean, std=std)


def load_weights(path, config: EncoderConfig | None = None) -> EncoderWeights:
    """Load and validate an encoder archive; config inferred when omitted."""
    return weights_from_archive(read_archive(path), config)


def normalize_frames(frames: np.ndarray, weights: EncoderWeights) -> np.ndarray:
    """uint8 or float (T,3,S,S) pixels -> normalized float32 input."""
    arr = np.asarray(frames)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ShapeError(f"frames must be (T,3,S,S), got {arr.shape}")
    x = arr.astype(np.float32)
    if arr.dtype == np.uint8:
        x /= 255.0
    return (x - weights.mean[None, :, None, None]) / weights.std[None, :, None, None]


def _affine(x: Tensor, w: np.ndarray, b: np.ndarray) -> Tensor:
    return F.add(F.matmul(x, Tensor(w.T.copy())), Tensor(b))


def _activation(x: Tensor, kind: str) -> Tensor:
    if kind == "quick_gelu":
        return F.mul(x, F.sigmoid(F.mul(x, 1.702)))
    return F.gelu(x)


def encode_frames(frames: np.ndarray, weights: EncoderWeights) -> list[LayerTaps]:
    """Run the frozen encoder; frames must already be normalized.

    Returns one LayerTaps per layer. Pure function of (frames, weights):
    repeated calls are bit-identical.
    """
    cfg = weights.config
    t, c, h, w = frames.shape if frames.ndim == 4 else (0, 0, 0, 0)
    if frames.ndim != 4 or c != 3 or h != cfg.image_size or w != cfg.image_size:
        raise ShapeError(
            f"frames shape {np.asarray(frames).shape} does not match encoder input (T,3,{cfg.image_size},{cfg.image_size})"
        )
    ps, grid, width = cfg.patch_size, cfg.grid, cfg.width
    x = np.ascontiguousarray(frames, dtype=np.float32)
    # patchify: equivalent to stride-ps convolution with the projection kernel
    patches = (
        x.reshape(t, 3, grid, ps, grid, ps)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(t, cfg.patches, 3 * ps * ps)
    )
    proj = weights["patch_embed/weight"].reshape(width, 3 * ps * ps)
    tokens = patches @ proj.T
    if "patch_embed/bias" in weights.tensors:
        tokens += weights["patch_embed/bias"]
    cls = np.broadcast_to(weights["class_token"], (t, 1, width))
    seq = np.concatenate([cls, tokens], axis=1) + weights["pos_embed"]

    xt = Tensor(seq.astype(np.float32))
    if "pre_norm/gain" in weights.tensors:
        xt = F.layer_norm(xt, Tensor(weights["pre_norm/gain"]), Tensor(weights["pre_norm/bias"]))

    n_tok = cfg.patches + 1
    heads, dim = cfg.heads, cfg.head_dim
    scale_shape = (t, n_tok, heads, dim)
    taps: list[LayerTaps] = []
    for l in range(cfg.layers):
        pre = F.layer_norm(xt, Tensor(weights[f"layer{l}/ln1/gain"]), Tensor(weights[f"layer{l}/ln1/bias"]))
        q = _affine(pre, weights[f"layer{l}/attn/wq"], weights[f"layer{l}/attn/bq"])
        k = _affine(pre, weights[f"layer{l}/attn/wk"], weights[f"layer{l}/attn/bk"])
        v = _affine(pre, weights[f"layer{l}/attn/wv"], weights[f"layer{l}/attn/bv"])

        tap_q = q.data.reshape(scale_shape)[:, 1:].copy()
        tap_k = k.data.reshape(scale_shape)[:, 1:].copy()
        tap_v = v.data.reshape(scale_shape)[:, 1:].copy()

        def split(z: Tensor) -> Tensor:
            return F.permute(F.reshape(z, (t, n_tok, heads, dim)), (0, 2, 1, 3))

        attended = F.scaled_dot_attention(split(q), split(k), split(v))
        merged = F.reshape(F.permute(attended, (0, 2, 1, 3)), (t, n_tok, width))
        xt = F.add(xt, _affine(merged, weights[f"layer{l}/attn/wo"], weights[f"layer{l}/attn/bo"]))

        mid = F.layer_norm(xt, Tensor(weights[f"layer{l}/ln2/gain"]), Tensor(weights[f"layer{l}/ln2/bias"]))
        hid = _activation(_affine(mid, weights[f"layer{l}/mlp/w1"], weights[f"layer{l}/mlp/b1"]), cfg.activation)
        xt = F.add(xt, _affine(hid, weights[f"layer{l}/mlp/w2"], weights[f"layer{l}/mlp/b2"]))

        taps.append(LayerTaps(queries=tap_q, keys=tap_k, values=tap_v, patches=xt.data[:, 1:].copy()))
    return taps


def image_patch_index(pixel_x: float, pixel_y: float, config: EncoderConfig) -> int:
    """Row-major patch index containing pixel (x, y)."""
    s = config.image_size
    if not (0 <= pixel_x < s and 0 <= pixel_y < s):
        raise DataError(f"pixel ({pixel_x}, {pixel_y}) outside {s}x{s} image bounds")
    ps = config.patch_size
    return int(pixel_y // ps) * config.grid + int(pixel_x // ps)


def random_encoder_weights(config: EncoderConfig, seed: int = 0,
                           mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)) -> EncoderWeights:
    """Seeded random weights at the given profile (tests and demos)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    w = config.width
    hidden = 4 * w

    def lin(out_d, in_d):
        return rng.normal(0.0, 1.0 / math.sqrt(in_d), size=(out_d, in_d)).astype(np.float32)

    tensors: dict[str, np.ndarray] = {
        "patch_embed/weight": rng.normal(0.0, 1.0 / math.sqrt(3 * config.patch_size ** 2),
                                         size=(w, 3, config.patch_size, config.patch_size)).astype(np.float32),
        "class_token": rng.normal(0.0, 0.02, size=(w,)).astype(np.float32),
        "pos_embed": rng.normal(0.0, 0.1, size=(config.patches + 1, w)).astype(np.float32),
        "final_norm/gain": np.ones(w, dtype=np.float32),
        "final_norm/bias": np.zeros(w, dtype=np.float32),
    }
    for l in range(config.layers):
        tensors[f"layer{l}/ln1/gain"] = np.ones(w, dtype=np.float32)
        tensors[f"layer{l}/ln1/bias"] = np.zeros(w, dtype=np.float32)
        tensors[f"layer{l}/ln2/gain"] = np.ones(w, dtype=np.float32)
        tensors[f"layer{l}/ln2/bias"] = np.zeros(w, dtype=np.float32)
        for p in ("wq", "wk", "wv", "wo"):
            tensors[f"layer{l}/attn/{p}"] = lin(w, w)
        for p in ("bq", "bk", "bv", "bo"):
            tensors[f"layer{l}/attn/{p}"] = np.zeros(w, dtype=np.float32)
        tensors[f"layer{l}/mlp/w1"] = lin(hidden, w)
        tensors[f"layer{l}/mlp/b1"] = np.zeros(hidden, dtype=np.float32)
        tensors[f"layer{l}/mlp/w2"] = lin(w, hidden)
        tensors[f"layer{l}/mlp/b2"] = np.zeros(w, dtype=np.float32)
    return EncoderWeights(
        config=config,
        tensors=tensors,
        mean=np.asarray(mean, dtype=np.float32),
        std=np.asarray(std, dtype=np.float32),
    )


def encoder_meta(weights: EncoderWeights) -> dict:
    """Archive metadata block matching this weight set."""
    return {
        "kind": "vit-encoder",
        "heads": weights.config.heads,
        "activation": weights.config.activation,
        "mean": [float(v) for v in weights.mean],
        "std": [float(v) for v in weights.std],
    }
