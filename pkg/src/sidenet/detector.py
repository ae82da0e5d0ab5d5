"""Detector head: assembles per-layer spatial/temporal embeddings, applies
layer norms and the three classification heads, and owns the training
losses. Encoder weights are never part of the trainable parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, functional as F
from .encoder import EncoderConfig
from .errors import ConfigError, ShapeError
from .rng import make_rng
from .spatial import init_queries, spatial_forward
from .temporal import (
    TemporalLayerParams,
    conv_output_extent,
    init_temporal_params,
    temporal_affinity,
    temporal_forward,
)

# published trainable-parameter budget for the reference ViT-L/14 setup
REFERENCE_BUDGET = 250_000


@dataclass(frozen=True)
class DetectorConfig:
    layers: int
    heads: int
    head_dim: int
    patches: int
    frames: int = 10
    n_queries: int = 4
    spatial_attr: str = "k"
    temporal_attrs: tuple = ("q", "k", "v")
    use_spatial: bool = True
    use_temporal: bool = True
    use_fcg: bool = True
    share_temporal_weights: bool = False
    aggregate: str = "mean"
    kernel_size: int = 5
    conv_padding: int = 2
    conv_stride: int = 1

    def __post_init__(self):
        if not self.use_spatial and not self.use_temporal:
            raise ConfigError("at least one of the spatial/temporal modules must be enabled")
        if self.use_spatial and not (1 <= self.n_queries <= 4):
            raise ConfigError(f"n_queries must be in [1,4], got {self.n_queries}")
        if self.use_temporal and not self.temporal_attrs:
            raise ConfigError("temporal module enabled but temporal_attrs is empty")
        if self.aggregate not in ("mean", "sum"):
            raise ConfigError(f"aggregate must be 'mean' or 'sum', got {self.aggregate!r}")
        if self.use_temporal:
            grid = math.isqrt(self.patches)
            if grid * grid != self.patches:
                raise ConfigError(f"temporal module requires square patch grid, got P={self.patches}")
            conv_output_extent(self.frames, self.kernel_size, self.conv_padding, self.conv_stride)

    @property
    def width(self) -> int:
        return self.heads * self.head_dim

    @property
    def t_prime(self) -> int:
        return conv_output_extent(self.frames, self.kernel_size, self.conv_padding, self.conv_stride)

    @property
    def temporal_channels(self) -> int:
        return len(self.temporal_attrs) * self.heads

    @classmethod
    def from_encoder(cls, enc: EncoderConfig, **kwargs) -> "DetectorConfig":
        return cls(layers=enc.layers, heads=enc.heads, head_dim=enc.head_dim, patches=enc.patches, **kwargs)


@dataclass
class DetectorParams:
    """All trainable tensors, addressable by checkpoint entry name."""

    config: DetectorConfig
    queries: list = field(default_factory=list)  # per layer (N, width)
    temporal: list = field(default_factory=list)  # per layer (or single shared) TemporalLayerParams
    head: dict = field(default_factory=dict)

    def temporal_for_layer(self, layer: int) -> TemporalLayerParams:
        return self.temporal[0] if self.config.share_temporal_weights else self.temporal[layer]

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for l, q in enumerate(self.queries):
            out[f"spatial/layer{l}/queries"] = q
        for i, tp in enumerate(self.temporal):
            prefix = "temporal/shared" if self.config.share_temporal_weights else f"temporal/layer{i}"
            out[f"{prefix}/C1"] = tp.conv1_kernel
            out[f"{prefix}/C1_bias"] = tp.conv1_bias
            out[f"{prefix}/W"] = tp.mix_weight
            out[f"{prefix}/W_bias"] = tp.mix_bias
            out[f"{prefix}/C2"] = tp.conv2_kernel
            out[f"{prefix}/C2_bias"] = tp.conv2_bias
        for name, t in self.head.items():
            out[f"head/{name}"] = t
        return out

    def parameter_count(self) -> int:
        return sum(int(t.size) for t in self.named_parameters().values())


def init_detector_params(config: DetectorConfig, seed: int,
                         prototypes: np.ndarray | None = None) -> DetectorParams:
    """Build all trainable tensors with a deterministic seeded layout.

    With FCG guidance and mined prototypes available, queries warm-start
    at prototype + small noise; otherwise random unit rows.
    """
    params = DetectorParams(config=config)
    width, patches = config.width, config.patches
    if config.use_spatial:
        if config.use_fcg and prototypes is not None:
            if prototypes.shape[1] != config.n_queries:
                raise ConfigError(
                    f"FCG binds query index to part order: n_queries {config.n_queries} != {prototypes.shape[1]} parts"
                )
            arrays = init_queries(config.layers, config.n_queries, width, seed, prototypes=prototypes)
        else:
            arrays = init_queries(config.layers, config.n_queries, width, seed)
        params.queries = [Tensor(a, requires_grad=True, name=f"spatial/layer{l}/queries")
                          for l, a in enumerate(arrays)]
    if config.use_temporal:
        sets = 1 if config.share_temporal_weights else config.layers
        params.temporal = [
            init_temporal_params(config.temporal_channels, config.t_prime, config.kernel_size,
                                 seed, tag=f"temporal{i}")
            for i in range(sets)
        ]
    rng = make_rng(seed, "head")

    def fc(n_in: int):
        limit = 1.0 / math.sqrt(n_in)
        return rng.uniform(-limit, limit, size=(n_in,)).astype(np.float32)

    head: dict[str, Tensor] = {}
    if config.use_temporal:
        head["ln_t/gain"] = Tensor(np.ones(patches, dtype=np.float32), requires_grad=True)
        head["ln_t/bias"] = Tensor(np.zeros(patches, dtype=np.float32), requires_grad=True)
        head["fc_t/weight"] = Tensor(fc(patches), requires_grad=True)
        head["fc_t/bias"] = Tensor(np.zeros((), dtype=np.float32), requires_grad=True)
    if config.use_spatial:
        head["ln_s/gain"] = Tensor(np.ones(width, dtype=np.float32), requires_grad=True)
        head["ln_s/bias"] = Tensor(np.zeros(width, dtype=np.float32), requires_grad=True)
        head["fc_s/weight"] = Tensor(fc(width), requires_grad=True)
        head["fc_s/bias"] = Tensor(np.zeros((), dtype=np.float32), requires_grad=True)
    if config.use_spatial and config.use_temporal:
        head["fc_st/weight"] = Tensor(fc(patches + width), requires_grad=True)
        head["fc_st/bias"] = Tensor(np.zeros((), dtype=np.float32), requires_grad=True)
    for name, t in head.items():
        t.name = f"head/{name}"
    params.head = head
    return params


def aggregate(embeddings: list[Tensor], mode: str = "mean") -> Tensor:
    """Combine per-layer embeddings into one vector."""
    if not embeddings:
        raise ConfigError("aggregate requires at least one layer embedding")
    shape = embeddings[0].shape
    for i, e in enumerate(embeddings[1:], start=1):
        if e.shape != shape:
            raise ShapeError(f"layer embedding {i} has shape {tuple(e.shape)}, expected {tuple(shape)}")
    acc = embeddings[0]
    for e in embeddings[1:]:
        acc = F.add(acc, e)
    if mode == "mean":
        acc = F.mul(acc, 1.0 / len(embeddings))
    return acc


@dataclass
class DetectorOutput:
    logit_t: Tensor | None
    logit_s: Tensor | None
    logit_st: Tensor | None
    score: Tensor

    def logits(self) -> dict[str, Tensor]:
        out = {}
        if self.logit_t is not None:
            out["t"] = self.logit_t
        if self.logit_s is not None:
            out["s"] = self.logit_s
        if self.logit_st is not None:
            out["st"] = self.logit_st
        return out


def _fc(vec: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return F.add(F.sum(F.mul(vec, weight)), bias)


def detector_forward(params: DetectorParams, taps_list) -> DetectorOutput:
    """Score one clip from its per-layer encoder taps."""
    cfg = params.config
    if len(taps_list) != cfg.layers:
        raise ShapeError(f"got taps for {len(taps_list)} layers, config expects {cfg.layers}")
    logit_t = logit_s = logit_st = None
    ln_t_out = ln_s_out = None

    if cfg.use_spatial:
        e_s = [spatial_forward(params.queries[l], taps_list[l], cfg.spatial_attr) for l in range(cfg.layers)]
        ln_s_out = F.layer_norm(aggregate(e_s, cfg.aggregate), params.head["ln_s/gain"], params.head["ln_s/bias"])
        logit_s = _fc(ln_s_out, params.head["fc_s/weight"], params.head["fc_s/bias"])
    if cfg.use_temporal:
        e_t = [
            temporal_forward(
                temporal_affinity(taps_list[l], cfg.temporal_attrs),
                params.temporal_for_layer(l),
                cfg.conv_padding,
                cfg.conv_stride,
            )
            for l in range(cfg.layers)
        ]
        ln_t_out = F.layer_norm(aggregate(e_t, cfg.aggregate), params.head["ln_t/gain"], params.head["ln_t/bias"])
        logit_t = _fc(ln_t_out, params.head["fc_t/weight"], params.head["fc_t/bias"])
    if cfg.use_spatial and cfg.use_temporal:
        joint = F.concat([ln_t_out, ln_s_out], axis=0)
        logit_st = _fc(joint, params.head["fc_st/weight"], params.head["fc_st/bias"])

    probs = [F.sigmoid(z) for z in (logit_t, logit_s, logit_st) if z is not None]
    score = probs[0]
    for p in probs[1:]:
        score = F.add(score, p)
    score = F.mul(score, 1.0 / len(probs))
    return DetectorOutput(logit_t=logit_t, logit_s=logit_s, logit_st=logit_st, score=score)


def focal_loss(logit: Tensor, y: int, gamma: float = 4.0) -> Tensor:
    """-(1 - p_t)^gamma * log(p_t) with log-sigmoid stabilization."""
    if y not in (0, 1):
        raise ConfigError(f"label must be 0 or 1, got {y!r}")
    if y == 1:
        logp = F.log_sigmoid(logit)
        miss = F.sigmoid(F.neg(logit))
    else:
        logp = F.log_sigmoid(F.neg(logit))
        miss = F.sigmoid(logit)
    if gamma == 0:
        return F.neg(logp)
    return F.neg(F.mul(F.power(miss, gamma), logp))


def clip_loss(output: DetectorOutput, y: int, gamma: float = 4.0) -> Tensor:
    """Sum of the enabled heads' focal terms for one clip."""
    total = None
    for z in output.logits().values():
        term = focal_loss(z, y, gamma)
        total = term if total is None else F.add(total, term)
    return total


def total_loss(outputs, labels, fcg_term: Tensor | None = None, w_fcg: float = 0.15,
               gamma: float = 4.0) -> Tensor:
    """Batch objective: mean per-clip focal sum plus the weighted FCG term."""
    if w_fcg < 0:
        raise ConfigError(f"w_fcg must be >= 0, got {w_fcg}")
    acc = None
    for out, y in zip(outputs, labels):
        term = clip_loss(out, y, gamma)
        acc = term if acc is None else F.add(acc, term)
    loss = F.mul(acc, 1.0 / len(outputs))
    if fcg_term is not None and w_fcg > 0:
        loss = F.add(loss, F.mul(fcg_term, w_fcg))
    return loss


# ---------------------------------------------------------------------------
# parameter accounting

def analytic_param_count(config: DetectorConfig) -> int:
    """Closed-form trainable parameter total; must equal enumeration."""
    total = 0
    if config.use_spatial:
        total += config.layers * config.n_queries * config.width
    if config.use_temporal:
        k = config.kernel_size
        flat = config.t_prime * config.t_prime
        per_set = (config.temporal_channels * k * k + 1) + (flat * flat + flat) + (flat * k * k + 1)
        total += per_set * (1 if config.share_temporal_weights else config.layers)
    if config.use_temporal:
        total += 2 * config.patches + config.patches + 1  # ln_t + fc_t
    if config.use_spatial:
        total += 2 * config.width + config.width + 1  # ln_s + fc_s
    if config.use_spatial and config.use_temporal:
        total += config.patches + config.width + 1  # fc_st
    return total


def parameter_report(config: DetectorConfig) -> dict:
    groups: dict[str, int] = {}
    if config.use_spatial:
        groups["spatial queries"] = config.layers * config.n_queries * config.width
    if config.use_temporal:
        k = config.kernel_size
        flat = config.t_prime * config.t_prime
        sets = 1 if config.share_temporal_weights else config.layers
        groups["temporal C1"] = (config.temporal_channels * k * k + 1) * sets
        groups["temporal W"] = (flat * flat + flat) * sets
        groups["temporal C2"] = (flat * k * k + 1) * sets
    heads = 0
    if config.use_temporal:
        heads += 3 * config.patches + 1
    if config.use_spatial:
        heads += 3 * config.width + 1
    if config.use_spatial and config.use_temporal:
        heads += config.patches + config.width + 1
    groups["norms and heads"] = heads
    total = sum(groups.values())
    return {
        "groups": groups,
        "total": total,
        "reference_budget": REFERENCE_BUDGET,
        "ratio_to_reference": total / REFERENCE_BUDGET,
        "temporal_weights": "shared" if config.share_temporal_weights else "per-layer",
    }
