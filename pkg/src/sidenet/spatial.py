"""Spatial decoder: learnable queries over patch attributes, facial part
attribute mining, and the facial component guidance (FCG) loss.

Cross-attention here uses no learned key/value/output projections: the
queries attend over raw encoder taps, so they live in the same feature
space as the mined part prototypes and can be compared by cosine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, functional as F
from .encoder import EncoderWeights, LayerTaps, encode_frames, image_patch_index, normalize_frames
from .errors import ConfigError, DegenerateVectorError, MiningError, ShapeError
from .imageops import resize_bilinear
from .rng import make_rng

PART_NAMES = ("lips", "skin", "eyes", "nose")

# 68-point landmark convention; "skin" covers the jawline and brows
LANDMARK_GROUPS = {
    "lips": tuple(range(48, 68)),
    "skin": tuple(range(0, 27)),
    "eyes": tuple(range(36, 48)),
    "nose": tuple(range(27, 36)),
}

DEFAULT_TAU = 10.0


def _head_split(arr: np.ndarray, heads: int) -> np.ndarray:
    """(T,P,width) -> (T,H,P,D) contiguous."""
    t, p, width = arr.shape
    return np.ascontiguousarray(arr.reshape(t, p, heads, width // heads).transpose(0, 2, 1, 3))


def spatial_attended(queries: Tensor, taps: LayerTaps, attr: str = "k") -> Tensor:
    """Multi-head cross-attention map of shape (T, N, H*D).

    queries: (N, H*D). Keys are the chosen attention attribute, values the
    patch embeddings; heads are re-concatenated after attention.
    """
    keys = taps.attr(attr)
    t, p, heads, dim = keys.shape
    n, width = queries.shape
    if width != heads * dim:
        raise ShapeError(f"queries width {width} != taps width {heads * dim}")
    q = F.reshape(queries, (n, heads, dim))
    q = F.reshape(F.permute(q, (1, 0, 2)), (1, heads, n, dim))
    k = Tensor(np.ascontiguousarray(keys.transpose(0, 2, 1, 3)))  # (T,H,P,D)
    v = Tensor(_head_split(taps.patches, heads))  # (T,H,P,D)
    attended = F.scaled_dot_attention(q, k, v)  # (T,H,N,D)
    return F.reshape(F.permute(attended, (0, 2, 1, 3)), (t, n, width))


def spatial_forward(queries: Tensor, taps: LayerTaps, attr: str = "k") -> Tensor:
    """Layer embedding of length H*D: the attended map averaged over the
    frame and query axes."""
    return F.mean(spatial_attended(queries, taps, attr), axis=(0, 1))


def attention_grids(queries: np.ndarray, taps: LayerTaps, attr: str = "k") -> np.ndarray:
    """Per-query attention maps (N,T,grid,grid), head-averaged.

    Forward-only companion of spatial_forward; rows over patches sum to 1
    before the grid reshape.
    """
    keys = taps.attr(attr)
    t, p, heads, dim = keys.shape
    n = queries.shape[0]
    grid = math.isqrt(p)
    if grid * grid != p:
        raise ConfigError(f"patch count {p} is not a perfect square")
    q = queries.reshape(n, heads, dim).transpose(1, 0, 2)  # (H,N,D)
    k = keys.transpose(0, 2, 1, 3)  # (T,H,P,D)
    scores = np.einsum("hnd,thpd->thnp", q, k) / math.sqrt(dim)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    weights = e / e.sum(axis=-1, keepdims=True)
    return weights.mean(axis=1).transpose(1, 0, 2).reshape(n, t, grid, grid)


def fcg_loss(queries_per_layer, prototypes: np.ndarray, tau: float = DEFAULT_TAU,
             sign: str = "neg") -> Tensor:
    """InfoNCE guidance between per-layer queries and part prototypes.

    prototypes: (L, N, H*D) frozen rows. For each layer and query i, the
    matched prototype i is the positive against the other parts, with
    temperature tau multiplying the cosines. sign="neg" gives the
    minimized negative-log form; sign="pos" keeps the raw log-softmax sum
    for inspection.
    """
    if tau <= 0:
        raise ConfigError(f"fcg temperature must be positive, got {tau}")
    if sign not in ("neg", "pos"):
        raise ConfigError(f"fcg_sign must be 'neg' or 'pos', got {sign!r}")
    layers = len(queries_per_layer)
    if prototypes.ndim != 3 or prototypes.shape[0] != layers:
        raise ShapeError(f"prototypes shape {prototypes.shape} does not cover {layers} layers")
    n_parts = prototypes.shape[1]
    norms = np.linalg.norm(prototypes, axis=-1, keepdims=True)
    if float(norms.min()) < 1e-12:
        raise DegenerateVectorError("fcg prototypes contain a near-zero row")
    protos = (prototypes / norms).astype(np.float32)

    eye = None
    total = None
    for l, q in enumerate(queries_per_layer):
        if q.shape[0] != n_parts:
            raise ConfigError(
                f"layer {l}: {q.shape[0]} queries but {n_parts} guided parts; they must match when FCG is on"
            )
        if eye is None:
            eye = Tensor(np.eye(n_parts, dtype=protos.dtype))
        qn = F.l2_normalize(q, axis=-1)
        sims = F.matmul(qn, Tensor(protos[l].T.copy()))
        logp = F.log_softmax(F.mul(sims, float(tau)), axis=-1)
        matched = F.sum(F.mul(logp, eye))
        total = matched if total is None else F.add(total, matched)
    avg = F.mul(total, 1.0 / (layers * n_parts))
    return F.neg(avg) if sign == "neg" else avg


def init_queries(layers: int, n_queries: int, width: int, seed: int,
                 prototypes: np.ndarray | None = None, noise_std: float = 0.02) -> list[np.ndarray]:
    """Per-layer query init: prototype warm start when guided, else random
    unit rows."""
    rng = make_rng(seed, "queries")
    out = []
    for l in range(layers):
        if prototypes is not None:
            base = prototypes[l][:n_queries].astype(np.float32)
            q = base + rng.normal(0.0, noise_std, size=base.shape).astype(np.float32)
        else:
            q = rng.normal(0.0, 1.0, size=(n_queries, width)).astype(np.float32)
            q /= np.linalg.norm(q, axis=-1, keepdims=True)
        out.append(q)
    return out


# ---------------------------------------------------------------------------
# facial part attribute mining

@dataclass
class MiningSample:
    frame: np.ndarray  # (3,S,S) uint8
    landmarks: np.ndarray  # (68,2) pixel x,y


def _augment_joint(frame: np.ndarray, landmarks: np.ndarray, rng, size: int):
    """Random flip + resized crop applied to pixels and landmarks together.

    Returns (float image in [0,1], transformed landmarks, visibility mask).
    """
    img = frame.astype(np.float32) / 255.0
    lms = landmarks.astype(np.float64).copy()
    if rng.random() < 0.5:
        img = img[:, :, ::-1]
        lms[:, 0] = size - 1 - lms[:, 0]
    if rng.random() < 0.5:
        img = img[:, ::-1, :]
        lms[:, 1] = size - 1 - lms[:, 1]
    frac = rng.uniform(0.7, 1.0)
    side = max(8, int(round(frac * size)))
    top = int(rng.integers(0, size - side + 1))
    left = int(rng.integers(0, size - side + 1))
    crop = np.ascontiguousarray(img[:, top : top + side, left : left + side])
    out = resize_bilinear(crop, size, size)
    scale = size / side
    lx = (lms[:, 0] - left) * scale
    ly = (lms[:, 1] - top) * scale
    visible = (lms[:, 0] >= left) & (lms[:, 0] < left + side) & (lms[:, 1] >= top) & (lms[:, 1] < top + side)
    visible &= (lx >= 0) & (lx < size) & (ly >= 0) & (ly < size)
    return out, np.stack([lx, ly], axis=1), visible


def mine_part_prototypes(samples, weights: EncoderWeights, attr: str = "k",
                         rounds: int = 32, seed: int = 0, augment: bool = True) -> np.ndarray:
    """Collect per-layer facial part prototypes from landmarked frames.

    Each round re-augments the frame and its landmarks jointly (random
    resize/crop/flips; disable via augment=False), encodes, and
    accumulates the L2-normalized tap rows under each part's landmark
    patches. Part means are re-normalized to unit length. Returns
    (layers, 4, H*D) float32.
    """
    if rounds < 1:
        raise ConfigError(f"mining rounds must be >= 1, got {rounds}")
    if not samples:
        raise MiningError("no mining samples provided")
    cfg = weights.config
    width = cfg.width
    sums = np.zeros((cfg.layers, len(PART_NAMES), width), dtype=np.float64)
    counts = np.zeros(len(PART_NAMES), dtype=np.int64)

    for si, sample in enumerate(samples):
        if sample.landmarks.shape != (68, 2):
            raise MiningError(f"sample {si}: landmarks must be (68,2), got {sample.landmarks.shape}")
        for r in range(rounds):
            if augment:
                rng = make_rng(seed, "mine", si, r)
                img, lms, visible = _augment_joint(sample.frame, sample.landmarks, rng, cfg.image_size)
            else:
                img = sample.frame.astype(np.float32) / 255.0
                lms = sample.landmarks.astype(np.float64)
                s = cfg.image_size
                visible = (lms[:, 0] >= 0) & (lms[:, 0] < s) & (lms[:, 1] >= 0) & (lms[:, 1] < s)
            taps = encode_frames(normalize_frames(img[None], weights), weights)
            rows = [taps[l].attr(attr)[0].reshape(cfg.patches, width) for l in range(cfg.layers)]
            for part_idx, part in enumerate(PART_NAMES):
                for lm in LANDMARK_GROUPS[part]:
                    if not visible[lm]:
                        continue
                    patch = image_patch_index(lms[lm, 0], lms[lm, 1], cfg)
                    hit = False
                    for l in range(cfg.layers):
                        row = rows[l][patch].astype(np.float64)
                        norm = np.linalg.norm(row)
                        if norm < 1e-12:
                            continue
                        sums[l, part_idx] += row / norm
                        hit = True
                    if hit:
                        counts[part_idx] += 1

    for part_idx, part in enumerate(PART_NAMES):
        if counts[part_idx] == 0:
            raise MiningError(
                f"part '{part}' collected no landmark patches in any round (layer 0); widen crops or check landmarks"
            )
    protos = sums / counts[None, :, None]
    norms = np.linalg.norm(protos, axis=-1, keepdims=True)
    if float(norms.min()) < 1e-12:
        raise MiningError("a mined part prototype collapsed to zero norm")
    return (protos / norms).astype(np.float32)


def prototypes_to_entries(protos: np.ndarray) -> dict[str, np.ndarray]:
    return {f"fcg/phi/layer{l}": protos[l] for l in range(protos.shape[0])}


def prototypes_from_archive(ar) -> np.ndarray:
    layers = 0
    while f"fcg/phi/layer{layers}" in ar:
        layers += 1
    if layers == 0:
        raise ConfigError("archive holds no fcg/phi/layer{l} entries")
    return np.stack([ar[f"fcg/phi/layer{l}"] for l in range(layers)], axis=0)


def mining_meta(seed: int, rounds: int, attr: str) -> dict:
    return {
        "kind": "fcg-prototypes",
        "seed": int(seed),
        "rounds": int(rounds),
        "gamma_s": attr,
        "part_order": list(PART_NAMES),
        "part_landmarks": {name: list(idx) for name, idx in LANDMARK_GROUPS.items()},
    }
