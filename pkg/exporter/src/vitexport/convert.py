"""Checkpoint conversion into the archive naming scheme.

Two source layouts are recognized automatically:

  * OpenAI CLIP state dicts ("visual.conv1.weight",
    "visual.transformer.resblocks.{i}.attn.in_proj_weight", ...), where
    the packed qkv projection is split into separate q/k/v tensors;
  * transformers CLIPVisionModel state dicts
    ("vision_model.encoder.layers.{i}.self_attn.q_proj.weight", ...).

Both use the quick-gelu activation and the CLIP normalization constants
unless the checkpoint says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)

TINY = {"layers": 4, "heads": 4, "head_dim": 16, "patch_size": 8, "image_size": 32}


@dataclass
class ExportReport:
    tensor_count: int
    total_bytes: int
    checksum: int
    layer_shapes: dict = field(default_factory=dict)
    mean: tuple = CLIP_MEAN
    std: tuple = CLIP_STD

    def render(self) -> str:
        lines = [
            f"tensors:  {self.tensor_count}",
            f"bytes:    {self.total_bytes:,}",
            f"checksum: {self.checksum:#018x}",
            f"mean/std: {tuple(round(float(v), 6) for v in self.mean)} / "
            f"{tuple(round(float(v), 6) for v in self.std)}",
        ]
        for layer, shapes in sorted(self.layer_shapes.items()):
            lines.append(f"  {layer}: " + ", ".join(f"{k}{list(v)}" for k, v in shapes.items()))
        return "\n".join(lines)


def _np(t) -> np.ndarray:
    return t.detach().cpu().float().numpy()


def _convert_openai(sd: dict) -> tuple[dict, dict]:
    width = sd["visual.class_embedding"].shape[0]
    out = {
        "patch_embed/weight": _np(sd["visual.conv1.weight"]),
        "class_token": _np(sd["visual.class_embedding"]),
        "pos_embed": _np(sd["visual.positional_embedding"]),
        "pre_norm/gain": _np(sd["visual.ln_pre.weight"]),
        "pre_norm/bias": _np(sd["visual.ln_pre.bias"]),
        "final_norm/gain": _np(sd["visual.ln_post.weight"]),
        "final_norm/bias": _np(sd["visual.ln_post.bias"]),
    }
    consumed = {"visual.conv1.weight", "visual.class_embedding", "visual.positional_embedding",
                "visual.ln_pre.weight", "visual.ln_pre.bias", "visual.ln_post.weight",
                "visual.ln_post.bias", "visual.proj"}
    i = 0
    while f"visual.transformer.resblocks.{i}.ln_1.weight" in sd:
        base = f"visual.transformer.resblocks.{i}"
        in_w = sd[f"{base}.attn.in_proj_weight"]
        in_b = sd[f"{base}.attn.in_proj_bias"]
        wq, wk, wv = in_w[:width], in_w[width : 2 * width], in_w[2 * width :]
        bq, bk, bv = in_b[:width], in_b[width : 2 * width], in_b[2 * width :]
        out.update({
            f"layer{i}/ln1/gain": _np(sd[f"{base}.ln_1.weight"]),
            f"layer{i}/ln1/bias": _np(sd[f"{base}.ln_1.bias"]),
            f"layer{i}/attn/wq": _np(wq), f"layer{i}/attn/bq": _np(bq),
            f"layer{i}/attn/wk": _np(wk), f"layer{i}/attn/bk": _np(bk),
            f"layer{i}/attn/wv": _np(wv), f"layer{i}/attn/bv": _np(bv),
            f"layer{i}/attn/wo": _np(sd[f"{base}.attn.out_proj.weight"]),
            f"layer{i}/attn/bo": _np(sd[f"{base}.attn.out_proj.bias"]),
            f"layer{i}/ln2/gain": _np(sd[f"{base}.ln_2.weight"]),
            f"layer{i}/ln2/bias": _np(sd[f"{base}.ln_2.bias"]),
            f"layer{i}/mlp/w1": _np(sd[f"{base}.mlp.c_fc.weight"]),
            f"layer{i}/mlp/b1": _np(sd[f"{base}.mlp.c_fc.bias"]),
            f"layer{i}/mlp/w2": _np(sd[f"{base}.mlp.c_proj.weight"]),
            f"layer{i}/mlp/b2": _np(sd[f"{base}.mlp.c_proj.bias"]),
        })
        consumed.update(k for k in sd if k.startswith(base + "."))
        i += 1
    heads_guess = width // 64 if width % 64 == 0 else None
    meta = {"kind": "vit-encoder", "heads": heads_guess, "activation": "quick_gelu",
            "mean": list(CLIP_MEAN), "std": list(CLIP_STD)}
    unconsumed = [k for k in sd if k.startswith("visual.") and k not in consumed]
    if unconsumed:
        raise ValueError(f"unconsumed visual tensors (unexpected architecture): {unconsumed[:8]}")
    return out, meta


def _convert_transformers(sd: dict, heads: int | None, activation: str) -> tuple[dict, dict]:
    pre = "vision_model." if any(k.startswith("vision_model.") for k in sd) else ""
    out = {
        "patch_embed/weight": _np(sd[pre + "embeddings.patch_embedding.weight"]),
        "class_token": _np(sd[pre + "embeddings.class_embedding"]).reshape(-1),
        "pos_embed": _np(sd[pre + "embeddings.position_embedding.weight"]),
        "final_norm/gain": _np(sd[pre + "post_layernorm.weight"]),
        "final_norm/bias": _np(sd[pre + "post_layernorm.bias"]),
    }
    # transformers spells it "pre_layrnorm"
    for candidate in ("pre_layrnorm", "pre_layernorm"):
        if pre + candidate + ".weight" in sd:
            out["pre_norm/gain"] = _np(sd[pre + candidate + ".weight"])
            out["pre_norm/bias"] = _np(sd[pre + candidate + ".bias"])
            break
    i = 0
    while f"{pre}encoder.layers.{i}.layer_norm1.weight" in sd:
        base = f"{pre}encoder.layers.{i}"
        out.update({
            f"layer{i}/ln1/gain": _np(sd[f"{base}.layer_norm1.weight"]),
            f"layer{i}/ln1/bias": _np(sd[f"{base}.layer_norm1.bias"]),
            f"layer{i}/attn/wq": _np(sd[f"{base}.self_attn.q_proj.weight"]),
            f"layer{i}/attn/bq": _np(sd[f"{base}.self_attn.q_proj.bias"]),
            f"layer{i}/attn/wk": _np(sd[f"{base}.self_attn.k_proj.weight"]),
            f"layer{i}/attn/bk": _np(sd[f"{base}.self_attn.k_proj.bias"]),
            f"layer{i}/attn/wv": _np(sd[f"{base}.self_attn.v_proj.weight"]),
            f"layer{i}/attn/bv": _np(sd[f"{base}.self_attn.v_proj.bias"]),
            f"layer{i}/attn/wo": _np(sd[f"{base}.self_attn.out_proj.weight"]),
            f"layer{i}/attn/bo": _np(sd[f"{base}.self_attn.out_proj.bias"]),
            f"layer{i}/ln2/gain": _np(sd[f"{base}.layer_norm2.weight"]),
            f"layer{i}/ln2/bias": _np(sd[f"{base}.layer_norm2.bias"]),
            f"layer{i}/mlp/w1": _np(sd[f"{base}.mlp.fc1.weight"]),
            f"layer{i}/mlp/b1": _np(sd[f"{base}.mlp.fc1.bias"]),
            f"layer{i}/mlp/w2": _np(sd[f"{base}.mlp.fc2.weight"]),
            f"layer{i}/mlp/b2": _np(sd[f"{base}.mlp.fc2.bias"]),
        })
        i += 1
    meta = {"kind": "vit-encoder", "heads": heads, "activation": activation,
            "mean": list(CLIP_MEAN), "std": list(CLIP_STD)}
    return out, meta


def convert_state_dict(sd: dict, heads: int | None = None,
                       activation: str = "quick_gelu") -> tuple[dict, dict]:
    """Map a recognized checkpoint layout onto archive tensor names."""
    if any(k.startswith("visual.conv1") for k in sd):
        tensors, meta = _convert_openai(sd)
    elif any("embeddings.patch_embedding.weight" in k for k in sd):
        tensors, meta = _convert_transformers(sd, heads, activation)
    else:
        raise ValueError("unrecognized checkpoint layout: expected OpenAI CLIP 'visual.*' "
                         "or transformers 'vision_model.*' keys")
    if heads is not None:
        meta["heads"] = int(heads)
    if meta.get("heads") in (None, 0):
        raise ValueError("head count could not be inferred; pass --heads explicitly")
    return tensors, meta


def synthesize_tiny(seed: int = 0) -> tuple[dict, dict]:
    """Seeded random weights at the desk-scale test profile."""
    g = torch.Generator().manual_seed(int(seed))
    cfg = TINY
    width = cfg["heads"] * cfg["head_dim"]
    hidden = 4 * width
    ps = cfg["patch_size"]
    patches = (cfg["image_size"] // ps) ** 2

    def randn(*shape, scale):
        return (scale * torch.randn(*shape, generator=g)).numpy().astype(np.float32)

    tensors = {
        "patch_embed/weight": randn(width, 3, ps, ps, scale=(3 * ps * ps) ** -0.5),
        "class_token": randn(width, scale=0.02),
        "pos_embed": randn(patches + 1, width, scale=0.1),
        "final_norm/gain": np.ones(width, dtype=np.float32),
        "final_norm/bias": np.zeros(width, dtype=np.float32),
    }
    for l in range(cfg["layers"]):
        tensors[f"layer{l}/ln1/gain"] = np.ones(width, dtype=np.float32)
        tensors[f"layer{l}/ln1/bias"] = np.zeros(width, dtype=np.float32)
        tensors[f"layer{l}/ln2/gain"] = np.ones(width, dtype=np.float32)
        tensors[f"layer{l}/ln2/bias"] = np.zeros(width, dtype=np.float32)
        for p in ("wq", "wk", "wv", "wo"):
            tensors[f"layer{l}/attn/{p}"] = randn(width, width, scale=width ** -0.5)
        for p in ("bq", "bk", "bv", "bo"):
            tensors[f"layer{l}/attn/{p}"] = np.zeros(width, dtype=np.float32)
        tensors[f"layer{l}/mlp/w1"] = randn(hidden, width, scale=width ** -0.5)
        tensors[f"layer{l}/mlp/b1"] = np.zeros(hidden, dtype=np.float32)
        tensors[f"layer{l}/mlp/w2"] = randn(width, hidden, scale=hidden ** -0.5)
        tensors[f"layer{l}/mlp/b2"] = np.zeros(width, dtype=np.float32)
    meta = {"kind": "vit-encoder", "heads": cfg["heads"], "activation": "quick_gelu",
            "mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5]}
    return tensors, meta


def build_report(tensors: dict, meta: dict, checksum: int) -> ExportReport:
    layer_shapes: dict = {}
    for name, arr in tensors.items():
        if name.startswith("layer"):
            layer, rest = name.split("/", 1)
            layer_shapes.setdefault(layer, {})[rest] = tuple(arr.shape)
    return ExportReport(
        tensor_count=len(tensors),
        total_bytes=sum(int(np.prod(a.shape)) * 4 if a.shape else 4 for a in tensors.values()),
        checksum=checksum,
        layer_shapes=layer_shapes,
        mean=tuple(meta.get("mean", CLIP_MEAN)),
        std=tuple(meta.get("std", CLIP_STD)),
    )
