"""Reference pre-norm ViT forward with per-layer attribute taps.

This is the golden-path implementation the detector-side encoder is
parity-tested against. Per layer it records the post-projection
query/key/value attributes (before attention) and the layer's output
patch embeddings, class token excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class TapSet:
    q: np.ndarray  # (T, P, H, D)
    k: np.ndarray
    v: np.ndarray
    patches: np.ndarray  # (T, P, H*D)


class ReferenceViT:
    """Forward-only evaluator over an archive tensor dictionary."""

    def __init__(self, tensors: dict[str, np.ndarray], meta: dict):
        self.t = {k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in tensors.items()}
        self.heads = int(meta["heads"])
        self.activation = meta.get("activation", "quick_gelu")
        self.mean = np.asarray(meta.get("mean", [0.5] * 3), dtype=np.float32)
        self.std = np.asarray(meta.get("std", [0.5] * 3), dtype=np.float32)
        self.width = int(self.t["class_token"].shape[0])
        self.layers = 0
        while f"layer{self.layers}/ln1/gain" in self.t:
            self.layers += 1
        self.patch_size = int(self.t["patch_embed/weight"].shape[-1])
        tokens = int(self.t["pos_embed"].shape[0])
        self.grid = math.isqrt(tokens - 1)
        self.image_size = self.grid * self.patch_size

    def normalize(self, frames_u8: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(frames_u8.astype(np.float32) / 255.0)
        mean = torch.from_numpy(self.mean).view(1, 3, 1, 1)
        std = torch.from_numpy(self.std).view(1, 3, 1, 1)
        return (x - mean) / std

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        if self.activation == "quick_gelu":
            return x * torch.sigmoid(1.702 * x)
        # tanh-form gelu, matching the detector side exactly
        c = math.sqrt(2.0 / math.pi)
        return 0.5 * x * (1.0 + torch.tanh(c * (x + 0.044715 * x ** 3)))

    @torch.no_grad()
    def forward_taps(self, frames: torch.Tensor) -> list[TapSet]:
        t, _, s, _ = frames.shape
        ps, grid, width, heads = self.patch_size, self.grid, self.width, self.heads
        dim = width // heads
        patches = (
            frames.reshape(t, 3, grid, ps, grid, ps)
            .permute(0, 2, 4, 1, 3, 5)
            .reshape(t, grid * grid, 3 * ps * ps)
        )
        tokens = patches @ self.t["patch_embed/weight"].reshape(width, -1).T
        if "patch_embed/bias" in self.t:
            tokens = tokens + self.t["patch_embed/bias"]
        cls = self.t["class_token"].expand(t, 1, width)
        x = torch.cat([cls, tokens], dim=1) + self.t["pos_embed"]
        if "pre_norm/gain" in self.t:
            x = torch.nn.functional.layer_norm(x, (width,), self.t["pre_norm/gain"],
                                               self.t["pre_norm/bias"], eps=1e-5)
        n_tok = grid * grid + 1
        taps: list[TapSet] = []
        for l in range(self.layers):
            pre = torch.nn.functional.layer_norm(
                x, (width,), self.t[f"layer{l}/ln1/gain"], self.t[f"layer{l}/ln1/bias"], eps=1e-5)
            q = pre @ self.t[f"layer{l}/attn/wq"].T + self.t[f"layer{l}/attn/bq"]
            k = pre @ self.t[f"layer{l}/attn/wk"].T + self.t[f"layer{l}/attn/bk"]
            v = pre @ self.t[f"layer{l}/attn/wv"].T + self.t[f"layer{l}/attn/bv"]
            tap_q = q.reshape(t, n_tok, heads, dim)[:, 1:].numpy().copy()
            tap_k = k.reshape(t, n_tok, heads, dim)[:, 1:].numpy().copy()
            tap_v = v.reshape(t, n_tok, heads, dim)[:, 1:].numpy().copy()

            def split(z):
                return z.reshape(t, n_tok, heads, dim).permute(0, 2, 1, 3)

            scores = split(q) @ split(k).transpose(-1, -2) / math.sqrt(dim)
            attn = torch.softmax(scores, dim=-1)
            merged = (attn @ split(v)).permute(0, 2, 1, 3).reshape(t, n_tok, width)
            x = x + (merged @ self.t[f"layer{l}/attn/wo"].T + self.t[f"layer{l}/attn/bo"])
            mid = torch.nn.functional.layer_norm(
                x, (width,), self.t[f"layer{l}/ln2/gain"], self.t[f"layer{l}/ln2/bias"], eps=1e-5)
            hid = self._act(mid @ self.t[f"layer{l}/mlp/w1"].T + self.t[f"layer{l}/mlp/b1"])
            x = x + (hid @ self.t[f"layer{l}/mlp/w2"].T + self.t[f"layer{l}/mlp/b2"])
            taps.append(TapSet(q=tap_q, k=tap_k, v=tap_v, patches=x[:, 1:].numpy().copy()))
        return taps
