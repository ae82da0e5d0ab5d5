"""AdamW with decoupled weight decay."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError, ShapeError
from .tensor import Tensor


class AdamW:
    """Decoupled-weight-decay Adam over a name -> Tensor parameter dict.

    Decay is applied to the parameter itself (p *= 1 - lr*wd), never to
    the gradient; moments use the standard bias correction.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-3):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for checkpoint serialization."""
        out = {}
        for name in self.params:
            out[f"opt/{name}/m"] = self.m[name]
            out[f"opt/{name}/v"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int):
        for name, p in self.params.items():
            m = arrays[f"opt/{name}/m"]
            v = arrays[f"opt/{name}/v"]
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ShapeError(f"optimizer state shape mismatch for '{name}'")
            self.m[name] = m.astype(p.data.dtype).copy()
            self.v[name] = v.astype(p.data.dtype).copy()
        self.step_count = int(step_count)


def adamw_step(state: AdamW, grads: dict[str, np.ndarray] | None = None):
    """Apply one update; grads may override the tensors' .grad fields."""
    if grads is not None:
        for name, g in grads.items():
            state.params[name].grad = g
    state.step()
    return state.params


def scalar_adamw(value: float, grad_fn, steps: int, lr: float = 0.1,
                 betas=(0.9, 0.999), eps: float = 1e-8) -> float:
    """Tiny scalar driver used by convergence tests."""
    p = Tensor(np.asarray([value], dtype=np.float64), requires_grad=True, name="p")
    opt = AdamW({"p": p}, lr=lr, betas=betas, eps=eps, weight_decay=0.0)
    for _ in range(steps):
        p.grad = np.asarray([grad_fn(float(p.data[0]))], dtype=np.float64)
        opt.step()
    if math.isnan(float(p.data[0])):  # pragma: no cover - guarded by step()
        raise NumericalError("scalar_adamw diverged")
    return float(p.data[0])
