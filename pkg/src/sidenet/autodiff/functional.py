"""Differentiable operations over Tensors.

Every op computes its value with numpy, then registers per-parent
gradient closures via record_result. Closures receive the upstream
gradient (same shape as the op output) and return the parent gradient
(same shape as the parent). Broadcasting in elementwise ops is undone by
summing over the broadcast axes.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..errors import ConfigError, DegenerateVectorError, ShapeError
from .tensor import Tensor, record_result

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt",
    "sigmoid", "log_sigmoid", "gelu", "matmul", "reshape", "permute",
    "concat", "sum", "mean", "softmax", "log_softmax", "layer_norm",
    "conv2d", "scaled_dot_attention", "cosine_similarity", "l2_normalize",
]


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    b = _as_tensor(b)
    return _as_tensor(a, like=b), b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _pair(a, b)
    out = a.data + b.data
    return record_result(
        "add", out, (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _pair(a, b)
    out = a.data - b.data
    return record_result(
        "sub", out, (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _pair(a, b)
    out = a.data * b.data
    return record_result(
        "mul", out, (a, b),
        (lambda g: _unbroadcast(g * b.data, a.shape), lambda g: _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = _pair(a, b)
    with np.errstate(all="ignore"):
        out = a.data / b.data
    return record_result(
        "div", out, (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a):
    a = _as_tensor(a)
    return record_result("neg", -a.data, (a,), (lambda g: -g,))


def power(a, exponent: float):
    a = _as_tensor(a)
    c = float(exponent)
    with np.errstate(all="ignore"):
        out = a.data ** c
    return record_result(
        "power", out, (a,),
        (lambda g: g * c * a.data ** (c - 1.0) if c != 0.0 else np.zeros_like(a.data),),
    )


def exp(a):
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.exp(a.data)
    return record_result("exp", out, (a,), (lambda g: g * out,))


def log(a):
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return record_result("log", out, (a,), (lambda g: g / a.data,))


def sqrt(a):
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.sqrt(a.data)
    return record_result("sqrt", out, (a,), (lambda g: g * 0.5 / out,))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype, copy=False)
    return record_result("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def log_sigmoid(a):
    """Numerically stable log(sigmoid(x)) = -softplus(-x)."""
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    out = out.astype(x.dtype, copy=False)
    return record_result("log_sigmoid", out, (a,), (lambda g: g * (1.0 - _np_sigmoid(x)),))


def _np_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Gaussian error linear unit, tanh form."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def grad(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    return record_result("gelu", out.astype(x.dtype, copy=False), (a,), (grad,))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {tuple(a.shape)} x {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {tuple(a.shape)} x {tuple(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions not broadcastable: {tuple(a.shape)} x {tuple(b.shape)}")
    out = a.data @ b.data

    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)

    def grad_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return record_result("matmul", out, (a, b), (grad_a, grad_b))


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    out = a.data.reshape(shape)
    orig = a.shape
    return record_result("reshape", out, (a,), (lambda g: g.reshape(orig),))


def permute(a, axes):
    a = _as_tensor(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for shape {tuple(a.shape)}")
    out = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))
    return record_result("permute", np.ascontiguousarray(out), (a,), (lambda g: np.transpose(g, inverse),))


def concat(parts, axis: int = 0):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ConfigError("concat requires at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_grad(i):
        def grad(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            return np.ascontiguousarray(g[tuple(sl)])

        return grad

    return record_result("concat", out, tuple(parts), tuple(make_grad(i) for i in range(len(parts))))


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, a.shape).copy()

    return record_result("sum", np.asarray(out), (a,), (grad,))


def mean(a, axis=None, keepdims: bool = False):
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count).astype(a.data.dtype, copy=False)

    return record_result("mean", np.asarray(out), (a,), (grad,))


# ---------------------------------------------------------------------------
# normalization and attention

def softmax(a, axis: int = -1):
    """Softmax with per-slice max subtraction for overflow stability."""
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return record_result("softmax", out, (a,), (grad,))


def log_softmax(a, axis: int = -1):
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def grad(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True)

    return record_result("log_softmax", out, (a,), (grad,))


def layer_norm(a, gain, bias, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a = _as_tensor(a)
    gain = _as_tensor(gain, like=a)
    bias = _as_tensor(bias, like=a)
    n = a.shape[-1] if a.ndim else 0
    if n == 0:
        raise ShapeError(f"layer_norm over zero-length axis, input shape {tuple(a.shape)}")
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({n},), got {tuple(gain.shape)} / {tuple(bias.shape)}"
        )
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def grad_x(g):
        gd = g * gain.data
        return inv * (gd - gd.mean(axis=-1, keepdims=True) - xhat * (gd * xhat).mean(axis=-1, keepdims=True))

    def grad_gain(g):
        gg = g * xhat
        return gg.reshape(-1, n).sum(axis=0)

    def grad_bias(g):
        return g.reshape(-1, n).sum(axis=0)

    return record_result("layer_norm", out.astype(x.dtype, copy=False), (a, gain, bias), (grad_x, grad_gain, grad_bias))


def conv2d(x, kernel, bias=None, padding: int = 0, stride: int = 1):
    """2D cross-correlation with zero padding and per-channel bias.

    Accepts (C,H,W) or (B,C,H,W) input; kernel is (O,C,k,k) with odd k.
    """
    x = _as_tensor(x)
    kernel = _as_tensor(kernel, like=x)
    squeeze = x.ndim == 3
    if squeeze:
        x4 = x.data[None]
    elif x.ndim == 4:
        x4 = x.data
    else:
        raise ShapeError(f"conv2d input must be 3-d or 4-d, got {tuple(x.shape)}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-d (out,in,k,k), got {tuple(kernel.shape)}")
    ko, kc, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ConfigError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if kc != x4.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x4.shape[1]} vs kernel {kc}")
    h, w = x4.shape[2], x4.shape[3]
    if (h + 2 * padding - kh) % stride or (w + 2 * padding - kw) % stride:
        raise ConfigError(
            f"conv2d output extent not integral for input {h}x{w}, kernel {kh}, padding {padding}, stride {stride}"
        )
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ConfigError(f"conv2d kernel {kh} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    b_t = _as_tensor(bias, like=x) if bias is not None else None
    if b_t is not None and b_t.shape != (ko,):
        raise ShapeError(f"conv2d bias must have shape ({ko},), got {tuple(b_t.shape)}")
    out = kernels.conv2d_forward(x4, kernel.data, b_t.data if b_t is not None else None, padding, stride)

    x_shape = x4.shape

    def grad_x(g):
        g4 = g[None] if squeeze else g
        dx = kernels.conv2d_grad_input(g4, kernel.data, x_shape, padding, stride)
        return dx[0] if squeeze else dx

    def grad_k(g):
        g4 = g[None] if squeeze else g
        return kernels.conv2d_grad_kernel(g4, x4, kh, padding, stride)

    def grad_b(g):
        g4 = g[None] if squeeze else g
        return g4.sum(axis=(0, 2, 3))

    parents = (x, kernel) if b_t is None else (x, kernel, b_t)
    fns = (grad_x, grad_k) if b_t is None else (grad_x, grad_k, grad_b)
    return record_result("conv2d", out[0] if squeeze else out, parents, fns)


def scaled_dot_attention(q, k, v):
    """softmax(q k^T / sqrt(D)) v over the trailing two axes."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention head dims disagree: q {tuple(q.shape)} vs k {tuple(k.shape)}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention key/value counts disagree: k {tuple(k.shape)} vs v {tuple(v.shape)}")
    d = q.shape[-1]
    kt = permute(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = mul(matmul(q, kt), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def cosine_similarity(a, b):
    """cos(a, b) for 1-d vectors; errors on near-zero norms."""
    a, b = _pair(a, b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity requires equal-length vectors, got {tuple(a.shape)} / {tuple(b.shape)}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateVectorError(f"cosine_similarity on near-zero vector (norms {na:.3g}, {nb:.3g})")
    dot = sum(mul(a, b))
    return div(dot, mul(sqrt(sum(mul(a, a))), sqrt(sum(mul(b, b)))))


def l2_normalize(a, axis: int = -1):
    """Rows scaled to unit L2 norm; errors if any slice norm is near zero."""
    a = _as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if float(norms.min()) < 1e-12:
        raise DegenerateVectorError("l2_normalize on a near-zero slice")
    return div(a, sqrt(sum(mul(a, a), axis=axis, keepdims=True)))
