"""Dense tensors with reverse-mode automatic differentiation.

A Graph is an append-only tape: operations register their result after
their parents, so the node list is already topologically ordered and the
backward pass is a single reverse sweep. Working precision is float32; a
float64 mode (see `precision`) exists for gradient-check oracles.

Tensors with requires_grad=False are plain values: operations on them run
eagerly and record nothing, which is how the frozen encoder executes.
Operations on gradient-tracked tensors must happen inside an active
`Graph` context (or under `no_grad()` for inference).
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ConfigError, NumericalError

_DTYPE_STACK = [np.float32]
_GRAPH_STACK: list["Graph"] = []
_GRAD_MODE = [True]
_FINITE_CHECKS = [True]


def default_dtype():
    return _DTYPE_STACK[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float32 or float64)."""
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ConfigError(f"unsupported precision {dtype!r}; use float32 or float64")
    _DTYPE_STACK.append(dt)
    try:
        yield
    finally:
        _DTYPE_STACK.pop()


@contextlib.contextmanager
def no_grad():
    """Disable recording; results of all operations become constants."""
    _GRAD_MODE.append(False)
    try:
        yield
    finally:
        _GRAD_MODE.pop()


@contextlib.contextmanager
def finite_checks(enabled: bool):
    _FINITE_CHECKS.append(bool(enabled))
    try:
        yield
    finally:
        _FINITE_CHECKS.pop()


def active_graph():
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Tensor:
    """N-dimensional float32/float64 value, optionally gradient-tracked."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_grad_fns", "_graph", "_index")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns = None
        self._graph: Graph | None = None
        self._index = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def assert_finite(self, what: str = "tensor"):
        if not np.isfinite(self.data).all():
            raise NumericalError(f"non-finite values in {what}" + (f" ({self.name})" if self.name else ""))
        return self

    def __repr__(self):
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{tag})"

    # arithmetic operators delegate to functional (imported at module end)
    def __add__(self, other):
        return _F.add(self, other)

    def __radd__(self, other):
        return _F.add(other, self)

    def __sub__(self, other):
        return _F.sub(self, other)

    def __rsub__(self, other):
        return _F.sub(other, self)

    def __mul__(self, other):
        return _F.mul(self, other)

    def __rmul__(self, other):
        return _F.mul(other, self)

    def __truediv__(self, other):
        return _F.div(self, other)

    def __rtruediv__(self, other):
        return _F.div(other, self)

    def __neg__(self):
        return _F.neg(self)

    def __pow__(self, exponent):
        return _F.power(self, exponent)

    def __matmul__(self, other):
        return _F.matmul(self, other)

    def reshape(self, *shape):
        return _F.reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def permute(self, *axes):
        return _F.permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims=False):
        return _F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _F.mean(self, axis=axis, keepdims=keepdims)


def _scalar_error(t: Tensor):
    raise ConfigError(f"item() requires a scalar tensor, got shape {tuple(t.shape)}")


def parameter(data, name: str | None = None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


class Graph:
    """Append-only operation tape; single owner during build and backward."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise ConfigError("graph context stack corrupted")
        return False

    def _register(self, t: Tensor):
        t._graph = self
        t._index = len(self.nodes)
        self.nodes.append(t)

    def backward(self, loss: Tensor):
        """Reverse accumulation from a scalar loss.

        Populates `.grad` on every gradient-tracked node of this graph;
        nodes off the loss path receive zeros of their own shape.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = tuple(loss.shape) if isinstance(loss, Tensor) else type(loss).__name__
            raise ConfigError(f"backward requires a scalar loss, got {shape}")
        if loss._graph is not self:
            raise ConfigError("loss tensor does not belong to this graph")
        if not np.isfinite(loss.data).all():
            raise NumericalError("loss is not finite")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss._index] = np.ones_like(loss.data)
        for t in reversed(self.nodes):
            g = grads[t._index]
            if g is None or t._grad_fns is None:
                continue
            for p, fn in zip(t._parents, t._grad_fns):
                if fn is None or not p.requires_grad or p._graph is not self:
                    continue
                pg = fn(g)
                slot = grads[p._index]
                # accumulation is out-of-place: vjps may return views or the
                # upstream buffer itself, which other closures still read
                grads[p._index] = pg if slot is None else slot + pg
        for t in self.nodes:
            if t.requires_grad:
                g = grads[t._index]
                t.grad = g if g is not None else np.zeros_like(t.data)


def record_result(op: str, data: np.ndarray, parents: tuple[Tensor, ...], grad_fns) -> Tensor:
    """Wrap an op result, registering it on the active graph when needed."""
    if _FINITE_CHECKS[-1] and not np.isfinite(data).all():
        raise NumericalError(f"non-finite result from operation '{op}'")
    if not _GRAD_MODE[-1] or not any(p.requires_grad for p in parents):
        return Tensor(data)
    g = active_graph()
    if g is None:
        raise ConfigError(
            f"operation '{op}' on gradient-tracked tensors requires an active Graph (or no_grad())"
        )
    out = Tensor(data, requires_grad=True)
    for p in parents:
        if p.requires_grad and p._graph is not g:
            g._register(p)
    g._register(out)
    out._parents = tuple(parents)
    out._grad_fns = tuple(grad_fns)
    return out


def backward(graph: Graph, loss: Tensor):
    """Functional alias for Graph.backward."""
    graph.backward(loss)


from . import functional as _F  # noqa: E402  (resolves operator methods)
