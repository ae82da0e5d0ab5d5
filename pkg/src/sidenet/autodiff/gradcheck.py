"""Central-finite-difference gradient oracle.

The oracle only ever calls the forward path on constant tensors, so it is
independent of the backward implementation it verifies. The finite
difference always runs in float64; the analytic side runs at the dtype
under test (float32 compares against the float64 oracle).
"""

from __future__ import annotations

import numpy as np

from .tensor import Graph, Tensor, precision


def numeric_gradient(f, arrays: list[np.ndarray], h: float = 1e-4,
                     entries: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """Central differences of scalar f w.r.t. each float64 array.

    entries optionally restricts the check to flat index subsets (one
    index array per input); unchecked slots stay NaN so callers can mask.
    """
    arrays = [a.astype(np.float64) for a in arrays]
    grads = []
    for ai, a in enumerate(arrays):
        if entries is None:
            idx = np.arange(a.size)
            ga = np.zeros(a.size, dtype=np.float64)
        else:
            idx = np.asarray(entries[ai], dtype=np.int64)
            ga = np.full(a.size, np.nan, dtype=np.float64)
        flat = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            ga[i] = (fp - fm) / (2.0 * h)
        grads.append(ga.reshape(a.shape))
    return grads


def gradcheck(build, arrays: list[np.ndarray], *, h: float = 1e-4,
              dtype=np.float64, sample: int | None = None, seed: int = 0) -> float:
    """Max normalized gradient error of `build` w.r.t. each input.

    build maps a list of Tensors to a scalar Tensor. Returns
    max |analytic - numeric| / max(|numeric|, |analytic|, 1e-6) over all
    checked entries. `sample` caps the number of entries checked per
    input (for large parameter tensors).
    """
    arrays64 = [np.asarray(a, dtype=np.float64) for a in arrays]

    entries = None
    if sample is not None:
        rng = np.random.Generator(np.random.Philox(key=seed))
        entries = []
        for a in arrays64:
            if a.size <= sample:
                entries.append(np.arange(a.size))
            else:
                entries.append(np.sort(rng.choice(a.size, size=sample, replace=False)))

    with precision(dtype):
        tensors = [Tensor(a.astype(dtype), requires_grad=True) for a in arrays64]
        with Graph() as g:
            loss = build(tensors)
            g.backward(loss)
        analytic = [
            t.grad.astype(np.float64) if t.grad is not None else np.zeros_like(a)
            for t, a in zip(tensors, arrays64)
        ]

    def feval(vals):
        consts = [Tensor(v) for v in vals]
        return float(build(consts).item())

    numeric = numeric_gradient(feval, arrays64, h=h, entries=entries)

    # normalize by the loss's overall gradient magnitude so inputs whose
    # true gradient happens to vanish are not amplified into false alarms
    scale = 1e-6
    for ga, gn in zip(analytic, numeric):
        mask = ~np.isnan(gn)
        if mask.any():
            scale = max(scale, float(np.abs(gn[mask]).max()), float(np.abs(ga[mask]).max()))
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        mask = ~np.isnan(gn)
        if mask.any():
            worst = max(worst, float(np.abs(ga[mask] - gn[mask]).max()) / scale)
    return worst
