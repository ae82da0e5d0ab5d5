"""Benchmark the compiled kernel core against the numpy fallback.

Run from the repo root after building the extension in place:

    python setup.py build_ext --inplace
    python benchmarks/bench_kernels.py

Shapes mirror the real workloads: C1 affinity convolution over all
patches of a clip, the C2 grid convolution, and the archive checksum.
"""

from __future__ import annotations

import time

import numpy as np

from sidenet import kernels
from sidenet.kernels import fallback


def _time(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(name, b, c, h, w, o, k, pad):
    rng = np.random.Generator(np.random.Philox(key=0))
    x = rng.normal(size=(b, c, h, w)).astype(np.float32)
    kern = rng.normal(size=(o, c, k, k)).astype(np.float32)
    bias = np.zeros(o, dtype=np.float32)
    rows = []
    for label, mod in (("native", kernels), ("fallback", fallback)):
        if label == "native" and not kernels.HAVE_NATIVE:
            rows.append((label, None, None, None))
            continue
        y = mod.conv2d_forward(x, kern, bias, pad, 1)
        dy = np.ones_like(y)
        t_fwd = _time(lambda: mod.conv2d_forward(x, kern, bias, pad, 1))
        t_dx = _time(lambda: mod.conv2d_grad_input(dy, kern, x.shape, pad, 1))
        t_dw = _time(lambda: mod.conv2d_grad_kernel(dy, x, k, pad, 1))
        rows.append((label, t_fwd, t_dx, t_dw))
    print(f"\nconv2d {name}: x={x.shape} kernel={kern.shape} pad={pad}")
    for label, t_fwd, t_dx, t_dw in rows:
        if t_fwd is None:
            print(f"  {label:9s} (extension not built)")
        else:
            print(f"  {label:9s} fwd {t_fwd * 1e3:8.2f} ms   dx {t_dx * 1e3:8.2f} ms   dw {t_dw * 1e3:8.2f} ms")


def bench_fnv(mbytes=8):
    rng = np.random.Generator(np.random.Philox(key=1))
    data = rng.integers(0, 256, size=mbytes * 1_000_000, dtype=np.uint8).tobytes()
    print(f"\nfnv1a64 over {mbytes} MB")
    if kernels.HAVE_NATIVE:
        t = _time(lambda: kernels.fnv1a64(data), repeats=3)
        print(f"  native    {t * 1e3:8.2f} ms  ({mbytes / t:.0f} MB/s)")
    t = _time(lambda: fallback.fnv1a64(data), repeats=1)
    print(f"  fallback  {t * 1e3:8.2f} ms  ({mbytes / t:.0f} MB/s)")


if __name__ == "__main__":
    print(f"active lane: {kernels.backend_name()}")
    # ViT-L scale temporal path: P=256 patches, 48 affinity channels, T=10
    bench_conv("C1 at ViT-L scale", 256, 48, 10, 10, 1, 5, 2)
    # C2 over the 16x16 patch grid with T'*T'=100 input channels
    bench_conv("C2 at ViT-L scale", 1, 100, 16, 16, 1, 5, 2)
    # Tiny profile C1 for reference
    bench_conv("C1 at Tiny scale", 16, 12, 10, 10, 1, 5, 2)
    bench_fnv()
