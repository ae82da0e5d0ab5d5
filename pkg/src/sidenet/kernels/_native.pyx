# Compiled kernel core: direct-loop 2D convolution (forward and both
# gradients) and the archive checksum. Loops are written against fused
# float32/float64 memoryviews so the 64-bit gradient-check mode uses the
# same code path as training precision.

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double

cnp.import_array()


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   real[::1] bias, int padding, int stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t HO = (H + 2 * padding - K) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * padding - K) // stride + 1
    out_arr = np.zeros((B, O, HO, WO), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, i, j, u, v, hi, wj
    cdef real acc
    with nogil:
        for b in range(B):
            for o in range(O):
                for i in range(HO):
                    for j in range(WO):
                        acc = bias[o]
                        for c in range(C):
                            for u in range(K):
                                hi = i * stride + u - padding
                                if hi < 0 or hi >= H:
                                    continue
                                for v in range(K):
                                    wj = j * stride + v - padding
                                    if wj < 0 or wj >= W:
                                        continue
                                    acc = acc + x[b, c, hi, wj] * w[o, c, u, v]
                        out[b, o, i, j] = acc
    return out_arr


def conv2d_grad_input(real[:, :, :, ::1] dy, real[:, :, :, ::1] w,
                      Py_ssize_t B, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
                      int padding, int stride):
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t HO = dy.shape[2], WO = dy.shape[3]
    dx_arr = np.zeros((B, C, H, W), dtype=np.asarray(dy).dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, o, c, i, j, u, v, hi, wj
    cdef real g
    with nogil:
        for b in range(B):
            for o in range(O):
                for i in range(HO):
                    for j in range(WO):
                        g = dy[b, o, i, j]
                        for c in range(C):
                            for u in range(K):
                                hi = i * stride + u - padding
                                if hi < 0 or hi >= H:
                                    continue
                                for v in range(K):
                                    wj = j * stride + v - padding
                                    if wj < 0 or wj >= W:
                                        continue
                                    dx[b, c, hi, wj] += g * w[o, c, u, v]
    return dx_arr


def conv2d_grad_kernel(real[:, :, :, ::1] dy, real[:, :, :, ::1] x,
                       int k, int padding, int stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = dy.shape[1], HO = dy.shape[2], WO = dy.shape[3]
    dw_arr = np.zeros((O, C, k, k), dtype=np.asarray(dy).dtype)
    cdef real[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, o, c, i, j, u, v, hi, wj
    cdef real g
    with nogil:
        for b in range(B):
            for o in range(O):
                for i in range(HO):
                    for j in range(WO):
                        g = dy[b, o, i, j]
                        for c in range(C):
                            for u in range(k):
                                hi = i * stride + u - padding
                                if hi < 0 or hi >= H:
                                    continue
                                for v in range(k):
                                    wj = j * stride + v - padding
                                    if wj < 0 or wj >= W:
                                        continue
                                    dw[o, c, u, v] += g * x[b, c, hi, wj]
    return dw_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def fnv1a64(const unsigned char[::1] data):
    cdef unsigned long long h = 0xCBF29CE484222325ULL
    cdef unsigned long long prime = 0x100000001B3ULL
    cdef Py_ssize_t i, n = data.shape[0]
    with nogil:
        for i in range(n):
            h = (h ^ <unsigned long long> data[i]) * prime
    return h
