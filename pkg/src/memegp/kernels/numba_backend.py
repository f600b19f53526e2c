"""Numba-compiled kernels. Same contracts as ``numpy_backend``.

Accumulation order inside each output element matches the numpy backend's
small-kernel path (row-major over kernel positions), so results agree to
the last ulp there; the large-kernel paths may differ by rounding only.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def conv2d_valid(a, k):
    ah, aw = a.shape
    kh, kw = k.shape
    oh = ah - kh + 1
    ow = aw - kw + 1
    out = np.empty((oh, ow), dtype=np.float64)
    for r in range(oh):
        for c in range(ow):
            acc = 0.0
            for i in range(kh):
                for j in range(kw):
                    acc += a[r + i, c + j] * k[i, j]
            out[r, c] = acc
    return out


@nb.njit(cache=True)
def maxpool2x2(a):
    h2 = a.shape[0] // 2
    w2 = a.shape[1] // 2
    out = np.empty((h2, w2), dtype=np.float64)
    for r in range(h2):
        for c in range(w2):
            m = a[2 * r, 2 * c]
            if a[2 * r, 2 * c + 1] > m:
                m = a[2 * r, 2 * c + 1]
            if a[2 * r + 1, 2 * c] > m:
                m = a[2 * r + 1, 2 * c]
            if a[2 * r + 1, 2 * c + 1] > m:
                m = a[2 * r + 1, 2 * c + 1]
            out[r, c] = m
    return out


@nb.njit(cache=True)
def maxpool2x2_backward(a, grad_out):
    h2, w2 = grad_out.shape
    grad_in = np.zeros_like(a)
    for r in range(h2):
        for c in range(w2):
            bi = 0
            bj = 0
            m = a[2 * r, 2 * c]
            # strict > keeps the first row-major maximum on ties
            if a[2 * r, 2 * c + 1] > m:
                m = a[2 * r, 2 * c + 1]
                bi, bj = 0, 1
            if a[2 * r + 1, 2 * c] > m:
                m = a[2 * r + 1, 2 * c]
                bi, bj = 1, 0
            if a[2 * r + 1, 2 * c + 1] > m:
                bi, bj = 1, 1
            grad_in[2 * r + bi, 2 * c + bj] = grad_out[r, c]
    return grad_in
