"""Pure-numpy implementations of the hot kernels.

This is both the fallback path (``MEMEGP_BACKEND=numpy``) and the reference
the numba backend is tested against.
"""

import numpy as np


def conv2d_valid(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid sliding-window correlation of ``a`` with kernel ``k``.

    out[r, c] = sum_{i, j} a[r + i, c + j] * k[i, j], with output shape
    (a.h - k.h + 1, a.w - k.w + 1). No padding, stride 1, no kernel flip.

    The same primitive covers the forward 3x3 case, the filter-gradient case
    (where ``k`` is an upstream gradient nearly as large as ``a``) and, with a
    pre-padded, pre-flipped kernel, the input-gradient case. It loops over
    whichever of kernel and output has fewer positions so the inner work
    stays vectorized in all three.
    """
    ah, aw = a.shape
    kh, kw = k.shape
    oh, ow = ah - kh + 1, aw - kw + 1
    out = np.zeros((oh, ow), dtype=np.float64)
    if kh * kw <= oh * ow:
        for i in range(kh):
            for j in range(kw):
                out += k[i, j] * a[i : i + oh, j : j + ow]
    else:
        for r in range(oh):
            for c in range(ow):
                out[r, c] = np.sum(a[r : r + kh, c : c + kw] * k)
    return out


def maxpool2x2(a: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2; a trailing odd row/column is dropped."""
    h2, w2 = a.shape[0] // 2, a.shape[1] // 2
    blocks = a[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    return blocks.max(axis=(1, 3))


def maxpool2x2_backward(a: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Route each upstream gradient to its block's max pixel.

    Ties go to the first maximum in row-major order within the 2x2 block.
    Pixels in a dropped trailing row/column receive zero gradient.
    """
    h2, w2 = grad_out.shape
    blocks = (
        a[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).transpose(0, 2, 1, 3).reshape(h2, w2, 4)
    )
    flat = blocks.argmax(axis=2)
    grad_in = np.zeros_like(a)
    rows = 2 * np.arange(h2)[:, None] + flat // 2
    cols = 2 * np.arange(w2)[None, :] + flat % 2
    # One target pixel per disjoint block, so plain fancy assignment is safe.
    grad_in[rows, cols] = grad_out
    return grad_in
