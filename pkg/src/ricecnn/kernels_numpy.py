"""Pure-numpy implementations of the hot training kernels.

Layout conventions: feature maps are (H, W, C) float64, convolution kernels
are (K, K, C, F), dense weights are (N, M). Convolutions are valid (no
padding), stride 1; pooling is 2x2 stride 2 with floor semantics (trailing
odd row/column dropped).
"""

from __future__ import annotations

import numpy as np


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: (H,W,C) * (K,K,C,F) + (F,) -> (H-K+1, W-K+1, F)."""
    H, W, C = x.shape
    K, F = w.shape[0], w.shape[3]
    oh, ow = H - K + 1, W - K + 1
    s = x.strides
    # im2col as a zero-copy view, then one BLAS matmul; reshape makes the copy
    win = np.lib.stride_tricks.as_strided(
        x, (oh, ow, K, K, C), (s[0], s[1], s[0], s[1], s[2]), writeable=False
    )
    cols = win.reshape(oh * ow, K * K * C)
    y = cols @ w.reshape(K * K * C, F) + b
    return y.reshape(oh, ow, F)


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients of conv2d_forward w.r.t. input, kernels and bias."""
    H, W, C = x.shape
    K, F = w.shape[0], w.shape[3]
    oh, ow = H - K + 1, W - K + 1
    gyf = gy.reshape(oh * ow, F)
    gx = np.zeros_like(x)
    gw = np.empty_like(w)
    # one (shifted) matmul pair per kernel tap keeps temporaries small
    for kh in range(K):
        for kw in range(K):
            xs = x[kh : kh + oh, kw : kw + ow, :].reshape(oh * ow, C)
            gw[kh, kw] = xs.T @ gyf
            gx[kh : kh + oh, kw : kw + ow, :] += (gyf @ w[kh, kw].T).reshape(oh, ow, C)
    gb = gyf.sum(axis=0)
    return gx, gw, gb


def maxpool2_forward(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max pooling; odd trailing row/column is dropped."""
    H, W, C = x.shape
    oh, ow = H // 2, W // 2
    r = x[: 2 * oh, : 2 * ow, :].reshape(oh, 2, ow, 2, C)
    return r.max(axis=(1, 3))


def maxpool2_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Route gy to the argmax of each 2x2 window (first position wins ties)."""
    H, W, C = x.shape
    oh, ow = H // 2, W // 2
    r = x[: 2 * oh, : 2 * ow, :].reshape(oh, 2, ow, 2, C)
    # windows flattened in row-major order so argmax tie-break = first element
    flat = r.transpose(0, 2, 4, 1, 3).reshape(oh, ow, C, 4)
    idx = flat.argmax(axis=3)
    g4 = np.zeros((oh, ow, C, 4))
    np.put_along_axis(g4, idx[..., None], gy[..., None], axis=3)
    gx = np.zeros_like(x)
    gx[: 2 * oh, : 2 * ow, :] = (
        g4.reshape(oh, ow, C, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * oh, 2 * ow, C)
    )
    return gx
