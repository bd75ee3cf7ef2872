"""Numba-jitted implementations of the hot training kernels.

Same contracts as kernels_numpy (that module's docstring is the reference).
Convolutions gather patches into a column matrix inside nopython code and
hand the contraction to BLAS via np.dot; pooling is plain loops. Tie-breaks
and accumulation orders are chosen to match the numpy backend exactly.

Importing this module requires numba; ricecnn.backend guards the import.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(x: np.ndarray, K: int) -> np.ndarray:
    H, W, C = x.shape
    oh, ow = H - K + 1, W - K + 1
    cols = np.empty((oh * ow, K * K * C))
    for i in range(oh):
        for j in range(ow):
            r = i * ow + j
            q = 0
            for kh in range(K):
                for kw in range(K):
                    for c in range(C):
                        cols[r, q] = x[i + kh, j + kw, c]
                        q += 1
    return cols


@njit(cache=True)
def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    H, W, C = x.shape
    K, F = w.shape[0], w.shape[3]
    oh, ow = H - K + 1, W - K + 1
    cols = _im2col(x, K)
    wm = np.ascontiguousarray(w).reshape(K * K * C, F)
    y = np.dot(cols, wm)
    for r in range(oh * ow):
        for f in range(F):
            y[r, f] += b[f]
    return y.reshape(oh, ow, F)


@njit(cache=True)
def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    H, W, C = x.shape
    K, F = w.shape[0], w.shape[3]
    oh, ow = H - K + 1, W - K + 1
    gyf = np.ascontiguousarray(gy).reshape(oh * ow, F)

    cols = _im2col(x, K)
    gw = np.dot(cols.T, gyf).reshape(K, K, C, F)

    wm = np.ascontiguousarray(w).reshape(K * K * C, F)
    gcols = np.dot(gyf, wm.T)  # (oh*ow, K*K*C)
    gx = np.zeros((H, W, C))
    for i in range(oh):
        for j in range(ow):
            r = i * ow + j
            q = 0
            for kh in range(K):
                for kw in range(K):
                    for c in range(C):
                        gx[i + kh, j + kw, c] += gcols[r, q]
                        q += 1

    gb = np.zeros(F)
    for r in range(oh * ow):
        for f in range(F):
            gb[f] += gyf[r, f]
    return gx, gw, gb


@njit(cache=True)
def maxpool2_forward(x: np.ndarray) -> np.ndarray:
    H, W, C = x.shape
    oh, ow = H // 2, W // 2
    y = np.empty((oh, ow, C))
    for i in range(oh):
        for j in range(ow):
            for c in range(C):
                m = x[2 * i, 2 * j, c]
                if x[2 * i, 2 * j + 1, c] > m:
                    m = x[2 * i, 2 * j + 1, c]
                if x[2 * i + 1, 2 * j, c] > m:
                    m = x[2 * i + 1, 2 * j, c]
                if x[2 * i + 1, 2 * j + 1, c] > m:
                    m = x[2 * i + 1, 2 * j + 1, c]
                y[i, j, c] = m
    return y


@njit(cache=True)
def maxpool2_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    H, W, C = x.shape
    oh, ow = H // 2, W // 2
    gx = np.zeros((H, W, C))
    for i in range(oh):
        for j in range(ow):
            for c in range(C):
                # row-major scan with strict > keeps the first max on ties
                bi, bj = 0, 0
                m = x[2 * i, 2 * j, c]
                if x[2 * i, 2 * j + 1, c] > m:
                    m = x[2 * i, 2 * j + 1, c]
                    bi, bj = 0, 1
                if x[2 * i + 1, 2 * j, c] > m:
                    m = x[2 * i + 1, 2 * j, c]
                    bi, bj = 1, 0
                if x[2 * i + 1, 2 * j + 1, c] > m:
                    bi, bj = 1, 1
                gx[2 * i + bi, 2 * j + bj, c] = gy[i, j, c]
    return gx
