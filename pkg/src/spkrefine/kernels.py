"""Depthwise 1-D convolution kernels (same padding, stride 1).

Both a numba and a numpy implementation are kept; ``depthwise_forward`` and
``depthwise_backward`` point at whichever one :mod:`spkrefine._accel`
selected at import time. The two agree to floating-point rounding, not
bit-for-bit, so a process should stick to one of them.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


def depthwise_forward_numpy(x, w):
    """x: (B, C, T), w: (C, k) with k odd -> (B, C, T)."""
    k = w.shape[1]
    pad = k // 2
    T = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    y = np.zeros_like(x)
    for j in range(k):
        y += w[None, :, j, None] * xp[:, :, j:j + T]
    return y


def depthwise_backward_numpy(g, x, w):
    k = w.shape[1]
    pad = k // 2
    T = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for j in range(k):
        dw[:, j] = np.einsum("bct,bct->c", g, xp[:, :, j:j + T])
        dxp[:, :, j:j + T] += w[None, :, j, None] * g
    return dxp[:, :, pad:pad + T], dw


@njit(cache=True)
def depthwise_forward_numba(x, w):
    B, C, T = x.shape
    k = w.shape[1]
    pad = k // 2
    y = np.zeros_like(x)
    for b in range(B):
        for c in range(C):
            for t in range(T):
                acc = 0.0
                for j in range(k):
                    s = t + j - pad
                    if 0 <= s < T:
                        acc += w[c, j] * x[b, c, s]
                y[b, c, t] = acc
    return y


@njit(cache=True)
def depthwise_backward_numba(g, x, w):
    B, C, T = x.shape
    k = w.shape[1]
    pad = k // 2
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for b in range(B):
        for c in range(C):
            for t in range(T):
                gv = g[b, c, t]
                for j in range(k):
                    s = t + j - pad
                    if 0 <= s < T:
                        dw[c, j] += gv * x[b, c, s]
                        dx[b, c, s] += gv * w[c, j]
    return dx, dw


if USE_NUMBA:
    def depthwise_forward(x, w):
        return depthwise_forward_numba(np.ascontiguousarray(x), np.ascontiguousarray(w))

    def depthwise_backward(g, x, w):
        return depthwise_backward_numba(
            np.ascontiguousarray(g), np.ascontiguousarray(x), np.ascontiguousarray(w)
        )
else:
    depthwise_forward = depthwise_forward_numpy
    depthwise_backward = depthwise_backward_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
