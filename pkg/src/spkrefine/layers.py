"""Differentiable operators used by the encoder.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(grad_out, cache)`` and returns the input gradient followed by the
parameter gradients. Activations are laid out (batch, channels, frames).

Matrix products go through stacked ``matmul`` so each batch element is an
independent BLAS call; results for one sample do not depend on what else is
in the batch.
"""
import numpy as np

from . import kernels

BN_EPS = 1e-5
STD_EPS = 1e-8


def _rowmat(a, w):
    """(B, n) @ (n, m) -> (B, m), one product per row."""
    return np.matmul(a[:, None, :], w)[:, 0, :]


# ---------------------------------------------------------------- separable conv

def separable_conv_forward(x, depthwise, pointwise):
    """x (B, Cin, T), depthwise (Cin, k), pointwise (Cin, Cout) -> (B, Cout, T)."""
    if x.ndim != 3 or x.shape[1] != depthwise.shape[0] or depthwise.shape[0] != pointwise.shape[0]:
        raise ValueError(
            f"shape mismatch: x {x.shape}, depthwise {depthwise.shape}, pointwise {pointwise.shape}"
        )
    if depthwise.shape[1] % 2 == 0:
        raise ValueError("depthwise kernel size must be odd")
    y = kernels.depthwise_forward(x, depthwise)
    z = np.matmul(pointwise.T, y)
    return z, (x, y, depthwise, pointwise)


def separable_conv_backward(g, cache):
    x, y, depthwise, pointwise = cache
    d_pointwise = np.einsum("bct,bot->co", y, g)
    dy = np.matmul(pointwise, g)
    dx, d_depthwise = kernels.depthwise_backward(dy, x, depthwise)
    return dx, d_depthwise, d_pointwise


# ---------------------------------------------------------------- batchnorm

def _bn_axes(x):
    return (0, 2) if x.ndim == 3 else (0,)


def _bshape(v, x):
    return v[None, :, None] if x.ndim == 3 else v[None, :]


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training=False, momentum=0.1):
    """Channel-wise batchnorm on (B, C, T) or (B, C).

    In training mode batch statistics are used and the running buffers are
    updated in place (pass ``momentum=0`` to leave them untouched).
    """
    axes = _bn_axes(x)
    if training:
        m = x.size // x.shape[1]
        if m < 2:
            raise ValueError("batch statistics need at least 2 values per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if momentum:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * m / (m - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _bshape(mean, x)) * _bshape(inv_std, x)
    out = xhat * _bshape(gamma, x) + _bshape(beta, x)
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(g, cache):
    xhat, inv_std, gamma, training = cache
    axes = _bn_axes(g)
    d_gamma = (g * xhat).sum(axis=axes)
    d_beta = g.sum(axis=axes)
    dxhat = g * _bshape(gamma, g)
    if training:
        m = g.size // g.shape[1]
        s1 = dxhat.sum(axis=axes)
        s2 = (dxhat * xhat).sum(axis=axes)
        dx = _bshape(inv_std / m, g) * (m * dxhat - _bshape(s1, g) - xhat * _bshape(s2, g))
    else:
        dx = dxhat * _bshape(inv_std, g)
    return dx, d_gamma, d_beta


# ---------------------------------------------------------------- prelu

def prelu_forward(x, slope):
    a = _bshape(slope, x)
    pos = x > 0
    return np.where(pos, x, a * x), (x, pos, slope)


def prelu_backward(g, cache):
    x, pos, slope = cache
    axes = _bn_axes(x)
    d_slope = np.where(pos, 0.0, g * x).sum(axis=axes)
    dx = np.where(pos, g, g * _bshape(slope, x))
    return dx, d_slope


# ---------------------------------------------------------------- squeeze-excitation

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def se_forward(x, w1, b1, w2, b2):
    """Gate each channel by sigmoid(w2 relu(w1 mean_t(x) + b1) + b2)."""
    s = x.mean(axis=2)
    pre = _rowmat(s, w1) + b1
    h = np.maximum(pre, 0.0)
    gate = _sigmoid(_rowmat(h, w2) + b2)
    return x * gate[:, :, None], (x, s, pre, h, gate, w1, w2)


def se_backward(g, cache):
    x, s, pre, h, gate, w1, w2 = cache
    T = x.shape[2]
    d_gate = (g * x).sum(axis=2)
    d_a2 = d_gate * gate * (1.0 - gate)
    d_w2 = h.T @ d_a2
    d_b2 = d_a2.sum(axis=0)
    d_h = _rowmat(d_a2, w2.T) * (pre > 0)
    d_w1 = s.T @ d_h
    d_b1 = d_h.sum(axis=0)
    d_s = _rowmat(d_h, w1.T)
    dx = g * gate[:, :, None] + d_s[:, :, None] / T
    return dx, d_w1, d_b1, d_w2, d_b2


# ---------------------------------------------------------------- pooling / projection

def stats_pool_forward(x):
    """(B, C, T) -> (B, 2C): per-channel temporal mean then std."""
    if x.shape[2] < 2:
        raise ValueError("statistics pooling needs at least 2 frames")
    mean = x.mean(axis=2)
    centered = x - mean[:, :, None]
    std = np.sqrt((centered ** 2).mean(axis=2) + STD_EPS)
    return np.concatenate([mean, std], axis=1), (centered, std)


def stats_pool_backward(g, cache):
    centered, std = cache
    C, T = centered.shape[1], centered.shape[2]
    d_mean, d_std = g[:, :C], g[:, C:]
    dx = d_mean[:, :, None] / T + centered * (d_std / (T * std))[:, :, None]
    return (dx,)


def linear_forward(x, w, b):
    """(B, n) @ (n, m) + b."""
    return _rowmat(x, w) + b, (x, w)


def linear_backward(g, cache):
    x, w = cache
    return _rowmat(g, w.T), x.T @ g, g.sum(axis=0)


def l2norm_forward(x):
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    y = x / norm
    return y, (y, norm)


def l2norm_backward(g, cache):
    y, norm = cache
    return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)
