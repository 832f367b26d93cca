"""Tiny speaker encoder.

Three blocks of (separable conv -> batchnorm -> PReLU -> squeeze-excitation),
statistics pooling, a linear projection with batchnorm, then L2
normalisation. Channel lists give each block's output width, so with the
defaults the blocks map 80->80->128->192.

Shape ledger for the default config (learnable parameters only)::

    block0  dw 80x3 + pw 80x80   + bn 2x80  + prelu 80  + se 80x20+20+20x80+80    = 10180
    block1  dw 80x5 + pw 80x128  + bn 2x128 + prelu 128 + se 128x32+32+32x128+128 = 19376
    block2  dw 128x7 + pw 128x192 + bn 2x192 + prelu 192 + se 192x48+48+48x192+192 = 44720
    proj    384x192 + 192 + bn 2x192                                              = 74304
    total                                                                           148580
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers

DEFAULT_PARAM_COUNT = 148_580


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN/inf; the message names the layer."""


@dataclass(frozen=True)
class EncoderConfig:
    in_dim: int = 80
    block_channels: tuple = (80, 128, 192)
    kernels: tuple = (3, 5, 7)
    se_bottleneck: tuple = (20, 32, 48)
    pooled_dim: int = 384
    embed_dim: int = 192

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "se_bottleneck", tuple(int(s) for s in self.se_bottleneck))
        if not len(self.block_channels) == len(self.kernels) == len(self.se_bottleneck) == 3:
            raise ValueError("block_channels, kernels and se_bottleneck need exactly 3 entries")
        if self.in_dim <= 0 or self.embed_dim <= 0:
            raise ValueError("in_dim and embed_dim must be positive")
        if min(self.block_channels) <= 0 or min(self.se_bottleneck) <= 0:
            raise ValueError("channel counts must be positive")
        if any(k <= 0 or k % 2 == 0 for k in self.kernels):
            raise ValueError("kernel sizes must be odd and positive")
        if self.pooled_dim != 2 * self.block_channels[-1]:
            raise ValueError("pooled_dim must be twice the last block's channels")

    def as_dict(self):
        return {
            "in_dim": self.in_dim,
            "block_channels": list(self.block_channels),
            "kernels": list(self.kernels),
            "se_bottleneck": list(self.se_bottleneck),
            "pooled_dim": self.pooled_dim,
            "embed_dim": self.embed_dim,
        }

    def param_shapes(self):
        """Ordered name -> shape for learnable tensors."""
        shapes = {}
        c_in = self.in_dim
        for i, (c_out, k, r) in enumerate(zip(self.block_channels, self.kernels, self.se_bottleneck)):
            p = f"block{i}."
            shapes[p + "depthwise"] = (c_in, k)
            shapes[p + "pointwise"] = (c_in, c_out)
            shapes[p + "bn.weight"] = (c_out,)
            shapes[p + "bn.bias"] = (c_out,)
            shapes[p + "prelu"] = (c_out,)
            shapes[p + "se.w1"] = (c_out, r)
            shapes[p + "se.b1"] = (r,)
            shapes[p + "se.w2"] = (r, c_out)
            shapes[p + "se.b2"] = (c_out,)
            c_in = c_out
        shapes["proj.weight"] = (self.pooled_dim, self.embed_dim)
        shapes["proj.bias"] = (self.embed_dim,)
        shapes["proj.bn.weight"] = (self.embed_dim,)
        shapes["proj.bn.bias"] = (self.embed_dim,)
        return shapes

    def buffer_shapes(self):
        shapes = {}
        for i, c in enumerate(self.block_channels):
            shapes[f"block{i}.bn.running_mean"] = (c,)
            shapes[f"block{i}.bn.running_var"] = (c,)
        shapes["proj.bn.running_mean"] = (self.embed_dim,)
        shapes["proj.bn.running_var"] = (self.embed_dim,)
        return shapes


def param_count(cfg: EncoderConfig = EncoderConfig()) -> int:
    """Number of learnable parameters (batchnorm running stats excluded)."""
    return sum(int(np.prod(s)) for s in cfg.param_shapes().values())


@dataclass
class EncoderWeights:
    config: EncoderConfig
    params: dict
    buffers: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def tensors(self):
        """All tensors, learnable first, in a fixed order."""
        out = dict(self.params)
        out.update(self.buffers)
        return out

    def copy(self):
        return EncoderWeights(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def astype(self, dtype):
        return EncoderWeights(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def validate(self):
        expected = {**self.config.param_shapes(), **self.config.buffer_shapes()}
        got = self.tensors()
        if set(expected) != set(got):
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            raise ValueError(f"tensor names differ: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if got[name].shape != tuple(shape):
                raise ValueError(f"{name}: shape {got[name].shape}, expected {tuple(shape)}")
            if not np.all(np.isfinite(got[name])):
                raise NonFiniteError(f"{name}: non-finite values")
        for name in self.buffers:
            if name.endswith("running_var") and np.any(self.buffers[name] <= 0):
                raise ValueError(f"{name}: running variance must be positive")


def init_weights(cfg: EncoderConfig = EncoderConfig(), seed=0, dtype=np.float32) -> EncoderWeights:
    """Random initialisation (uniform fan-in scaling, unit BN, PReLU slope 0.25)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith("depthwise"):
            fan_in = shape[1]
        elif name.endswith(("pointwise", "w1", "w2", "proj.weight")):
            fan_in = shape[0]
        else:
            fan_in = None
        if fan_in is not None:
            bound = np.sqrt(3.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith("bn.weight"):
            params[name] = np.ones(shape)
        elif name.endswith("prelu"):
            params[name] = np.full(shape, 0.25)
        else:
            params[name] = np.zeros(shape)
    buffers = {}
    for name, shape in cfg.buffer_shapes().items():
        buffers[name] = np.zeros(shape) if name.endswith("mean") else np.ones(shape)
    return EncoderWeights(cfg, params, buffers).astype(dtype)


# ---------------------------------------------------------------- forward / backward

def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite activations after {name}")


def forward(x, w: EncoderWeights, training=False, momentum=0.1, return_cache=False):
    """Embed a batch of feature chunks.

    x: (B, in_dim, T') or a single (in_dim, T') chunk. Returns unit-norm
    embeddings (B, embed_dim), or (embed_dim,) for a single chunk. With
    ``training=True`` batchnorm uses batch statistics and updates the
    running buffers by ``momentum``.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    cfg = w.config
    if x.ndim != 3 or x.shape[1] != cfg.in_dim:
        raise ValueError(f"expected (B, {cfg.in_dim}, T) features, got {x.shape}")
    x = x.astype(w.dtype, copy=False)
    p, buf = w.params, w.buffers
    caches = []
    h = x
    for i in range(len(cfg.block_channels)):
        b = f"block{i}."
        h, c_conv = layers.separable_conv_forward(h, p[b + "depthwise"], p[b + "pointwise"])
        _check(b + "conv", h)
        h, c_bn = layers.batchnorm_forward(
            h, p[b + "bn.weight"], p[b + "bn.bias"],
            buf[b + "bn.running_mean"], buf[b + "bn.running_var"], training, momentum,
        )
        _check(b + "bn", h)
        h, c_act = layers.prelu_forward(h, p[b + "prelu"])
        h, c_se = layers.se_forward(h, p[b + "se.w1"], p[b + "se.b1"], p[b + "se.w2"], p[b + "se.b2"])
        _check(b + "se", h)
        caches.append((c_conv, c_bn, c_act, c_se))
    h, c_pool = layers.stats_pool_forward(h)
    _check("stats_pool", h)
    h, c_lin = layers.linear_forward(h, p["proj.weight"], p["proj.bias"])
    h, c_pbn = layers.batchnorm_forward(
        h, p["proj.bn.weight"], p["proj.bn.bias"],
        buf["proj.bn.running_mean"], buf["proj.bn.running_var"], training, momentum,
    )
    _check("proj", h)
    e, c_norm = layers.l2norm_forward(h)
    _check("l2norm", e)
    cache = {"blocks": caches, "pool": c_pool, "lin": c_lin, "pbn": c_pbn, "norm": c_norm,
             "single": single}
    e = e[0] if single else e
    if return_cache:
        return e, cache
    return e


def backward(cache, grad_embedding, w: EncoderWeights):
    """Reverse-mode pass. Returns a dict of parameter gradients plus ``"input"``."""
    if cache is None:
        raise ValueError("backward needs the cache returned by forward(..., return_cache=True)")
    g = np.asarray(grad_embedding)
    if cache["single"]:
        g = g[None]
    grads = {}
    (g,) = layers.l2norm_backward(g, cache["norm"])
    g, grads["proj.bn.weight"], grads["proj.bn.bias"] = layers.batchnorm_backward(g, cache["pbn"])
    g, grads["proj.weight"], grads["proj.bias"] = layers.linear_backward(g, cache["lin"])
    (g,) = layers.stats_pool_backward(g, cache["pool"])
    for i in reversed(range(len(w.config.block_channels))):
        b = f"block{i}."
        c_conv, c_bn, c_act, c_se = cache["blocks"][i]
        g, grads[b + "se.w1"], grads[b + "se.b1"], grads[b + "se.w2"], grads[b + "se.b2"] = \
            layers.se_backward(g, c_se)
        g, grads[b + "prelu"] = layers.prelu_backward(g, c_act)
        g, grads[b + "bn.weight"], grads[b + "bn.bias"] = layers.batchnorm_backward(g, c_bn)
        g, grads[b + "depthwise"], grads[b + "pointwise"] = layers.separable_conv_backward(g, c_conv)
        _check(b + "backward", g)
    grads["input"] = g[0] if cache["single"] else g
    return grads
