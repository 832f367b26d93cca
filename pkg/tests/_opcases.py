"""Random finite-difference instances for every differentiable operator.

Each case builds float64 inputs from ``rng``, computes analytic gradients of
the scalar ``sum(out * G)`` and returns ``[(name, analytic, numeric), ...]``.
"""
import math

import numpy as np

from _gradcheck import numeric_grad
from spkrefine import contrastive, encoder, layers


def _obj(fn, G):
    return lambda: float(np.sum(fn() * G))


def case_separable_conv(rng):
    k = int(rng.choice([1, 3, 5, 7]))
    x = rng.standard_normal((2, 3, 8))
    dw = rng.standard_normal((3, k))
    pw = rng.standard_normal((3, 4))
    out, cache = layers.separable_conv_forward(x, dw, pw)
    G = rng.standard_normal(out.shape)
    dx, ddw, dpw = layers.separable_conv_backward(G, cache)
    f = _obj(lambda: layers.separable_conv_forward(x, dw, pw)[0], G)
    return [("x", dx, numeric_grad(f, x)), ("depthwise", ddw, numeric_grad(f, dw)),
            ("pointwise", dpw, numeric_grad(f, pw))]


def _bn_case(rng, shape, training):
    x = rng.standard_normal(shape) * 2 + 0.5
    C = shape[1]
    gamma, beta = rng.standard_normal(C), rng.standard_normal(C)
    rm, rv = rng.standard_normal(C), rng.uniform(0.5, 2.0, C)

    def run():
        return layers.batchnorm_forward(x, gamma, beta, rm, rv, training=training, momentum=0.0)

    out, cache = run()
    G = rng.standard_normal(out.shape)
    dx, dg, db = layers.batchnorm_backward(G, cache)
    f = _obj(lambda: run()[0], G)
    return [("x", dx, numeric_grad(f, x)), ("gamma", dg, numeric_grad(f, gamma)),
            ("beta", db, numeric_grad(f, beta))]


def case_batchnorm_train(rng):
    return _bn_case(rng, (3, 4, 5), True) + _bn_case(rng, (5, 3), True)


def case_batchnorm_eval(rng):
    return _bn_case(rng, (2, 4, 5), False) + _bn_case(rng, (3, 3), False)


def case_prelu(rng):
    x = rng.standard_normal((2, 3, 6))
    x[np.abs(x) < 1e-2] += 0.05
    a = rng.uniform(-0.5, 1.0, 3)
    out, cache = layers.prelu_forward(x, a)
    G = rng.standard_normal(out.shape)
    dx, da = layers.prelu_backward(G, cache)
    f = _obj(lambda: layers.prelu_forward(x, a)[0], G)
    return [("x", dx, numeric_grad(f, x)), ("slope", da, numeric_grad(f, a))]


def case_squeeze_excitation(rng):
    x = rng.standard_normal((2, 4, 6))
    w1, b1 = rng.standard_normal((4, 3)), rng.standard_normal(3)
    w2, b2 = rng.standard_normal((3, 4)), rng.standard_normal(4)
    params = (w1, b1, w2, b2)
    out, cache = layers.se_forward(x, *params)
    G = rng.standard_normal(out.shape)
    grads = layers.se_backward(G, cache)
    f = _obj(lambda: layers.se_forward(x, *params)[0], G)
    names = ("x", "w1", "b1", "w2", "b2")
    return [(n, g, numeric_grad(f, p)) for n, g, p in zip(names, grads, (x,) + params)]


def case_stats_pooling(rng):
    x = rng.standard_normal((2, 3, 6))
    out, cache = layers.stats_pool_forward(x)
    G = rng.standard_normal(out.shape)
    (dx,) = layers.stats_pool_backward(G, cache)
    f = _obj(lambda: layers.stats_pool_forward(x)[0], G)
    return [("x", dx, numeric_grad(f, x))]


def case_projection(rng):
    x, w, b = rng.standard_normal((3, 6)), rng.standard_normal((6, 4)), rng.standard_normal(4)
    out, cache = layers.linear_forward(x, w, b)
    G = rng.standard_normal(out.shape)
    dx, dw, db = layers.linear_backward(G, cache)
    f = _obj(lambda: layers.linear_forward(x, w, b)[0], G)
    return [("x", dx, numeric_grad(f, x)), ("w", dw, numeric_grad(f, w)), ("b", db, numeric_grad(f, b))]


def case_l2norm(rng):
    x = rng.standard_normal((3, 5))
    out, cache = layers.l2norm_forward(x)
    G = rng.standard_normal(out.shape)
    (dx,) = layers.l2norm_backward(G, cache)
    f = _obj(lambda: layers.l2norm_forward(x)[0], G)
    return [("x", dx, numeric_grad(f, x))]


def _unit(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def case_similarity(rng):
    n, k, d = int(rng.integers(2, 5)), int(rng.integers(1, 4)), 5
    E = _unit(rng.standard_normal((n, d)))
    M = _unit(rng.standard_normal((n, k, d)))
    S = contrastive.similarity_matrix(E, M)
    G = rng.standard_normal(S.shape)
    dE, dM = contrastive.similarity_backward(G, E, M)
    f = _obj(lambda: contrastive.similarity_matrix(E, M), G)
    # the map is linear, a small step keeps the inputs inside the unit-norm tolerance
    return [("teacher", dE, numeric_grad(f, E, h=1e-6)), ("student", dM, numeric_grad(f, M, h=1e-6))]


def case_symmetric_loss(rng):
    n = int(rng.integers(2, 6))
    S = rng.uniform(-1, 1, (n, n))
    tau = math.exp(rng.uniform(-1, 2))
    dS, _ = contrastive.loss_backward(S, tau)
    return [("S", dS, numeric_grad(lambda: contrastive.contrastive_loss(S, tau)[0], S))]


def case_temperature(rng):
    n = int(rng.integers(2, 6))
    S = rng.uniform(-1, 1, (n, n))
    log_tau = np.array([rng.uniform(-1, 2)])
    _, d = contrastive.loss_backward(S, math.exp(log_tau[0]))
    num = numeric_grad(lambda: contrastive.contrastive_loss(S, math.exp(log_tau[0]))[0], log_tau)
    return [("log_tau", np.array([d]), num)]


SMALL_ENCODER = encoder.EncoderConfig(
    in_dim=6, block_channels=(4, 5, 6), kernels=(3, 5, 3), se_bottleneck=(2, 2, 3),
    pooled_dim=12, embed_dim=5,
)


def case_encoder(rng, training=True):
    """Whole-network check on a shrunken config: every parameter entry."""
    seed = int(rng.integers(1 << 30))
    w = encoder.init_weights(SMALL_ENCODER, seed=seed, dtype=np.float64)
    for name in w.buffers:
        if name.endswith("running_var"):
            w.buffers[name][:] = rng.uniform(0.5, 2.0, w.buffers[name].shape)
        else:
            w.buffers[name][:] = rng.standard_normal(w.buffers[name].shape) * 0.1
    x = rng.standard_normal((3, 6, 7))

    def run(return_cache=False):
        return encoder.forward(x, w, training=training, momentum=0.0, return_cache=return_cache)

    out, cache = run(True)
    G = rng.standard_normal(out.shape)
    grads = encoder.backward(cache, G, w)
    f = _obj(run, G)
    result = [(name, grads[name], numeric_grad(f, p)) for name, p in w.params.items()]
    result.append(("input", grads["input"], numeric_grad(f, x)))
    return result


OPERATOR_CASES = {
    "separable_conv": case_separable_conv,
    "batchnorm_train": case_batchnorm_train,
    "batchnorm_eval": case_batchnorm_eval,
    "prelu": case_prelu,
    "squeeze_excitation": case_squeeze_excitation,
    "stats_pooling": case_stats_pooling,
    "projection": case_projection,
    "l2norm": case_l2norm,
    "similarity": case_similarity,
    "symmetric_loss": case_symmetric_loss,
    "temperature": case_temperature,
}
