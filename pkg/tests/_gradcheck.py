import numpy as np


def numeric_grad(f, x, h=1e-4):
    """Central differences of scalar f() w.r.t. array x (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


FLOOR = 1e-7


def rel_error(a, b):
    """Norm-wise relative error; the floor keeps structurally zero gradients
    (e.g. a bias feeding a training-mode batchnorm) from dividing noise by noise."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), FLOOR)
    return np.linalg.norm(a - b) / denom
