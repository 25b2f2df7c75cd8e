"""Small reverse-mode differentiation kernel on numpy."""

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint, state_checksum
from .nn import (
    BatchNorm, Conv1d, Conv2d, ConvTranspose2d, Dense, Dropout, Module,
    MultiHeadAttention, ReLU, Sequential, mlp,
)
from .optim import Adam
from .tensor import (
    Parameter, ShapeError, Tensor, default_dtype, dtype_scope, no_grad,
    set_default_dtype, tensor,
)


def numeric_grad(f, arrays, eps=1e-6):
    """Central differences of scalar f() w.r.t. each array (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a, dtype=float)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            fp = f()
            a[i] = old - eps
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||), with a floor so all-zero pairs give 0."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def gradcheck(loss_fn, params, eps=1e-6) -> float:
    """Relative error between tape gradients and central differences.

    ``loss_fn()`` must rebuild the graph from ``params`` (Tensors with
    requires_grad) and return a scalar Tensor.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    with no_grad():
        numeric = numeric_grad(lambda: float(loss_fn().data), [p.data for p in params], eps)
    return relative_error(analytic, numeric)


def gradcheck_directional(loss_fn, params, rng, n_dirs=4, eps=1e-6) -> float:
    """Worst relative error of the directional derivative g.v against the
    central difference along v, over ``n_dirs`` random unit directions.

    Two loss evaluations per direction instead of two per parameter entry.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    base = [p.data.copy() for p in params]
    worst = 0.0
    with no_grad():
        for _ in range(n_dirs):
            dirs = [rng.normal(size=b.shape) for b in base]
            norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
            dirs = [d / norm for d in dirs]
            vals = []
            for sign in (1.0, -1.0):
                for p, b, d in zip(params, base, dirs):
                    p.data[...] = b + sign * eps * d
                vals.append(float(loss_fn().data))
            for p, b in zip(params, base):
                p.data[...] = b
            fd = (vals[0] - vals[1]) / (2 * eps)
            an = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
            scale = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / scale)
    return worst


__all__ = [
    "Adam", "BatchNorm", "Conv1d", "Conv2d", "ConvTranspose2d", "Dense", "Dropout", "Module",
    "MultiHeadAttention", "Parameter", "ReLU", "Sequential", "ShapeError", "Tensor",
    "default_dtype", "dtype_scope", "gradcheck", "gradcheck_directional", "load_checkpoint", "mlp", "no_grad",
    "numeric_grad", "ops", "relative_error", "save_checkpoint", "set_default_dtype",
    "state_checksum", "tensor",
]
