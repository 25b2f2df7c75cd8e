"""Differentiable operations. Each forward registers its backward closure."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make


def _t(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("add", a, b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("sub", a, b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("mul", a, b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return make(out, (a, b),
                lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float):
    a = _t(a)
    return make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    a = _t(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a):
    a = _t(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _t(a)
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g * 0.5 / out,))


def abs(a):
    a = _t(a)
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = _t(a)
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = _t(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = _t(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),))


def where(cond, a, b):
    a, b = _t(a), _t(b)
    cond = np.asarray(cond, dtype=bool)
    return make(np.where(cond, a.data, b.data), (a, b),
                lambda g: (_unbroadcast(np.where(cond, g, 0), a.shape),
                           _unbroadcast(np.where(cond, 0, g), b.shape)))


# --------------------------------------------------------------------------
# reductions and shape

def sum(a, axis=None, keepdims=False):
    a = _t(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return make(np.asarray(out), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = _t(a)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    return sum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = _t(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {a.shape} to {shape}") from None
    return make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = _t(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    a = _t(a)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return make(a.data[idx], (a,), back)


def concat(tensors, axis=-1):
    ts = [_t(x) for x in tensors]
    try:
        out = np.concatenate([x.data for x in ts], axis=axis)
    except ValueError as e:
        raise ShapeError("concat", str(e)) from None
    sizes = np.cumsum([x.shape[axis] for x in ts])[:-1]
    return make(out, ts, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    ts = [_t(x) for x in tensors]
    out = np.stack([x.data for x in ts], axis=axis)
    return make(out, ts, lambda g: tuple(np.moveaxis(g, axis, 0)))


def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return make(out, (a, b), back)


# --------------------------------------------------------------------------
# softmax family

def softmax(a, axis=-1):
    a = _t(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def logsumexp(a, axis=-1):
    a = _t(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return make(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


def l2_normalize(a, axis=-1, eps=1e-12):
    a = _t(a)
    return a / sqrt(sum(a * a, axis=axis, keepdims=True) + eps)


# --------------------------------------------------------------------------
# layers as functions

def dense(x, w, b=None):
    """x (..., in) @ w (in, out) + b (out)."""
    x, w = _t(x), _t(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("dense", f"input width {x.shape[-1]} does not match weight rows {w.shape[0]}")
    y = matmul(x, w)
    return y if b is None else y + b


def _pad2(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, w, b=None, stride=1, padding=0):
    """x (N, C, H, W), w (O, C, k, k) -> (N, O, Ho, Wo)."""
    x, w = _t(x), _t(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", f"input {x.shape} incompatible with kernel {w.shape}")
    n, c, h, wd = x.shape
    o, _, k, k2 = w.shape
    xp = _pad2(x.data, padding)
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k2) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", f"kernel {k}x{k2} larger than padded input {xp.shape[2:]}")
    win = sliding_window_view(xp, (k, k2), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k2)
    wm = w.data.reshape(o, -1)
    out = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gf.T @ cols).reshape(w.shape)
        gcols = (gf @ wm).reshape(n, ho, wo, c, k, k2)
        gx = np.zeros_like(xp)
        for i in range(k):
            for j in range(k2):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        return gx, gw
    y = make(np.ascontiguousarray(out), (x, w), back)
    return y if b is None else y + reshape(b, (1, o, 1, 1))


def conv_transpose2d(x, w, b=None, stride=1, padding=0, output_padding=0):
    """x (N, C, H, W), w (C, O, k, k) -> (N, O, Ho, Wo); the adjoint of conv2d."""
    x, w = _t(x), _t(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose2d", f"input {x.shape} incompatible with kernel {w.shape}")
    n, c, h, wd = x.shape
    _, o, k, k2 = w.shape
    full_h = (h - 1) * stride + k + output_padding
    full_w = (wd - 1) * stride + k2 + output_padding
    ho, wo = full_h - 2 * padding, full_w - 2 * padding
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv_transpose2d", "padding removes the whole output")
    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wm = w.data.reshape(c, o * k * k2)
    cols = (xf @ wm).reshape(n, h, wd, o, k, k2)
    full = np.zeros((n, o, full_h, full_w), dtype=cols.dtype)
    for i in range(k):
        for j in range(k2):
            full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    out = full[:, :, padding:padding + ho, padding:padding + wo]

    def back(g):
        gfull = np.zeros_like(full)
        gfull[:, :, padding:padding + ho, padding:padding + wo] = g
        win = sliding_window_view(gfull, (k, k2), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h, :wd]
        gcols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, o * k * k2)
        gx = (gcols @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        gw = (xf.T @ gcols).reshape(w.shape)
        return gx, gw
    y = make(np.ascontiguousarray(out), (x, w), back)
    return y if b is None else y + reshape(b, (1, o, 1, 1))


def conv1d(x, w, b=None, stride=1, padding=0):
    """x (N, C, L), w (O, C, k) -> (N, O, Lo)."""
    x, w = _t(x), _t(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv1d", f"input {x.shape} incompatible with kernel {w.shape}")
    if padding:
        z = Tensor(np.zeros(x.shape[:2] + (padding,), x.data.dtype))
        x = concat([z, x, z], axis=2)
    # a 1xk kernel over an (N, C, 1, L) image
    y = conv2d(reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2])),
               reshape(w, (w.shape[0], w.shape[1], 1, w.shape[2])), None, stride, 0)
    y = reshape(y, (y.shape[0], y.shape[1], y.shape[3]))
    return y if b is None else y + reshape(b, (1, -1, 1))


def batchnorm(x, gamma, beta, running_mean, running_var, training: bool,
              momentum: float = 0.1, eps: float = 1e-5):
    """Batch norm over axis 0 of (N, F). Running statistics are updated in place when training."""
    x = _t(x)
    if x.ndim != 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeError("batchnorm", f"input {x.shape} vs {gamma.shape[0]} features")
    if not training:
        xhat = (x - running_mean) / np.sqrt(running_var + eps).astype(x.data.dtype)
        return xhat * gamma + beta
    n = x.shape[0]
    if n < 2:
        raise ShapeError("batchnorm", "training mode needs a batch of at least 2")
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    running_mean *= 1 - momentum
    running_mean += momentum * mu
    running_var *= 1 - momentum
    running_var += momentum * var * n / (n - 1)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_d = (x.data - mu) * inv

    def back(g):
        # gradient of the normalisation alone
        return (inv / n * (n * g - g.sum(axis=0) - xhat_d * (g * xhat_d).sum(axis=0)),)
    xhat = make(xhat_d.astype(x.data.dtype), (x,), back)
    return xhat * gamma + beta


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; identity when not training or p == 0."""
    x = _t(x)
    if not training or p == 0:
        return x
    if not 0 <= p < 1:
        raise ValueError("dropout probability must be in [0, 1)")
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded random source")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return make(x.data * mask, (x,), lambda g: (g * mask,))


# --------------------------------------------------------------------------
# attention

def scaled_dot_attention(q, k, v, scale=None, return_weights=False):
    """softmax(q k^T * scale) v over the last two axes; scale defaults to 1/sqrt(d_k)."""
    q, k, v = _t(q), _t(k), _t(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention", f"q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    logits = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * scale
    w = softmax(logits, axis=-1)
    out = matmul(w, v)
    return (out, w) if return_weights else out


def split_heads(x, heads):
    """(B, L, D) -> (B, H, L, D/H)."""
    b, length, d = x.shape
    return transpose(reshape(x, (b, length, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x):
    b, h, length, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, length, h * dh))


def multihead_attention(q, k, v, wq, wk, wv, wo, heads, bq=None, bk=None, bv=None, bo=None,
                        temperature=None):
    """Project q, k, v, attend per head, concatenate and project.

    ``temperature`` divides the logits on top of 1/sqrt(d_k) when set.
    """
    d = wq.shape[1]
    if d % heads:
        raise ShapeError("attention", f"model width {d} is not divisible by {heads} heads")
    qh = split_heads(dense(q, wq, bq), heads)
    kh = split_heads(dense(k, wk, bk), heads)
    vh = split_heads(dense(v, wv, bv), heads)
    scale = 1.0 / math.sqrt(d // heads)
    if temperature is not None:
        scale /= temperature
    return dense(merge_heads(scaled_dot_attention(qh, kh, vh, scale)), wo, bo)


# --------------------------------------------------------------------------
# variational pieces and losses

def reparameterize(mu, logvar, eps):
    mu, logvar = _t(mu), _t(logvar)
    eps = np.asarray(eps, dtype=mu.data.dtype)
    if mu.shape != logvar.shape or eps.shape != mu.shape:
        raise ShapeError("reparameterize", f"mu {mu.shape}, logvar {logvar.shape}, eps {eps.shape}")
    return mu + exp(logvar * 0.5) * Tensor(eps)


def kl_gaussian(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, 1)), summed over the last axis and
    averaged over any leading axes."""
    mu, logvar = _t(mu), _t(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError("kl_gaussian", f"mu {mu.shape} vs logvar {logvar.shape}")
    # expm1(x) - x avoids cancellation for small logvar
    lv = logvar.data
    tail = make(np.maximum(np.expm1(lv) - lv, 0.0), (logvar,), lambda g: (g * np.expm1(lv),))
    per = sum(mu * mu + tail, axis=-1) * 0.5
    return mean(per)


def mse(pred, target):
    pred = _t(pred)
    target = _t(target, pred)
    if pred.shape != target.shape:
        raise ShapeError("mse", f"{pred.shape} vs {target.shape}")
    d = pred - target
    return mean(d * d)


def mae(pred, target):
    pred = _t(pred)
    target = _t(target, pred)
    if pred.shape != target.shape:
        raise ShapeError("mae", f"{pred.shape} vs {target.shape}")
    return mean(abs(pred - target))


def huber(pred, target, delta: float = 1.0):
    if not delta > 0:
        raise ValueError("huber delta must be positive")
    pred = _t(pred)
    target = _t(target, pred)
    if pred.shape != target.shape:
        raise ShapeError("huber", f"{pred.shape} vs {target.shape}")
    d = pred - target
    small = np.abs(d.data) <= delta
    quad = d * d * 0.5
    lin = abs(d) * delta - 0.5 * delta * delta
    return mean(where(small, quad, lin))


def contrastive_loss(z, positive, tau: float = 0.1):
    """Temperature-scaled cosine contrastive loss; self-similarity is
    excluded from each denominator."""
    z = _t(z)
    if not tau > 0:
        raise ValueError("temperature must be positive")
    n = z.shape[0]
    pos = np.asarray(positive, dtype=int)
    if pos.shape != (n,) or np.any(pos < 0) or np.any(pos >= n) or np.any(pos == np.arange(n)):
        raise ValueError("every embedding needs exactly one positive other than itself")
    zn = l2_normalize(z, axis=1)
    sim = matmul(zn, transpose(zn)) * (1.0 / tau)
    mask = np.zeros((n, n), dtype=z.data.dtype)
    np.fill_diagonal(mask, -np.inf)
    denom = logsumexp(sim + Tensor(mask), axis=1)
    num = sim[np.arange(n), pos]
    return mean(denom - num)
