"""Parameter containers for the ops in ``ops``."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Parameter, default_dtype


def kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


def xavier_uniform(rng, shape, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


def _zeros(shape):
    return np.zeros(shape, dtype=default_dtype())


class Module:
    """Tracks Parameters, sub-modules (also inside lists) and numpy buffers."""

    training = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, (Parameter, Module)):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for k, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{k}", item

    def named_parameters(self, prefix=""):
        for name, val in self._children():
            full = f"{prefix}{name}"
            if isinstance(val, Parameter):
                yield full, val
            else:
                yield from val.named_parameters(full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, buf in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", buf
        for name, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{name}.")

    def state(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.named_parameters()}
        out.update({k: b for k, b in self.named_buffers()})
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        current = self.state()
        missing = sorted(set(current) - set(state))
        extra = sorted(set(state) - set(current))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, arr in current.items():
            if arr.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {state[k].shape}")
            arr[...] = state[k]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        self.training = mode
        for _, val in self._children():
            if isinstance(val, Module):
                val.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Dense(Module):
    def __init__(self, n_in, n_out, rng, bias=True, init="kaiming"):
        super().__init__()
        if init == "xavier":
            w = xavier_uniform(rng, (n_in, n_out), n_in, n_out)
        else:
            w = kaiming_uniform(rng, (n_in, n_out), n_in)
        self.weight = Parameter(w)
        self.bias = Parameter(_zeros(n_out)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        return ops.dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = Parameter(_zeros(c_out))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, output_padding=0):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (c_in, c_out, k, k), c_in * k * k))
        self.bias = Parameter(_zeros(c_out))
        self.stride, self.padding, self.output_padding = stride, padding, output_padding

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, k), c_in * k))
        self.bias = Parameter(_zeros(c_out))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, n, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(n, dtype=default_dtype()))
        self.beta = Parameter(_zeros(n))
        self._buffers = {"running_mean": _zeros(n), "running_var": np.ones(n, dtype=default_dtype())}
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ops.batchnorm(x, self.gamma, self.beta, self._buffers["running_mean"],
                             self._buffers["running_var"], self.training, self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        super().__init__()
        self.p = p
        self._rng = rng

    def forward(self, x):
        return ops.dropout(x, self.p, self.training, self._rng)


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class MultiHeadAttention(Module):
    """Cross attention: queries (B, Lq, D), keys/values (B, Lk, D)."""

    def __init__(self, dim, heads, rng, temperature=None, dropout=0.0, dropout_rng=None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"attention width {dim} is not divisible by {heads} heads")
        self.dim, self.heads, self.temperature = dim, heads, temperature
        self.wq = Dense(dim, dim, rng, init="xavier")
        self.wk = Dense(dim, dim, rng, init="xavier")
        self.wv = Dense(dim, dim, rng, init="xavier")
        self.wo = Dense(dim, dim, rng, init="xavier")
        self.drop = Dropout(dropout, dropout_rng)

    def forward(self, q, k, v):
        out = ops.multihead_attention(q, k, v, self.wq.weight, self.wk.weight, self.wv.weight,
                                      self.wo.weight, self.heads, self.wq.bias, self.wk.bias,
                                      self.wv.bias, self.wo.bias, self.temperature)
        return self.drop(out)


def mlp(widths, rng, batchnorm=False, dropout=0.0, dropout_rng=None, final_activation=True):
    """Dense stack with ReLU (optionally BN and dropout after each hidden layer)."""
    layers = []
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(Dense(a, b, rng))
        last = k == len(widths) - 2
        if last and not final_activation:
            break
        if batchnorm:
            layers.append(BatchNorm(b))
        layers.append(ReLU())
        if dropout:
            layers.append(Dropout(dropout, dropout_rng))
    return Sequential(*layers)
