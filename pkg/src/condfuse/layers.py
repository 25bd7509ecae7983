"""Parameter containers and the few learned layer types the networks use."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .imageops import conv2d
from .tensor import Parameter, default_dtype, matmul, reshape

def he_init(rng, shape, fan_in):
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(default_dtype())


def glorot_init(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape).astype(default_dtype())


class Module:
    """Base container; parameters are collected by attribute path."""

    def _children(self):
        for attr, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield attr, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{attr}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            path = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path)

    def parameters(self):
        """Registry mapping unique name paths to Parameters."""
        reg = {}
        for name, p in self.named_parameters():
            if name in reg:
                raise ContractError(f"duplicate parameter name {name}")
            p.name = name
            reg[name] = p
        return reg

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, dilation=1, padding=None, bias=True):
        if padding is None:
            padding = (k // 2) * dilation
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.kernel = Parameter(he_init(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = Parameter(np.zeros(c_out, dtype=default_dtype())) if bias else None

    def __call__(self, x):
        y = conv2d(x, self.kernel, dilation=self.dilation, padding=self.padding, stride=self.stride)
        if self.bias is not None:
            shape = (1, -1, 1, 1) if y.ndim == 4 else (-1, 1, 1)
            y = y + reshape(self.bias, shape)
        return y


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.n_in = n_in
        self.n_out = n_out
        self.weight = Parameter(glorot_init(rng, (n_in, n_out), n_in, n_out))
        self.bias = Parameter(np.zeros(n_out, dtype=default_dtype())) if bias else None

    def __call__(self, x):
        lead = x.shape[:-1]
        flat = x.reshape((-1, self.n_in)) if x.ndim != 2 else x
        y = matmul(flat, self.weight)
        if self.bias is not None:
            y = y + reshape(self.bias, (1, self.n_out))
        if x.ndim != 2:
            y = y.reshape(lead + (self.n_out,))
        return y
