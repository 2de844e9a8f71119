"""Small layer library on top of :mod:`ifsynth.ops`."""

import contextlib

import numpy as np

from . import ops
from .tensor import Parameter


class Module:
    """Container that discovers parameters and submodules from its attributes.

    Registration order is attribute assignment order, so parameter listings
    are stable across runs.
    """

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


@contextlib.contextmanager
def frozen(module):
    """Treat a module's parameters as constants for graphs built inside the block."""
    params = module.parameters()
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield module
    finally:
        for p, r in zip(params, prev):
            p.requires_grad = r


def _normal(rng, shape, std):
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, pad=0, pad_mode="zero", std=0.02):
        self.weight = Parameter(_normal(rng, (cout, cin, k, k), std))
        self.bias = Parameter(np.zeros(cout, np.float32))
        self.stride = stride
        self.pad = pad
        self.pad_mode = pad_mode

    def forward(self, x):
        if self.pad_mode == "reflect" and self.pad:
            return ops.conv2d(ops.pad_reflect(x, self.pad), self.weight, self.bias, self.stride, 0)
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, pad=0, std=0.02):
        self.weight = Parameter(_normal(rng, (cin, cout, k, k), std))
        self.bias = Parameter(np.zeros(cout, np.float32))
        self.stride = stride
        self.pad = pad

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)


class InstanceNorm(Module):
    def __init__(self, channels, eps=1e-5):
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))
        self.eps = eps

    def forward(self, x):
        return ops.instance_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, rng, fin, fout, std=0.02):
        self.weight = Parameter(_normal(rng, (fout, fin), std))
        self.bias = Parameter(np.zeros(fout, np.float32))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


def assign_names(module, prefix):
    """Stamp dotted path names (``F.conv1.weight``) onto every parameter."""
    seen = set()
    for name, p in module.named_parameters(prefix + "."):
        if name in seen:
            raise ValueError(f"duplicate parameter name {name}")
        seen.add(name)
        p.name = name
