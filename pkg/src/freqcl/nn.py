"""Module containers and the layers the networks are built from.

Every layer can also be *traced* symbolically: given a per-sample input
shape it reports its output shape, multiply-accumulate count and
elementwise cost without touching data. The counters in
:mod:`freqcl.model` are built on these traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import Parameter, get_default_dtype


@dataclass
class TraceRecord:
    kind: str
    out_shape: tuple
    macs: int = 0
    flops: int = 0


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def add(self, kind, out_shape, macs=0, flops=0):
        self.records.append(TraceRecord(kind, tuple(out_shape), int(macs), int(flops)))
        return tuple(out_shape)

    @property
    def flops(self):
        return sum(r.flops for r in self.records)

    @property
    def macs(self):
        return sum(r.macs for r in self.records)

    @property
    def activation_elements(self):
        return sum(int(np.prod(r.out_shape)) for r in self.records)


class Module:
    """Minimal container: parameters, running-stat buffers and children are
    discovered from instance attributes in assignment order."""

    training = True

    def children(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def buffers(self):
        return [b for _, b in self.named_buffers()]

    def state_arrays(self):
        """Parameters then buffers, in construction order."""
        return [p.data for p in self.parameters()] + self.buffers()

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def train(self, mode=True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=False, rng=None):
        rng = np.random.default_rng(rng)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = padding

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def trace(self, shape, tr):
        c, h, w = shape
        k = self.weight.shape[2]
        oh = ops._conv_output_size(h, k, self.stride, self.padding)
        ow = ops._conv_output_size(w, k, self.stride, self.padding)
        out = (self.out_channels, oh, ow)
        macs = self.out_channels * oh * ow * c * k * k
        flops = 2 * macs + (self.out_channels * oh * ow if self.bias is not None else 0)
        return tr.add("conv", out, macs, flops)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batchnorm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )

    def trace(self, shape, tr):
        return tr.add("bn", shape, 0, 2 * int(np.prod(shape)))


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None):
        rng = np.random.default_rng(rng)
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)

    def trace(self, shape, tr):
        (d,) = shape
        k = self.weight.shape[0]
        return tr.add("linear", (k,), k * d, 2 * k * d + k)


def trace_relu(shape, tr):
    return tr.add("relu", shape, 0, int(np.prod(shape)))


def trace_add(shape, tr):
    return tr.add("add", shape, 0, int(np.prod(shape)))


def trace_pool(shape, tr):
    c = shape[0]
    return tr.add("avgpool", (c,), 0, int(np.prod(shape)))
