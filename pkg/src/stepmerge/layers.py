"""Parameter containers and the small layers the merge blocks are built from."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import conv
from .rng import Rng
from .tensor import COMPUTE, Parameter, Tensor, batchnorm2d, linear


def uniform_init(rng: Rng, shape, fan_in: int, dtype=COMPUTE) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape, dtype=dtype)


class Module:
    """Minimal parameter tree. Attributes that are Parameters, Modules or
    lists of Modules are discovered in assignment order."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            else:
                yield from val.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", val
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def bind_names(self, prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, mode: bool = True):
        self.training = mode
        for _, val in self._children():
            if isinstance(val, Module):
                val.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        bufs = getattr(self, "_buffers", None)
        if bufs:
            for k in bufs:
                bufs[k] = bufs[k].astype(dtype)
        for _, val in self._children():
            if isinstance(val, Module):
                val._cast_buffers(dtype)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: Rng, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (cin, cout), cin), "weight")
        self.bias = Parameter(np.zeros(cout, COMPUTE), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class DwConv(Module):
    def __init__(self, channels: int, k: int, rng: Rng, stride: int = 1,
                 padding: Optional[int] = None, bias: bool = True):
        self.k, self.stride = k, stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Parameter(uniform_init(rng, (k, k, channels), k * k), "weight")
        self.bias = Parameter(np.zeros(channels, COMPUTE), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv.dwconv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: Rng, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        self.stride, self.padding = stride, padding
        self.weight = Parameter(uniform_init(rng, (k, k, cin, cout), k * k * cin), "weight")
        self.bias = Parameter(np.zeros(cout, COMPUTE), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.weight = Parameter(np.ones(channels, COMPUTE), "weight")
        self.bias = Parameter(np.zeros(channels, COMPUTE), "bias")
        self._buffers = {
            "running_mean": np.zeros(channels, COMPUTE),
            "running_var": np.ones(channels, COMPUTE),
        }

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm2d(x, self.weight, self.bias, self._buffers["running_mean"],
                           self._buffers["running_var"], self.training)
