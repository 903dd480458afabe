"""Parameters, modules and the few layers the pipeline needs."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A learnable leaf array. ``name`` is assigned when the owning model is built."""

    __slots__ = ("name", "init")

    def __init__(self, data, init: str = "custom", name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.init = init


def he_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Parameter:
    std = gain * math.sqrt(2.0 / fan_in)
    return Parameter(rng.normal(0.0, std, size=shape), init=f"he_normal(fan_in={fan_in},gain={gain})")


def zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape), init="zeros")


def ones(shape) -> Parameter:
    return Parameter(np.ones(shape), init="ones")


class Module:
    """Minimal container: parameters are discovered from attributes recursively."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


def _walk(value, path: str):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")


class Conv2d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 padding: int | None = None, bias: bool = True, gain: float = 1.0):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, gain)
        self.bias = zeros((out_ch,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, rng, in_features: int, out_features: int, bias: bool = True,
                 gain: float = 1.0):
        self.weight = he_normal(rng, (in_features, out_features), in_features, gain)
        self.bias = zeros((out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = ones((width,))
        self.beta = zeros((width,))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)
