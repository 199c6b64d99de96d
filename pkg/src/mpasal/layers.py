from __future__ import annotations

import numpy as np

from .autodiff import Module, Parameter, Tensor, ops


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 gain: float = 2.0, zero: bool = False):
        std = 0.0 if zero else np.sqrt(gain / in_features)
        self.weight = Parameter(rng.normal(0.0, 1.0, (out_features, in_features)) * std)
        self.bias = Parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, zero: bool = False):
        fan_in = in_channels * kernel * kernel
        std = 0.0 if zero else np.sqrt(2.0 / fan_in)
        self.weight = Parameter(rng.normal(0.0, 1.0, (out_channels, in_channels, kernel, kernel)) * std)
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)
