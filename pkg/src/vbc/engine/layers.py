"""Thin layer objects owning Parameters; topology lives in vbc.models."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter, Tensor


class Conv3d:
    """Same-padded conv; He-style uniform fan-in init, zero bias."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, name: str, dtype):
        if cin < 1 or cout < 1:
            raise ValueError(f"{name}: conv needs positive channel counts, got {cin}->{cout}")
        bound = np.sqrt(6.0 / (cin * k**3))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k, k)).astype(dtype)
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(cout, dtype=dtype), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


class InstanceNorm3d:
    def __init__(self, channels: int, name: str, dtype, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.instance_norm(x, self.gamma, self.beta, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]


class ConvNorm:
    """conv -> instance norm, optionally -> relu."""

    def __init__(self, cin, cout, k, rng, name, dtype, activation: bool = True):
        self.conv = Conv3d(cin, cout, k, rng, name, dtype)
        self.norm = InstanceNorm3d(cout, name, dtype)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        t = self.norm(self.conv(x))
        return ops.relu(t) if self.activation else t

    def parameters(self):
        return self.conv.parameters() + self.norm.parameters()
