"""Thin layer objects that register their tensors in a ParamStore."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore, ops, uniform_fan_in


class Linear:
    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.fan_in, self.fan_out = fan_in, fan_out
        self.weight = store.add(f"{name}.weight", uniform_fan_in(rng, (fan_out, fan_in), fan_in))
        self.bias = store.add(f"{name}.bias", uniform_fan_in(rng, (fan_out,), fan_in)) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv:
    """2-D or 3-D convolution, chosen by kernel rank."""

    def __init__(self, store, name, c_in, c_out, kernel, rng, stride=1, padding=0, bias=True):
        kernel = tuple(kernel)
        self.nd = len(kernel)
        self.stride, self.padding = stride, padding
        fan_in = c_in * int(np.prod(kernel))
        self.weight = store.add(f"{name}.weight", uniform_fan_in(rng, (c_out, c_in) + kernel, fan_in))
        self.bias = store.add(f"{name}.bias", uniform_fan_in(rng, (c_out,), fan_in)) if bias else None

    def __call__(self, x):
        fn = ops.conv2d if self.nd == 2 else ops.conv3d
        return fn(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm:
    def __init__(self, store, name, channels):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels))
        self.tracked = store.add_buffer(f"{name}.tracked", np.zeros(1))

    def __call__(self, x, training: bool):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training, tracked=self.tracked)


class LayerNorm:
    def __init__(self, store, name, width):
        self.gamma = store.add(f"{name}.gamma", np.ones(width))
        self.beta = store.add(f"{name}.beta", np.zeros(width))

    def __call__(self, x):
        return ops.layernorm(x, self.gamma, self.beta)
