"""Minimal layer containers: parameters are named by their attribute path."""
from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import tensor as T
from .rng import SplitMix64
from .tensor import Parameter, RunningStats, Tensor


class Module:
    training = True

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for k, p in self._params.items():
            yield prefix + k, p
        for k, m in self._children.items():
            yield from m.named_parameters(f"{prefix}{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for k, m in self._children.items():
            yield from m.named_buffers(f"{prefix}{k}.")

    def modules(self):
        yield self
        for m in self._children.values():
            yield from m.modules()

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for k, m in self._children.items():
            yield from m.named_modules(f"{prefix}{k}.")

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def assign_names(self, prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self


class ModuleDict(Module):
    def __init__(self, items: Dict[str, Module]):
        super().__init__()
        for k, v in items.items():
            setattr(self, str(k), v)

    def __getitem__(self, key):
        return self._children[str(key)]

    def __contains__(self, key):
        return str(key) in self._children


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: SplitMix64, stride: int = 1, pad=None, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        bound = 1.0 / np.sqrt(cin * k * k)
        self.weight = Parameter(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype))
        if bias:
            self.bias = Parameter(rng.uniform(-bound, bound, (cout,)).astype(dtype))
        else:
            object.__setattr__(self, "bias", None)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm2d(Module):
    def __init__(self, c: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(c, dtype=dtype))
        self.beta = Parameter(np.zeros(c, dtype=dtype))
        self.stats = RunningStats.identity(c, dtype)
        self.eps = eps
        self.momentum = momentum

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.stats.mean
        yield prefix + "running_var", self.stats.var

    def __call__(self, x: Tensor) -> Tensor:
        mode = "train" if self.training else "eval"
        return T.batchnorm2d(x, self.gamma, self.beta, self.stats, mode, self.eps, self.momentum)


def count_parameters(module: Module) -> int:
    return int(sum(p.size for p in module.parameters()))
