"""Adam with the AMSGrad running maximum and L2 weight decay folded into the gradient."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import ContractError
from .tensor import Parameter


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    v_max: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_amsgrad_step(
    params: List[Parameter],
    state: AdamState,
    lr: float = 1e-4,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 1e-4,
):
    """One in-place update of every parameter in ``params`` (each rebinds to a new array)."""
    for p in params:
        if p.grad is None:
            raise ContractError(f"adam: parameter {p.name!r} has no gradient")
    b1, b2 = betas
    state.t += 1
    t = state.t
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p in params:
        x = p.data
        g = p.grad.astype(x.dtype)
        if weight_decay:
            g = g + weight_decay * x
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(x)
            state.v[p.name] = np.zeros_like(x)
            state.v_max[p.name] = np.zeros_like(x)
        m = b1 * state.m[p.name] + (1 - b1) * g
        v = b2 * state.v[p.name] + (1 - b2) * g * g
        v_max = np.maximum(state.v_max[p.name], v)
        state.m[p.name], state.v[p.name], state.v_max[p.name] = m, v, v_max
        denom = np.sqrt(v_max / bc2) + eps
        p.data = (x - lr * (m / bc1) / denom).astype(x.dtype)


class Adam:
    """Stateful wrapper holding the trainable parameter list and hyperparameters."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.state = AdamState()

    def step(self):
        adam_amsgrad_step(self.params, self.state, self.lr, self.betas, self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
