"""SGD with momentum, AdamW, and learning-rate schedules.

The ``*_step`` functions are the functional core operating on plain arrays;
the ``SGD``/``AdamW`` classes bind them to a list of :class:`Tensor`
parameters and read gradients from ``Tensor.grad``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str
    buffers: dict[str, list[np.ndarray]] = field(default_factory=dict)
    step: int = 0


def _check(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")


def sgd_step(params, grads, state: OptimizerState, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """In-place SGD update; momentum buffer follows ``b = momentum * b + g``."""
    _check(params, grads)
    bufs = state.buffers.setdefault("momentum", [None] * len(params))
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay:
            g = g + weight_decay * p
        if momentum:
            bufs[i] = g.copy() if bufs[i] is None else momentum * bufs[i] + g
            g = bufs[i]
        p -= lr * g
    state.step += 1


def adamw_step(params, grads, state: OptimizerState, lr: float, betas=(0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.01) -> None:
    """In-place AdamW update with decoupled weight decay."""
    _check(params, grads)
    b1, b2 = betas
    m = state.buffers.setdefault("exp_avg", [np.zeros_like(p) for p in params])
    v = state.buffers.setdefault("exp_avg_sq", [np.zeros_like(p) for p in params])
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m[i] *= b1
        m[i] += (1.0 - b1) * g
        v[i] *= b2
        v[i] += (1.0 - b2) * g * g
        p -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def schedule(kind: str, base_lr: float, step: int, total: int) -> float:
    """Learning rate at ``step`` (0-based) of ``total`` under a named schedule.

    ``linear`` reaches zero on the final step; ``cosine`` likewise.
    """
    if kind == "constant" or total <= 1:
        return base_lr
    frac = min(step / (total - 1), 1.0)
    if kind == "linear":
        return base_lr * (1.0 - frac)
    if kind == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    raise ValueError(f"unknown schedule {kind!r}")


class _Optimizer:
    def __init__(self, params, lr: float):
        self.params: list[Tensor] = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self):
        return [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]


class SGD(_Optimizer):
    def __init__(self, params, lr: float = 0.1, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state = OptimizerState("sgd")

    def step(self, lr: float | None = None) -> None:
        sgd_step([p.data for p in self.params], self._grads(), self.state,
                 self.lr if lr is None else lr, self.momentum, self.weight_decay)


class AdamW(_Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptimizerState("adamw")

    def step(self, lr: float | None = None) -> None:
        adamw_step([p.data for p in self.params], self._grads(), self.state,
                   self.lr if lr is None else lr, self.betas, self.eps, self.weight_decay)
