"""Optimiser and training-control utilities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor

MIN_DELTA = 1e-6


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place.  Params without a gradient
    are treated as having a zero gradient."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_global_norm(params: Mapping[str, Tensor], max_norm: float = 0.5) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the scale factor that was applied (1.0 when untouched).
    """
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params.values():
        if p.grad is not None:
            p.grad = p.grad * scale
    return scale


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without an improvement larger than ``min_delta``."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 5,
                 min_delta: float = MIN_DELTA):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, loss: float) -> float:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.patience > 0 and self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def plateau_scheduler(history: Sequence[float], lr: float, factor: float = 0.5,
                      patience: int = 5) -> float:
    """Learning rate after replaying ``history`` through a :class:`PlateauScheduler`."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    sched = PlateauScheduler(lr, factor, patience)
    for loss in history:
        sched.step(float(loss))
    return sched.lr


def best_epoch(history: Sequence[float], min_delta: float = MIN_DELTA) -> int:
    best, idx = np.inf, 0
    for i, loss in enumerate(history):
        if loss < best - min_delta:
            best, idx = loss, i
    return idx


def early_stop(history: Sequence[float], patience: int = 50) -> bool:
    """True once the best epoch lies more than ``patience`` epochs back."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    return (len(history) - 1) - best_epoch(history) > patience
