"""Adam and AdamW with bias correction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, StateError

NO_DECAY_SUFFIXES = (".b", ".gamma", ".beta", ".bq", ".bk", ".bv", ".bo")


def decays(name: str) -> bool:
    """Weight decay applies to conv/linear weights only, never to biases or norm affines."""
    return not name.endswith(NO_DECAY_SUFFIXES)


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ArgumentError(f"optimizer kind must be 'adam' or 'adamw', got {self.kind!r}")
        if not self.lr > 0:
            raise ArgumentError(f"learning rate must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ArgumentError("beta1 and beta2 must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ArgumentError("weight decay must be nonnegative")
        if self.kind == "adam" and self.weight_decay:
            raise ArgumentError("weight decay is only defined for adamw here")


def opt_step(state: OptimizerState, params) -> None:
    """One in-place update of every ``(name, Tensor)`` in ``params``.

    AdamW shrinks decayed weights by ``lr * wd`` before the Adam term.
    """
    named = list(params.items() if isinstance(params, dict) else params)
    for name, p in named:
        if p.grad is None:
            raise StateError(f"parameter {name} has no gradient; call backward first")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    step = state.lr * math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    # eps is applied to the bias-corrected second moment
    eps_hat = state.eps * math.sqrt(1.0 - b2 ** t)
    for name, p in named:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.kind == "adamw" and state.weight_decay and decays(name):
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= step * m / (np.sqrt(v) + eps_hat)


def make_optimizer(kind: str, lr: float, weight_decay: float | None = None, **kw) -> OptimizerState:
    if weight_decay is None:
        weight_decay = 1e-4 if kind == "adamw" else 0.0
    return OptimizerState(kind=kind, lr=lr, weight_decay=weight_decay, **kw)

