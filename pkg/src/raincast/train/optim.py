"""Adam, global-norm clipping, plateau LR halving and early stopping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..tensor import Tensor


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, **kw):
        arrays = _arrays(params)
        return cls(m={k: np.zeros_like(a) for k, a in arrays.items()},
                   v={k: np.zeros_like(a) for k, a in arrays.items()}, **kw)


def _arrays(params):
    # ParamSet, dict of Tensors or dict of arrays
    items = params.params.items() if hasattr(params, "params") else params.items()
    return {k: t.data if isinstance(t, Tensor) else t for k, t in items}


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """One in-place Adam update with L2 decay folded into the gradient."""
    arrays = _arrays(params)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradients in {bad[:5]}{' ...' if len(bad) > 5 else ''}; "
                                 f"step {state.step} skipped")
    if set(grads) != set(arrays):
        raise KeyError(f"gradient/parameter names differ: {sorted(set(grads) ^ set(arrays))[:5]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads, max_norm):
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; return the factor."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for g in grads.values():
        g *= factor
    return factor


@dataclass
class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without a strictly lower loss."""

    lr: float
    patience: int = 2
    factor: float = 0.5
    best: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.patience < 1 or not 0 < self.factor < 1:
            raise ValueError("need lr > 0, patience >= 1 and factor in (0, 1)")

    def step(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


@dataclass
class EarlyStopping:
    patience: int = 10
    best: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def step(self, val_loss):
        """True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience
