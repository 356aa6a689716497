"""Differentiable segmentation losses for imbalanced binary rain masks.

All losses reduce over the full volume they are given (batch x lead time x
pixels) unless ``per_frame`` is set, in which case the loss is computed per
(sample, lead time) frame of a [N, K, H, W] input and averaged.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

KINDS = {
    "bce": ("bce",),
    "iou": ("iou",),
    "dice": ("dice",),
    "focal": ("focal",),
    "iou+dice": ("iou", "dice"),
    "iou+dice+focal": ("iou", "dice", "focal"),
}

_CLAMP = 1e-7


@dataclass
class LossSpec:
    kind: str = "iou+dice"
    weights: list = field(default_factory=list)
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    smooth_eps: float = 1.0
    per_frame: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {sorted(KINDS)}")
        n = len(KINDS[self.kind])
        if not self.weights:
            self.weights = [1.0] * n
        self.weights = [float(w) for w in self.weights]
        if len(self.weights) != n:
            raise ValueError(f"{self.kind} takes {n} weights, got {len(self.weights)}")
        if any(w < 0 for w in self.weights):
            raise ValueError("loss weights must be non-negative")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if not 0 < self.focal_alpha <= 1:
            raise ValueError("focal_alpha must be in (0, 1]")
        if self.smooth_eps <= 0:
            raise ValueError("smooth_eps must be > 0")

    @property
    def components(self):
        return KINDS[self.kind]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _check(pred, target):
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return target


def _reduce_axes(pred, per_frame):
    if per_frame:
        if pred.ndim < 3:
            raise ValueError("per_frame losses need [N, K, ...] inputs")
        return tuple(range(2, pred.ndim))
    return None


def soft_iou_loss(pred, target, eps=1.0, per_frame=False):
    """1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps)."""
    target = _check(pred, target)
    axes = _reduce_axes(pred, per_frame)
    inter = (pred * target).sum(axis=axes)
    union = pred.sum(axis=axes) + target.sum(axis=axes) - inter
    loss = 1.0 - (inter + eps) / (union + eps)
    return loss.mean() if per_frame else loss


def dice_loss(pred, target, eps=1.0, per_frame=False):
    """1 - (2 sum p*g + eps) / (sum p + sum g + eps)."""
    target = _check(pred, target)
    axes = _reduce_axes(pred, per_frame)
    inter = (pred * target).sum(axis=axes)
    denom = pred.sum(axis=axes) + target.sum(axis=axes)
    loss = 1.0 - (inter * 2.0 + eps) / (denom + eps)
    return loss.mean() if per_frame else loss


def focal_loss(pred, target, gamma=2.0, alpha=0.25):
    """Mean of -alpha_t (1 - p_t)^gamma log p_t."""
    target = _check(pred, target)
    p = T.clamp(pred, _CLAMP, 1 - _CLAMP)
    g = target
    pt = p * g + (1.0 - p) * (1.0 - g)
    at = g * alpha + (1.0 - g) * (1.0 - alpha)
    modulator = (1.0 - pt) ** gamma if gamma else 1.0
    return (-(at * modulator * T.log(pt))).mean()


def bce_loss(pred, target):
    target = _check(pred, target)
    p = T.clamp(pred, _CLAMP, 1 - _CLAMP)
    return (-(target * T.log(p) + (1.0 - target) * T.log(1.0 - p))).mean()


def component_loss(name, spec, pred, target):
    if name == "iou":
        return soft_iou_loss(pred, target, spec.smooth_eps, spec.per_frame)
    if name == "dice":
        return dice_loss(pred, target, spec.smooth_eps, spec.per_frame)
    if name == "focal":
        return focal_loss(pred, target, spec.focal_gamma, spec.focal_alpha)
    if name == "bce":
        return bce_loss(pred, target)
    raise ValueError(f"unknown loss component {name!r}")


def combined_loss(spec, pred, target):
    """Weighted sum of the components named by ``spec.kind``."""
    total = None
    for name, w in zip(spec.components, spec.weights):
        term = component_loss(name, spec, pred, target) * w
        total = term if total is None else total + term
    return total
