"""Binary-mask IoU with per-lead-time and per-region breakdowns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GLOBAL = -1


@dataclass(frozen=True)
class MetricsRecord:
    scope: object          # GLOBAL, a lead-time index, or a region id
    tp: int
    fp: int
    fn: int

    @property
    def iou(self):
        return iou_from_counts(self.tp, self.fp, self.fn)

    def __add__(self, other):
        return MetricsRecord(self.scope, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def iou_from_counts(tp, fp, fn):
    denom = tp + fp + fn
    return 1.0 if denom == 0 else tp / denom


def _masks(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    return pred.astype(bool), truth.astype(bool)


def confusion_counts(pred, truth, axis=None):
    p, g = _masks(pred, truth)
    tp = np.sum(p & g, axis=axis, dtype=np.int64)
    fp = np.sum(p & ~g, axis=axis, dtype=np.int64)
    fn = np.sum(~p & g, axis=axis, dtype=np.int64)
    return tp, fp, fn


def iou_binary(pred, truth, scope=GLOBAL):
    tp, fp, fn = confusion_counts(pred, truth)
    return MetricsRecord(scope, int(tp), int(fp), int(fn))


def binarize(probs, threshold):
    """``probs >= threshold``, comparing in the probabilities' own precision."""
    probs = np.asarray(probs)
    if np.issubdtype(probs.dtype, np.floating):
        threshold = np.asarray(threshold, dtype=probs.dtype)
    return probs >= threshold


def iou_series(probs, truth, threshold=0.5):
    """K per-lead-time records followed by the global (micro-averaged) record."""
    probs = np.asarray(probs)
    if probs.ndim != 4:
        raise ValueError(f"expected [N, K, H, W] probabilities, got shape {probs.shape}")
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    tp, fp, fn = confusion_counts(binarize(probs, threshold), truth, axis=(0, 2, 3))
    records = [MetricsRecord(k, int(tp[k]), int(fp[k]), int(fn[k])) for k in range(probs.shape[1])]
    records.append(MetricsRecord(GLOBAL, int(tp.sum()), int(fp.sum()), int(fn.sum())))
    return records


def masks_series(masks, truth):
    """As :func:`iou_series` for already-binarized predictions."""
    tp, fp, fn = confusion_counts(masks, truth, axis=(0, 2, 3))
    records = [MetricsRecord(k, int(tp[k]), int(fp[k]), int(fn[k])) for k in range(tp.shape[0])]
    records.append(MetricsRecord(GLOBAL, int(tp.sum()), int(fp.sum()), int(fn.sum())))
    return records


def region_records(masks, truth, region_ids):
    """One record per region (in first-appearance order) from binary masks."""
    region_ids = np.asarray(region_ids)
    out = []
    for rid in dict.fromkeys(region_ids.tolist()):
        sel = region_ids == rid
        tp, fp, fn = confusion_counts(np.asarray(masks)[sel], np.asarray(truth)[sel])
        out.append(MetricsRecord(rid, int(tp), int(fp), int(fn)))
    return out


def mean_region_iou(records):
    return float(np.mean([r.iou for r in records])) if records else float("nan")
