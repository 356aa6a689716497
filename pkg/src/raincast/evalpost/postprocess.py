"""Probability ensembling and per-region threshold search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import binarize, confusion_counts, iou_from_counts

log = logging.getLogger(__name__)


def ensemble_mean(members, weights=None):
    if not members:
        raise ValueError("ensemble needs at least one member")
    arrs = [np.asarray(m, dtype=np.float64) for m in members]
    shape = arrs[0].shape
    for i, a in enumerate(arrs):
        if a.shape != shape:
            raise ValueError(f"member {i} has shape {a.shape}, expected {shape}")
    if weights is None:
        out = sum(arrs) / len(arrs)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(arrs),) or np.any(w < 0) or abs(w.sum() - 1) > 1e-6:
            raise ValueError("weights must be one non-negative value per member summing to 1")
        out = sum(wi * a for wi, a in zip(w, arrs))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def default_grid():
    # integer construction avoids float drift across the 91 grid points
    return [round(i / 100, 2) for i in range(5, 96)]


def _check_grid(grid):
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("threshold grid is empty")
    if any(not 0 < g < 1 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be strictly ascending inside (0, 1)")
    return grid


@dataclass
class ThresholdMap:
    thresholds: dict                              # region -> threshold
    grid: list = field(default_factory=default_grid)
    curves: dict = field(default_factory=dict)    # region -> IoU per grid point
    tie_break: str = "smallest"

    def iou_at_threshold(self, region):
        return self.curves[region][self.grid.index(self.thresholds[region])]

    def to_dict(self):
        return {"thresholds": self.thresholds, "grid": self.grid, "curves": self.curves,
                "tie_break": self.tie_break}

    @classmethod
    def from_dict(cls, d):
        return cls(thresholds={k: float(v) for k, v in d["thresholds"].items()},
                   grid=[float(g) for g in d["grid"]],
                   curves={k: [float(x) for x in v] for k, v in d.get("curves", {}).items()},
                   tie_break=d.get("tie_break", "smallest"))


def iou_curve(probs, truth, grid):
    probs = np.asarray(probs)
    out = []
    for t in grid:
        tp, fp, fn = confusion_counts(binarize(probs, t), truth)
        out.append(iou_from_counts(int(tp), int(fp), int(fn)))
    return out


def optimize_thresholds(probs, truth, region_ids, grid=None, regions=None):
    """Per-region grid argmax of IoU; ties resolve to the smallest threshold."""
    grid = _check_grid(default_grid() if grid is None else grid)
    probs, truth = np.asarray(probs), np.asarray(truth)
    if probs.shape != truth.shape:
        raise ValueError(f"probs {probs.shape} and truth {truth.shape} differ")
    region_ids = np.asarray(region_ids)
    if region_ids.shape != probs.shape[:1]:
        raise ValueError("need one region id per sample")
    wanted = list(dict.fromkeys(region_ids.tolist())) if regions is None else list(regions)
    thresholds, curves = {}, {}
    for rid in wanted:
        sel = region_ids == rid
        if not sel.any():
            log.warning("region %s has no samples; omitted from threshold map", rid)
            continue
        curve = iou_curve(probs[sel], truth[sel], grid)
        best = int(np.argmax(curve))          # first maximum = smallest threshold
        thresholds[rid] = grid[best]
        curves[rid] = curve
    return ThresholdMap(thresholds, grid, curves)


def apply_thresholds(probs, region_ids, tmap):
    probs = np.asarray(probs)
    region_ids = np.asarray(region_ids)
    missing = sorted(set(region_ids.tolist()) - set(tmap.thresholds))
    if missing:
        raise KeyError(f"no threshold for regions {missing}")
    thr = np.array([tmap.thresholds[r] for r in region_ids.tolist()])
    return binarize(probs, thr.reshape((-1,) + (1,) * (probs.ndim - 1)))
