"""Permutation band importance: shuffle one band across samples, measure the IoU drop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import binarize, iou_binary


@dataclass
class BandImportance:
    band_label: str
    baseline_iou: float
    permuted_iou: float

    @property
    def delta(self):
        return self.baseline_iou - self.permuted_iou


@dataclass
class PermutationReport:
    bands: list = field(default_factory=list)   # BandImportance per band, input order
    seed: int = 0
    threshold: float = 0.5

    @property
    def baseline_iou(self):
        return self.bands[0].baseline_iou if self.bands else float("nan")

    def deltas(self):
        return {b.band_label: b.delta for b in self.bands}

    def ranking(self):
        return sorted(self.bands, key=lambda b: -b.delta)


def seeded_permutation(n, seed):
    return np.random.default_rng(seed).permutation(n)


def _score(predict_fn, x, truth, threshold):
    return iou_binary(binarize(predict_fn(x), threshold), truth).iou


def permutation_importance(predict_fn, inputs, truth, band_labels, seed=0, threshold=0.5,
                           bands=None, perm_fn=seeded_permutation):
    """Cross-sample permutation of each band's whole [T, H, W] block.

    ``predict_fn`` maps inputs [N, B, T, H, W] to probabilities shaped like
    ``truth``. ``perm_fn(n, seed)`` supplies the sample permutation; one
    permutation is drawn per report and reused for every band.
    """
    inputs = np.asarray(inputs)
    n_bands = inputs.shape[1]
    if len(band_labels) != n_bands:
        raise ValueError(f"{len(band_labels)} labels for {n_bands} input bands")
    bands = range(n_bands) if bands is None else list(bands)
    for b in bands:
        if not 0 <= b < n_bands:
            raise IndexError(f"band index {b} out of range for {n_bands} bands")
    baseline = _score(predict_fn, inputs, truth, threshold)
    perm = np.asarray(perm_fn(inputs.shape[0], seed))
    report = PermutationReport(seed=seed, threshold=threshold)
    for b in bands:
        shuffled = inputs.copy()
        shuffled[:, b] = inputs[perm, b]
        report.bands.append(BandImportance(band_labels[b], baseline,
                                           _score(predict_fn, shuffled, truth, threshold)))
    return report
