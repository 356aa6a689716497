"""Dataset manifest, sliding-window index and batch assembly."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..tensor import read_tensor
from .synth import RegionSpec
from .transforms import binarize_rain, crop_center, normalize_bands

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Dataset files or manifest are missing, inconsistent or corrupt."""


@dataclass
class DatasetManifest:
    root: Path
    regions: list
    bands: list
    splits: dict
    norm_stats: dict
    files: dict
    synth: dict = field(default_factory=dict)

    @property
    def band_labels(self):
        return [b["label"] for b in self.bands]

    @property
    def region_ids(self):
        return [r.region_id for r in self.regions]

    def region(self, region_id):
        for r in self.regions:
            if r.region_id == region_id:
                return r
        raise KeyError(f"unknown region {region_id!r}")

    def held_out_regions(self):
        return [r for r in self.region_ids if self.splits[r]["held_out"]]

    def to_dict(self):
        return {
            "regions": [asdict(r) for r in self.regions],
            "bands": self.bands,
            "splits": self.splits,
            "norm_stats": self.norm_stats,
            "files": self.files,
            "synth": self.synth,
        }

    def validate(self, parse=False):
        for rid in self.region_ids:
            entry = self.files.get(rid)
            if entry is None:
                raise DataError(f"manifest has no file index for region {rid}")
            paths = entry["bands"] + entry["rain"] + [entry["static"]]
            for rel in paths:
                p = self.root / rel
                if not p.is_file():
                    raise DataError(f"indexed file missing: {p}")
                if parse:
                    read_tensor(p)
            s = self.splits[rid]
            edges = [s["train"][0], s["train"][1], s["val"][1], s["test"][1]]
            if edges != sorted(edges) or s["val"][0] != s["train"][1] or s["test"][0] != s["val"][1]:
                raise DataError(f"region {rid}: splits overlap or are out of order: {s}")


def load_manifest(root):
    root = Path(root)
    path = root / "manifest.json"
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no manifest.json under {root}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from None
    missing = {"regions", "bands", "splits", "norm_stats", "files"} - set(d)
    if missing:
        raise DataError(f"manifest {path} lacks keys {sorted(missing)}")
    m = DatasetManifest(root=root, regions=[RegionSpec(**r) for r in d["regions"]],
                        bands=d["bands"], splits=d["splits"], norm_stats=d["norm_stats"],
                        files=d["files"], synth=d.get("synth", {}))
    m.validate()
    return m


class WindowRef(NamedTuple):
    region: str
    split: str
    start: int     # first input slot; targets follow the t_in input slots


def window_count(length, t_in, t_out, stride=1):
    if stride < 1:
        raise ValueError("stride must be >= 1")
    span = t_in + t_out
    return 0 if length < span else (length - span) // stride + 1


def window_starts(lo, hi, t_in, t_out, stride=1):
    return range(lo, lo + window_count(hi - lo, t_in, t_out, stride) * stride, stride)


def window_index(manifest, t_in, t_out, stride=1, splits=SPLITS, exclude_regions=(),
                 include_held_out=True):
    """Windows per region and split; a window never crosses a split boundary.

    Held-out regions never contribute training windows.
    """
    if isinstance(splits, str):
        splits = (splits,)
    out = []
    for rid in manifest.region_ids:
        if rid in exclude_regions:
            continue
        held = manifest.splits[rid]["held_out"]
        if held and not include_held_out:
            continue
        for split in splits:
            if split == "train" and held:
                continue
            lo, hi = manifest.splits[rid][split]
            out.extend(WindowRef(rid, split, s) for s in window_starts(lo, hi, t_in, t_out, stride))
    return out


class WindowDataset:
    """Loads region timelines on first use and assembles model-ready batches."""

    def __init__(self, manifest, t_in, t_out, crop, threshold=None):
        self.manifest = manifest
        self.t_in, self.t_out, self.crop = t_in, t_out, crop
        self.threshold = manifest.synth.get("rain_threshold", 0.2) if threshold is None else threshold
        self._cache = {}

    def _region(self, rid):
        if rid not in self._cache:
            entry = self.manifest.files[rid]
            root = self.manifest.root
            try:
                bands = np.stack([read_tensor(root / p) for p in entry["bands"]])
                rain = np.stack([read_tensor(root / p) for p in entry["rain"]])
            except (OSError, ValueError) as exc:
                raise DataError(f"region {rid}: {exc}") from exc
            self._cache[rid] = (bands, rain)
        return self._cache[rid]

    def raw(self, ref):
        """Un-normalized input [B, t_in, S, S] and rain rate [t_out, F, F]."""
        bands, rain = self._region(ref.region)
        s = ref.start
        x = bands[s:s + self.t_in].transpose(1, 0, 2, 3)
        y = rain[s + self.t_in:s + self.t_in + self.t_out]
        return x, y

    def batch(self, refs):
        xs, ys = zip(*(self.raw(r) for r in refs))
        x = normalize_bands(crop_center(np.stack(xs), self.crop), self.manifest.norm_stats,
                            self.manifest.band_labels)
        y = binarize_rain(np.stack(ys), self.threshold)
        return x, y
