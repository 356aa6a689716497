"""Synthetic multi-band satellite / fine-rain dataset.

Each region runs a latent rain field of advecting, anisotropic Gaussian
cells on a periodic fine grid. Cells are born at a Poisson rate, grow and
decay over a random lifetime, and drift with the region's mean velocity.
Coarse satellite-like bands are block means of the latent field passed
through a per-band transfer, scaled by an informativeness weight and mixed
with band noise. Only the central ``target_coarse`` block is stored at fine
resolution, as the rain target.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..tensor import write_tensor
from .transforms import block_mean, crop_offset

# Central wavelengths (um) of an 11-band geostationary imager; used only as labels.
WAVELENGTHS = ("0.64", "0.81", "1.6", "3.9", "6.3", "7.4", "8.7", "9.7", "10.8", "12", "13.4")


def band_label(wavelength):
    return f"{wavelength}um"


@dataclass
class BandSpec:
    label: str
    weight: float
    noise: float
    transfer: str = "direct"   # direct | inverted

    def __post_init__(self):
        if not 0 <= self.weight <= 1:
            raise ValueError(f"band {self.label}: weight must be in [0, 1]")
        if self.noise < 0:
            raise ValueError(f"band {self.label}: noise must be >= 0")
        if self.transfer not in ("direct", "inverted"):
            raise ValueError(f"band {self.label}: unknown transfer {self.transfer!r}")


def desk_bands():
    """Four bands: one dominant, two weaker noisier ones, one carrying no signal."""
    return [
        BandSpec(band_label("8.7"), 1.0, 0.05, "inverted"),
        BandSpec(band_label("10.8"), 0.5, 0.4, "inverted"),
        BandSpec(band_label("13.4"), 0.35, 0.5, "inverted"),
        BandSpec(band_label("1.6"), 0.0, 1.0, "direct"),
    ]


def full_bands():
    weights = {"0.64": 0.3, "0.81": 0.3, "1.6": 0.0, "3.9": 0.2, "6.3": 0.05, "7.4": 0.3,
               "8.7": 1.0, "9.7": 0.15, "10.8": 0.6, "12": 0.45, "13.4": 0.55}
    out = []
    for wl in WAVELENGTHS:
        w = weights[wl]
        transfer = "direct" if float(wl) < 1.0 else "inverted"
        out.append(BandSpec(band_label(wl), w, 0.05 if w == 1.0 else 0.5, transfer))
    return out


@dataclass
class RegionSpec:
    region_id: str
    grid: int = 72
    n_slots: int = 240
    blob_rate: float = 6.0         # births per slot
    velocity: tuple = (0.5, 0.2)   # coarse cells per slot, (dy, dx)
    blob_scale: float = 1.5        # typical sigma in coarse cells
    bias: float = 0.5              # position inside the configured coverage range
    held_out: bool = False

    def __post_init__(self):
        self.velocity = tuple(float(v) for v in self.velocity)
        if self.grid < 1 or self.n_slots < 1:
            raise ValueError(f"region {self.region_id}: grid and n_slots must be positive")
        if not 0 <= self.bias <= 1:
            raise ValueError(f"region {self.region_id}: bias must be in [0, 1]")


def default_regions(n=5, held_out=1, grid=72, n_slots=240):
    vel = [(0.6, 0.2), (-0.4, 0.5), (0.3, -0.6), (-0.5, -0.3), (0.5, 0.5), (0.0, 0.7), (-0.6, 0.0)]
    out = []
    for i in range(n):
        out.append(RegionSpec(
            f"r{i}", grid=grid, n_slots=n_slots, blob_rate=6.0 * (1 + 0.1 * (i % 4)),
            velocity=vel[i % len(vel)], blob_scale=1.5 * (1 + 0.15 * (i % 3)),
            bias=(i % 5) / 4, held_out=i >= n - held_out))
    return out


@dataclass
class SynthConfig:
    bands: list = field(default_factory=desk_bands)
    upscale: int = 6
    target_coarse: int = 8
    t_in: int = 4
    t_out: int = 8
    rain_threshold: float = 0.2
    coverage: tuple = (0.08, 0.20)
    split_fractions: tuple = (0.6, 0.2, 0.2)
    slot_minutes: int = 15
    seed: int = 0

    def __post_init__(self):
        self.bands = [b if isinstance(b, BandSpec) else BandSpec(**b) for b in self.bands]
        self.coverage = tuple(float(c) for c in self.coverage)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if not self.bands:
            raise ValueError("at least one band is required")
        if not any(b.weight > 0 for b in self.bands):
            raise ValueError("at least one band must carry signal (weight > 0)")
        if self.upscale < 1:
            raise ValueError("upscale must be >= 1")
        lo, hi = self.coverage
        if not 0 < lo <= hi < 1:
            raise ValueError(f"coverage range {self.coverage} must satisfy 0 < lo <= hi < 1")
        if abs(sum(self.split_fractions) - 1) > 1e-9 or len(self.split_fractions) != 3:
            raise ValueError("split_fractions must be three fractions summing to 1")

    @property
    def target_size(self):
        return self.target_coarse * self.upscale

    def to_dict(self):
        d = asdict(self)
        d["coverage"] = list(self.coverage)
        d["split_fractions"] = list(self.split_fractions)
        return d


def _periodic_gauss(n, centre, sigma):
    d = (np.arange(n) - centre + n / 2) % n - n / 2
    return np.exp(-0.5 * (d / sigma) ** 2)


def simulate_latent(region, upscale, rng, burn_in=60):
    """Latent fine field [n_slots, grid*U, grid*U] in arbitrary positive units."""
    fine = region.grid * upscale
    out = np.zeros((region.n_slots, fine, fine), dtype=np.float64)
    keys = ("y", "x", "vy", "vx", "sy", "sx", "amp", "age", "life")
    cells = {k: np.zeros(0) for k in keys}
    vy, vx = (v * upscale for v in region.velocity)
    for t in range(-burn_in, region.n_slots):
        n_new = rng.poisson(region.blob_rate)
        if n_new:
            sigma = region.blob_scale * upscale * np.exp(rng.normal(0, 0.25, n_new))
            stretch = rng.uniform(1.0, 2.0, n_new)
            along_y = rng.random(n_new) < 0.5
            new = {
                "y": rng.uniform(0, fine, n_new), "x": rng.uniform(0, fine, n_new),
                "vy": vy + rng.normal(0, 0.1 * upscale, n_new),
                "vx": vx + rng.normal(0, 0.1 * upscale, n_new),
                "sy": sigma * np.where(along_y, stretch, 1.0),
                "sx": sigma * np.where(along_y, 1.0, stretch),
                "amp": rng.lognormal(0.0, 0.4, n_new),
                "age": np.zeros(n_new), "life": rng.uniform(15, 40, n_new),
            }
            cells = {k: np.concatenate([cells[k], new[k]]) for k in keys}
        if t >= 0 and cells["y"].size:
            env = np.maximum(np.sin(np.pi * (cells["age"] + 0.5) / cells["life"]), 0.0)
            # separable cells: sum_i w_i gy_i gx_i^T as one matrix product
            gy = _periodic_gauss(fine, cells["y"][:, None], cells["sy"][:, None])
            gx = _periodic_gauss(fine, cells["x"][:, None], cells["sx"][:, None])
            out[t] = gy.T @ ((cells["amp"] * env)[:, None] * gx)
        cells["y"] = (cells["y"] + cells["vy"]) % fine
        cells["x"] = (cells["x"] + cells["vx"]) % fine
        cells["age"] = cells["age"] + 1
        alive = cells["age"] < cells["life"]
        cells = {k: v[alive] for k, v in cells.items()}
    return out


def region_coverage_target(config, region):
    lo, hi = config.coverage
    return lo + (hi - lo) * region.bias


def apply_transfer(m, transfer):
    return m if transfer == "direct" else -m


def simulate_region(config, region, index, keep_latent=False):
    """All arrays for one region.

    Returns a dict with ``bands`` [L, B, S, S], ``rain`` [L, Nt*U, Nt*U] (rain
    rate in mm over the central target block), ``static`` [3, S, S] and, if
    requested, the normalized ``latent`` field on which rain >= threshold iff
    latent >= 1.
    """
    rng = np.random.default_rng([config.seed, index])
    noise_rng = np.random.default_rng([config.seed, index, 1])
    raw = simulate_latent(region, config.upscale, rng)
    cover = region_coverage_target(config, region)
    off = crop_offset(region.grid, config.target_coarse) * config.upscale
    size = config.target_size
    # calibrate so the stored target block hits the region's coverage
    q = float(np.quantile(raw[:, off:off + size, off:off + size], 1.0 - cover))
    if q <= 0:
        q = float(raw.max()) or 1.0
    latent = raw / q
    m = block_mean(latent, config.upscale)
    bands = np.empty((region.n_slots, len(config.bands), region.grid, region.grid), dtype=np.float32)
    for b, spec in enumerate(config.bands):
        signal = spec.weight * apply_transfer(m, spec.transfer)
        noise = noise_rng.standard_normal(m.shape) if spec.noise > 0 else 0.0
        bands[:, b] = signal + spec.noise * noise
    rain = (config.rain_threshold * latent[:, off:off + size, off:off + size]).astype(np.float32)
    out = {"bands": bands, "rain": rain, "static": _static_fields(region, rng)}
    if keep_latent:
        out["latent"] = latent
    return out


def _static_fields(region, rng):
    s = region.grid
    yy, xx = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    elev = np.zeros((s, s))
    for _ in range(4):
        cy, cx, sig = rng.uniform(0, s), rng.uniform(0, s), rng.uniform(s / 8, s / 3)
        elev += rng.uniform(200, 1500) * _periodic_gauss(s, cy, sig)[:, None] * _periodic_gauss(s, cx, sig)[None]
    lon0, lat0 = rng.uniform(-10, 30), rng.uniform(35, 60)
    return np.stack([elev, lon0 + 0.1 * xx, lat0 - 0.1 * yy]).astype(np.float32)


def split_bounds(n_slots, fractions):
    a = int(round(n_slots * fractions[0]))
    b = int(round(n_slots * (fractions[0] + fractions[1])))
    return {"train": [0, a], "val": [a, b], "test": [b, n_slots]}


def _write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def synth_generate(config, regions, out_dir):
    """Simulate every region, write tensor files and ``manifest.json``; return the manifest."""
    from .dataset import DatasetManifest

    if not regions:
        raise ValueError("no regions to generate")
    grids = {r.grid for r in regions}
    if len(grids) != 1:
        raise ValueError(f"all regions must share one grid size, got {sorted(grids)}")
    if len({r.region_id for r in regions}) != len(regions):
        raise ValueError("region ids must be unique")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    files, splits = {}, {}
    sums = np.zeros(len(config.bands))
    sq = np.zeros(len(config.bands))
    count = 0
    for index, region in enumerate(regions):
        arrays = simulate_region(config, region, index)
        rdir = root / region.region_id
        rdir.mkdir(exist_ok=True)
        entry = {"bands": [], "rain": [], "static": f"{region.region_id}/static.nwf"}
        for slot in range(region.n_slots):
            stem = f"{region.region_id}/{slot:04d}"
            write_tensor(root / f"{stem}.bands.nwf", arrays["bands"][slot])
            write_tensor(root / f"{stem}.rain.nwf", arrays["rain"][slot])
            entry["bands"].append(f"{stem}.bands.nwf")
            entry["rain"].append(f"{stem}.rain.nwf")
        write_tensor(root / entry["static"], arrays["static"])
        files[region.region_id] = entry
        bounds = split_bounds(region.n_slots, config.split_fractions)
        splits[region.region_id] = {**bounds, "held_out": bool(region.held_out)}
        if not region.held_out:
            lo, hi = bounds["train"]
            block = arrays["bands"][lo:hi].astype(np.float64)
            sums += block.sum(axis=(0, 2, 3))
            sq += (block ** 2).sum(axis=(0, 2, 3))
            count += block.shape[0] * block.shape[2] * block.shape[3]
    if count == 0:
        raise ValueError("no training slots: every region is held out or too short")
    mean = sums / count
    std = np.sqrt(np.maximum(sq / count - mean ** 2, 0.0))
    norm_stats = {b.label: {"mean": float(mu), "std": float(sd)}
                  for b, mu, sd in zip(config.bands, mean, std)}
    manifest = DatasetManifest(
        root=root,
        regions=list(regions),
        bands=[asdict(b) for b in config.bands],
        splits=splits,
        norm_stats=norm_stats,
        files=files,
        synth=config.to_dict(),
    )
    _write_json(root / "manifest.json", manifest.to_dict())
    return manifest
