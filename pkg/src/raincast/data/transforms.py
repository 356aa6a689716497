"""Array-level preprocessing shared by training, prediction and evaluation."""
import numpy as np

STD_FLOOR = 1e-6


def crop_offset(extent, size):
    if size > extent:
        raise ValueError(f"crop size {size} exceeds extent {extent}")
    if (extent - size) % 2:
        raise ValueError(f"extent {extent} - crop {size} is odd; a centred crop is ambiguous")
    return (extent - size) // 2


def crop_center(x, size):
    """Central ``size x size`` block of the last two axes."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    oh, ow = crop_offset(h, size), crop_offset(w, size)
    return x[..., oh:oh + size, ow:ow + size]


def _stat_arrays(stats, n_bands, labels=None):
    if isinstance(stats, dict):
        if labels is None:
            labels = list(stats)
        missing = [b for b in labels if b not in stats]
        if missing:
            raise KeyError(f"no normalization stats for bands {missing}")
        mean = np.array([stats[b]["mean"] for b in labels], dtype=np.float64)
        std = np.array([stats[b]["std"] for b in labels], dtype=np.float64)
    else:
        mean, std = (np.asarray(a, dtype=np.float64) for a in stats)
    if mean.shape != (n_bands,) or std.shape != (n_bands,):
        raise KeyError(f"stats cover {mean.shape[0]} bands, input has {n_bands}")
    return mean, np.maximum(std, STD_FLOOR)


def _band_view(v, ndim, band_axis):
    shape = [1] * ndim
    shape[band_axis] = -1
    return v.reshape(shape)


def normalize_bands(x, stats, labels=None, band_axis=-4):
    """Per-band z-score. ``x`` is [..., bands, T, H, W] unless ``band_axis`` says otherwise."""
    x = np.asarray(x)
    mean, std = _stat_arrays(stats, x.shape[band_axis], labels)
    out = (x - _band_view(mean, x.ndim, band_axis)) / _band_view(std, x.ndim, band_axis)
    return out.astype(np.float32)


def denormalize_bands(z, stats, labels=None, band_axis=-4):
    z = np.asarray(z)
    mean, std = _stat_arrays(stats, z.shape[band_axis], labels)
    return z * _band_view(std, z.ndim, band_axis) + _band_view(mean, z.ndim, band_axis)


def binarize_rain(rate, threshold=0.2):
    rate = np.asarray(rate)
    if np.any(rate < 0):
        raise ValueError(f"negative rain rates found (min {rate.min()}); data is corrupt")
    return (rate >= threshold).astype(np.float32)


def block_mean(x, factor):
    """Average non-overlapping ``factor x factor`` blocks of the last two axes."""
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"extent ({h}, {w}) not divisible by block {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))
