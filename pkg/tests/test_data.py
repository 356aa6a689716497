import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raincast import data as D
from raincast.tensor import read_tensor


def small_config(**kw):
    return D.SynthConfig(**{**dict(seed=3, t_in=2, t_out=3), **kw})


def small_regions(n=3, n_slots=30):
    return D.default_regions(n=n, held_out=1, grid=24, n_slots=n_slots)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    manifest = D.synth_generate(small_config(), small_regions(), root)
    return root, manifest


# ----------------------------------------------------------- generation
def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = small_config()
    D.synth_generate(cfg, small_regions(2, 16), a)
    D.synth_generate(cfg, small_regions(2, 16), b)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_synth_layout_and_manifest(dataset):
    root, manifest = dataset
    d = json.loads((root / "manifest.json").read_text())
    assert {"regions", "bands", "splits", "norm_stats", "files"} <= set(d)
    assert (root / "r0" / "0000.bands.nwf").is_file()
    assert (root / "r0" / "0029.rain.nwf").is_file()
    assert read_tensor(root / "r0" / "0000.bands.nwf").shape == (4, 24, 24)
    assert read_tensor(root / "r0" / "0000.rain.nwf").shape == (48, 48)
    assert read_tensor(root / "r0" / "static.nwf").shape == (3, 24, 24)
    loaded = D.load_manifest(root)
    loaded.validate(parse=True)
    assert loaded.band_labels == ["8.7um", "10.8um", "13.4um", "1.6um"]
    assert loaded.held_out_regions() == ["r2"]


def test_manifest_missing_file_detected(tmp_path):
    D.synth_generate(small_config(), [D.RegionSpec("r0", grid=24, n_slots=14)], tmp_path)
    (tmp_path / "r0" / "0003.rain.nwf").unlink()
    with pytest.raises(D.DataError, match="missing"):
        D.load_manifest(tmp_path)


def test_config_validation():
    with pytest.raises(ValueError, match="signal"):
        D.SynthConfig(bands=[D.BandSpec("x", 0.0, 1.0)])
    with pytest.raises(ValueError):
        D.SynthConfig(bands=[])
    with pytest.raises(ValueError):
        D.SynthConfig(upscale=0)


def test_zero_weight_band_uncorrelated_with_future_rain():
    cfg = small_config()
    region = D.RegionSpec("r", grid=24, n_slots=200)
    arrays = D.simulate_region(cfg, region, 0)
    off = D.crop_offset(24, cfg.target_coarse)
    target = D.block_mean(arrays["rain"], cfg.upscale)          # [L, 8, 8] coarse rain
    bands = arrays["bands"][:, :, off:off + 8, off:off + 8]
    future = target[1:].ravel()
    noise_corr = np.corrcoef(bands[:-1, 3].ravel(), future)[0, 1]
    signal_corr = np.corrcoef(bands[:-1, 0].ravel(), future)[0, 1]
    assert abs(noise_corr) < 0.05
    assert signal_corr < -0.5      # inverted transfer


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_latent_and_rain_non_negative(seed):
    region = D.RegionSpec("r0", grid=12, n_slots=40, blob_rate=3.0)
    out = D.simulate_region(D.SynthConfig(seed=seed, target_coarse=4, upscale=2), region, 0, keep_latent=True)
    assert out["latent"].min() >= 0
    assert out["rain"].min() >= 0


def test_coverage_within_configured_range():
    cfg = small_config()
    for i, region in enumerate(small_regions(3, 40)):
        rain = D.simulate_region(cfg, region, i)["rain"]
        frac = (rain >= cfg.rain_threshold).mean()
        want = D.region_coverage_target(cfg, region)
        assert cfg.coverage[0] - 0.05 <= frac <= cfg.coverage[1] + 0.05
        assert abs(frac - want) <= 0.05


def test_clean_band_is_block_mean_of_latent():
    cfg = small_config(bands=[D.BandSpec("8.7um", 1.0, 0.0, "direct"), D.BandSpec("1.6um", 0.0, 1.0)])
    region = D.RegionSpec("r", grid=12, n_slots=5)
    arrays = D.simulate_region(cfg, region, 0, keep_latent=True)
    lat = arrays["latent"]
    u = cfg.upscale
    oracle = np.zeros((5, 12, 12))
    for i in range(12):
        for j in range(12):
            oracle[:, i, j] = lat[:, i * u:(i + 1) * u, j * u:(j + 1) * u].mean(axis=(1, 2))
    np.testing.assert_allclose(arrays["bands"][:, 0], oracle, rtol=1e-6, atol=1e-6)
    rain = arrays["rain"]
    off = D.crop_offset(12, cfg.target_coarse) * u
    np.testing.assert_array_equal(rain >= cfg.rain_threshold,
                                  lat[:, off:off + 48, off:off + 48] >= 1.0 - 1e-6)


def test_static_fields_are_not_model_inputs(dataset):
    root, manifest = dataset
    ds = D.WindowDataset(manifest, 2, 3, 24)
    x, _ = ds.raw(D.WindowRef("r0", "train", 0))
    assert x.shape[0] == len(manifest.bands)


# ---------------------------------------------------------------- windows
@pytest.mark.parametrize("length,count", [(40, 5), (36, 1), (35, 0)])
def test_window_count_examples(length, count):
    assert D.window_count(length, 4, 32) == count


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 80), st.integers(1, 6), st.integers(1, 12), st.integers(1, 5))
def test_window_count_closed_form(length, t_in, t_out, stride):
    starts = list(D.window_starts(0, length, t_in, t_out, stride))
    brute = [s for s in range(0, length, stride) if s + t_in + t_out <= length]
    assert starts == brute
    want = max(0, (length - t_in - t_out) // stride + 1) if length >= t_in + t_out else 0
    assert len(starts) == want


def test_windows_respect_splits(dataset):
    _, manifest = dataset
    held = set(manifest.held_out_regions())
    refs = D.window_index(manifest, 2, 3)
    by_region = {}
    for ref in refs:
        lo, hi = manifest.splits[ref.region][ref.split]
        assert lo <= ref.start and ref.start + 5 <= hi
        by_region.setdefault(ref.region, {}).setdefault(ref.split, set()).update(
            range(ref.start, ref.start + 5))
    for rid, splits in by_region.items():
        slots = list(splits.values())
        for i in range(len(slots)):
            for j in range(i + 1, len(slots)):
                assert not slots[i] & slots[j]
    assert not any(r.region in held for r in D.window_index(manifest, 2, 3, splits="train"))
    assert any(r.region in held for r in D.window_index(manifest, 2, 3, splits="test"))
    assert not D.window_index(manifest, 2, 3, exclude_regions=manifest.region_ids)


def test_batch_assembly(dataset):
    _, manifest = dataset
    ds = D.WindowDataset(manifest, 2, 3, crop=8)
    refs = D.window_index(manifest, 2, 3, splits="train")[:4]
    x, y = ds.batch(refs)
    assert x.shape == (4, 4, 2, 8, 8) and x.dtype == np.float32
    assert y.shape == (4, 3, 48, 48)
    assert set(np.unique(y)) <= {0.0, 1.0}
    raw, rate = ds.raw(refs[1])
    stats = manifest.norm_stats["8.7um"]
    np.testing.assert_allclose(x[1, 0], (raw[0, :, 8:16, 8:16] - stats["mean"]) / stats["std"], rtol=1e-5,
                               atol=1e-5)
    np.testing.assert_array_equal(y[1], rate >= 0.2)


def test_norm_stats_from_train_split_only(dataset):
    root, manifest = dataset
    ds = D.WindowDataset(manifest, 2, 3, 24)
    blocks = []
    for rid in manifest.region_ids:
        if manifest.splits[rid]["held_out"]:
            continue
        lo, hi = manifest.splits[rid]["train"]
        bands, _ = ds._region(rid)
        blocks.append(bands[lo:hi, 0].astype(np.float64))
    allv = np.concatenate([b.ravel() for b in blocks])
    assert manifest.norm_stats["8.7um"]["mean"] == pytest.approx(allv.mean(), rel=1e-9)
    assert manifest.norm_stats["8.7um"]["std"] == pytest.approx(allv.std(), rel=1e-6)


# ------------------------------------------------------------- transforms
@pytest.mark.parametrize("size,offset", [(126, 63), (42, 105), (252, 0)])
def test_crop_offsets(size, offset):
    assert D.crop_offset(252, size) == offset
    x = np.arange(252 * 252).reshape(252, 252)
    c = D.crop_center(x, size)
    assert c.shape == (size, size)
    assert c[0, 0] == x[offset, offset]


def test_crop_rejects_bad_sizes():
    with pytest.raises(ValueError, match="odd"):
        D.crop_center(np.zeros((10, 10)), 5)
    with pytest.raises(ValueError, match="exceeds"):
        D.crop_center(np.zeros((10, 10)), 12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 6), st.integers(0, 1000))
def test_crop_is_sub_block(size, margin, seed):
    s = size + 2 * margin
    x = np.random.default_rng(seed).random((2, s, s))
    c = D.crop_center(x, size)
    for i in range(size):
        for j in range(size):
            assert c[1, i, j] == x[1, i + margin, j + margin]


def test_normalize_examples(rng):
    stats = {"a": {"mean": 2.0, "std": 3.0}, "b": {"mean": -1.0, "std": 0.5}}
    mean_field = np.empty((2, 3, 4, 4))
    mean_field[0], mean_field[1] = 2.0, -1.0
    np.testing.assert_array_equal(D.normalize_bands(mean_field, stats, ["a", "b"]), 0)
    z = rng.standard_normal((2, 3, 4, 4))
    unit = {"a": {"mean": 0.0, "std": 1.0}, "b": {"mean": 0.0, "std": 1.0}}
    np.testing.assert_allclose(D.normalize_bands(z, unit, ["a", "b"]), z, atol=1e-6)
    x = rng.standard_normal((5, 2, 3, 4, 4)) * 7 + 3
    back = D.denormalize_bands(D.normalize_bands(x, stats, ["a", "b"]), stats, ["a", "b"])
    np.testing.assert_allclose(back, x, atol=1e-5)
    with pytest.raises(KeyError):
        D.normalize_bands(x, {"a": stats["a"]}, ["a", "b"])


def test_normalize_floors_std():
    stats = {"a": {"mean": 0.0, "std": 0.0}}
    out = D.normalize_bands(np.full((1, 1, 2, 2), 1e-6), stats, ["a"])
    np.testing.assert_allclose(out, 1.0)


def test_binarize_rain(rng):
    np.testing.assert_array_equal(D.binarize_rain(np.array([0.19, 0.2, 0.21])), [0, 1, 1])
    np.testing.assert_array_equal(D.binarize_rain(np.zeros((3, 3))), 0)
    x = rng.random((4, 5)) * 0.5
    want = np.array([[1.0 if v >= 0.2 else 0.0 for v in row] for row in x])
    np.testing.assert_array_equal(D.binarize_rain(x), want)
    with pytest.raises(ValueError, match="negative"):
        D.binarize_rain(np.array([0.1, -0.01]))
    f32 = np.float32(0.2)
    assert D.binarize_rain(np.array([f32]), float(f32))[0] == 1
