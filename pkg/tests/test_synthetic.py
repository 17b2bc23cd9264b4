import numpy as np
import pytest

from segrc.calibration import cross_entropy, fit_isotonic
from segrc.dataset_io import load_dataset, read_manifest
from segrc.synthetic import SynthConfig, generate, generate_one, parse_miscalibration, write_dataset


def test_identity_distortion():
    for s in generate(SynthConfig(n_images=20, height=12, width=9, seed=1)):
        assert s.model_probs.dtype == np.float32
        assert np.allclose(s.model_probs, s.true_probs, rtol=1e-6, atol=1e-7)
        assert s.true_probs.min() >= 1e-6 and s.true_probs.max() <= 1 - 1e-6


def test_deterministic_and_order_free():
    cfg = SynthConfig(n_images=8, miscalibration="flatten", gamma=1.5, noise_sd=0.3, seed=9)
    a, b = generate(cfg), generate(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.model_probs, y.model_probs) and np.array_equal(x.mask, y.mask)
    single = generate_one(cfg, 5)
    assert np.array_equal(single.model_probs, a[5].model_probs)
    other = generate(SynthConfig(n_images=8, seed=10))
    assert not np.array_equal(other[0].mask, a[0].mask) or \
        not np.array_equal(other[0].true_probs, a[0].true_probs)


def test_mask_frequency_matches_true_probs():
    samples = generate(SynthConfig(n_images=1000, seed=2))
    p = np.concatenate([s.true_probs.ravel() for s in samples])
    y = np.concatenate([s.mask.ravel() for s in samples])
    bins = np.minimum((p * 10).astype(int), 9)
    dev = [abs(y[bins == b].mean() - p[bins == b].mean()) for b in range(10) if np.any(bins == b)]
    assert max(dev) < 0.02


@pytest.mark.parametrize("mode", ["sharpen", "flatten"])
def test_isotonic_reduces_heldout_cross_entropy(mode):
    cfg = SynthConfig(n_images=400, height=16, width=16, miscalibration=mode, gamma=2.0,
                      noise_sd=0.3, seed=4)
    samples = generate(cfg)
    fit_on, held = samples[:200], samples[200:]
    raw = np.concatenate([s.model_probs.ravel() for s in fit_on]).astype(np.float64)
    lab = np.concatenate([s.mask.ravel() for s in fit_on])
    curve = fit_isotonic(raw, lab)
    hp = np.concatenate([s.model_probs.ravel() for s in held]).astype(np.float64)
    hy = np.concatenate([s.mask.ravel() for s in held]).astype(np.float64)
    ones = np.ones_like(hy)
    assert cross_entropy(curve(hp), ones, hy) < cross_entropy(hp, ones, hy)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(object_scale_range=(0.0, 0.3))
    with pytest.raises(ValueError):
        SynthConfig(gamma=0)
    with pytest.raises(ValueError):
        SynthConfig(noise_sd=-1)
    with pytest.raises(ValueError):
        SynthConfig(miscalibration="warp")


def test_parse_miscalibration():
    assert parse_miscalibration("none") == ("none", 1.0)
    assert parse_miscalibration("Sharpen:2") == ("sharpen", 2.0)
    for bad in ("sharpen", "flatten:-1", "none:2", "warp:2"):
        with pytest.raises(ValueError):
            parse_miscalibration(bad)


def test_write_dataset_round_trip(tmp_path):
    samples = generate(SynthConfig(n_images=5, height=6, width=7, noise_sd=0.2, seed=3))
    manifest = write_dataset(samples, tmp_path / "data")
    assert len(read_manifest(manifest)) == 5
    assert len(list((tmp_path / "data").rglob("*.npy"))) == 10
    loaded = load_dataset(manifest)
    for s, l in zip(samples, loaded):
        assert s.sample_id == l.sample_id
        assert np.array_equal(s.model_probs, l.probs) and np.array_equal(s.mask, l.mask)
