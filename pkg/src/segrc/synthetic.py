"""Synthetic segmentation data with known pixel inclusion probabilities.

Each image holds one or more blobs whose true inclusion probability falls
off logistically with distance from a random center. The ground-truth mask
is one Bernoulli draw per pixel from the true probabilities, and the model
probabilities the methods see are a noisy, optionally miscalibrated
distortion of them in logit space. Blob size and edge softness vary per
image, so images differ in both object size and model confidence.
"""

import os
from dataclasses import dataclass

import numpy as np

from .dataset_io import ManifestRecord, Sample, write_array, write_manifest

PROB_CLIP = 1e-6


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``object_scale_range`` bounds the blob area as a fraction of the image,
    ``edge_softness_range`` the logistic falloff width in pixels.
    ``miscalibration`` is ``"none"``, ``"sharpen"`` (logits multiplied by
    ``gamma``) or ``"flatten"`` (logits divided by ``gamma``).
    """

    n_images: int = 100
    height: int = 32
    width: int = 32
    object_scale_range: tuple = (0.01, 0.3)
    edge_softness_range: tuple = (0.5, 3.0)
    n_blobs: int = 1
    miscalibration: str = "none"
    gamma: float = 1.0
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1 or self.height < 1 or self.width < 1 or self.n_blobs < 1:
            raise ValueError("n_images, height, width and n_blobs must be positive")
        lo, hi = self.object_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("object_scale_range must satisfy 0 < min <= max <= 1")
        slo, shi = self.edge_softness_range
        if not 0 < slo <= shi:
            raise ValueError("edge_softness_range must satisfy 0 < min <= max")
        if self.miscalibration not in ("none", "sharpen", "flatten"):
            raise ValueError(f"unknown miscalibration {self.miscalibration!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


def parse_miscalibration(text):
    """Parse ``none``, ``sharpen:G`` or ``flatten:G`` into (mode, gamma)."""
    mode, _, gamma = text.strip().partition(":")
    mode = mode.lower()
    if mode == "none":
        if gamma:
            raise ValueError("'none' takes no exponent")
        return "none", 1.0
    if mode not in ("sharpen", "flatten") or not gamma:
        raise ValueError(f"miscalibration must be none, sharpen:G or flatten:G, got {text!r}")
    g = float(gamma)
    if not g > 0:
        raise ValueError("miscalibration exponent must be positive")
    return mode, g


@dataclass
class SynthSample:
    sample_id: str
    true_probs: np.ndarray
    model_probs: np.ndarray
    mask: np.ndarray

    @property
    def probs(self):
        return self.model_probs

    def to_sample(self):
        return Sample(self.sample_id, self.model_probs, self.mask)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def true_probability_field(rng, config):
    """One image's true inclusion probabilities (float64, clipped)."""
    h, w = config.height, config.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    logit = np.full((h, w), -np.inf)
    for _ in range(config.n_blobs):
        area = rng.uniform(*config.object_scale_range) * h * w
        radius = np.sqrt(area / np.pi)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        softness = rng.uniform(*config.edge_softness_range)
        dist = np.hypot(yy + 0.5 - cy, xx + 0.5 - cx)
        logit = np.maximum(logit, (radius - dist) / softness)
    return np.clip(_sigmoid(logit), PROB_CLIP, 1 - PROB_CLIP)


def distort(true_probs, rng, config):
    """Model probabilities: logit noise, then sharpening or flattening."""
    z = _logit(true_probs)
    if config.noise_sd > 0:
        z = z + rng.normal(0.0, config.noise_sd, size=z.shape)
    if config.miscalibration == "sharpen":
        z = z * config.gamma
    elif config.miscalibration == "flatten":
        z = z / config.gamma
    return np.clip(_sigmoid(z), PROB_CLIP, 1 - PROB_CLIP)


def generate_one(config, index):
    """Image ``index`` of the dataset; depends only on (seed, index)."""
    rng = np.random.default_rng([config.seed, index])
    true_probs = true_probability_field(rng, config)
    mask = (rng.random(true_probs.shape) < true_probs).astype(np.uint8)
    model_probs = distort(true_probs, rng, config).astype(np.float32)
    return SynthSample(f"img{index:05d}", true_probs, model_probs, mask)


def generate(config):
    """All ``config.n_images`` samples, in index order."""
    return [generate_one(config, i) for i in range(config.n_images)]


def write_dataset(samples, out_dir):
    """Write probability and mask files plus ``manifest.csv`` under ``out_dir``."""
    prob_dir = os.path.join(out_dir, "probs")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(prob_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    records = []
    for s in samples:
        prob_path = os.path.join(prob_dir, f"{s.sample_id}.npy")
        mask_path = os.path.join(mask_dir, f"{s.sample_id}.npy")
        write_array(prob_path, s.probs, kind="prob")
        write_array(mask_path, s.mask, kind="mask")
        records.append(ManifestRecord(s.sample_id, prob_path, mask_path))
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, records)
    return manifest
