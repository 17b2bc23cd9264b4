"""Monotone probability calibration by isotonic regression.

A nondecreasing step function is fitted to (raw probability, label) pairs
with the pool-adjacent-violators algorithm. For binary labels the weighted
least-squares isotonic fit also minimizes Bernoulli cross-entropy among all
nondecreasing functions, and clipping it into ``[eps, 1 - eps]`` gives the
cross-entropy optimum under that box constraint.
"""

import csv
from dataclasses import dataclass

import numpy as np

CLIP_EPSILON = 1e-6
DEFAULT_BINS = 1000


def pava(y, w=None):
    """Weighted isotonic (nondecreasing) least-squares fit of ``y``.

    Returns the fitted values, one per input, in input order. Adjacent
    blocks violating monotonicity are merged into their weighted mean.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    if y.shape != w.shape or y.ndim != 1:
        raise ValueError("y and w must be 1-D arrays of equal length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")

    # stack of blocks: mean, weight, length
    means = np.empty(y.size)
    weights = np.empty(y.size)
    lengths = np.empty(y.size, dtype=np.int64)
    top = -1
    for yi, wi in zip(y, w):
        top += 1
        means[top], weights[top], lengths[top] = yi, wi, 1
        while top > 0 and means[top - 1] > means[top]:
            wsum = weights[top - 1] + weights[top]
            means[top - 1] = (weights[top - 1] * means[top - 1] + weights[top] * means[top]) / wsum
            weights[top - 1] = wsum
            lengths[top - 1] += lengths[top]
            top -= 1
    return np.repeat(means[:top + 1], lengths[:top + 1])


@dataclass(frozen=True)
class CalibrationCurve:
    """Right-continuous step function through ``(knots_raw[k], knots_cal[k])``.

    ``counts`` and ``label_sums`` record the fitting data aggregated at each
    knot; they are kept so the fit can be audited and are optional.
    """

    knots_raw: np.ndarray
    knots_cal: np.ndarray
    clip_epsilon: float = CLIP_EPSILON
    counts: np.ndarray | None = None
    label_sums: np.ndarray | None = None

    def __post_init__(self):
        raw = np.asarray(self.knots_raw, dtype=np.float64)
        cal = np.asarray(self.knots_cal, dtype=np.float64)
        if raw.ndim != 1 or raw.shape != cal.shape or raw.size == 0:
            raise ValueError("knots must be nonempty 1-D arrays of equal length")
        if np.any(np.diff(raw) <= 0):
            raise ValueError("raw knots must be strictly increasing")
        if np.any(np.diff(cal) < 0):
            raise ValueError("calibrated values must be nondecreasing")
        object.__setattr__(self, "knots_raw", raw)
        object.__setattr__(self, "knots_cal", cal)

    def __call__(self, probs):
        return apply_calibration(self, probs)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["raw", "calibrated"])
            for r, c in zip(self.knots_raw, self.knots_cal):
                writer.writerow([repr(float(r)), repr(float(c))])

    @classmethod
    def from_csv(cls, path, clip_epsilon=CLIP_EPSILON):
        raw, cal = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["raw", "calibrated"]:
                raise ValueError(f"{path}: expected header raw,calibrated")
            for row in reader:
                raw.append(float(row["raw"]))
                cal.append(float(row["calibrated"]))
        return cls(np.array(raw), np.array(cal), clip_epsilon)


def _bin_pairs(raw, labels, n_bins):
    """Aggregate pairs by distinct raw value, then into equal-count bins.

    Returns (left edge, count, label sum) per bin. A single raw value never
    straddles two bins, so bins can come out unequal when values repeat.
    """
    values, inverse = np.unique(raw, return_inverse=True)
    counts = np.bincount(inverse, minlength=values.size).astype(np.float64)
    sums = np.bincount(inverse, weights=labels, minlength=values.size)
    if n_bins is None or values.size <= n_bins:
        return values, counts, sums
    total = counts.sum()
    before = np.cumsum(counts) - counts
    bin_id = np.minimum((before * n_bins / total).astype(np.int64), n_bins - 1)
    starts = np.flatnonzero(np.r_[True, bin_id[1:] != bin_id[:-1]])
    return (values[starts],
            np.add.reduceat(counts, starts),
            np.add.reduceat(sums, starts))


def fit_isotonic(raw, labels, n_bins=DEFAULT_BINS, clip_epsilon=CLIP_EPSILON):
    """Fit a monotone calibration curve to raw probabilities and binary labels.

    Parameters
    ----------
    raw : array_like
        Raw model probabilities (any shape; flattened).
    labels : array_like
        Binary labels aligned with ``raw``.
    n_bins : int or None
        Pairs are pooled into at most this many equal-count bins by raw
        probability before pool-adjacent-violators runs on the bin means
        with bin-count weights. ``None`` keeps every distinct raw value.
    clip_epsilon : float
        Fitted values are clipped into ``[clip_epsilon, 1 - clip_epsilon]``.
    """
    raw = np.asarray(raw, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if raw.size == 0:
        raise ValueError("cannot fit a calibration curve to no data")
    if raw.size != labels.size:
        raise ValueError("raw and labels must have the same size")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    if n_bins is not None and n_bins < 1:
        raise ValueError("n_bins must be positive")
    knots, counts, sums = _bin_pairs(raw, labels.astype(np.float64), n_bins)
    fitted = pava(sums / counts, counts)
    # recompute each pooled block from its integer sums so the level is the
    # correctly rounded block mean, not an accumulation of running averages
    while True:
        starts = np.flatnonzero(np.r_[True, fitted[1:] != fitted[:-1]])
        block_n = np.add.reduceat(counts, starts)
        level = np.add.reduceat(sums, starts) / block_n
        lengths = np.diff(np.r_[starts, fitted.size])
        fitted = np.repeat(level, lengths)
        if np.all(np.diff(level) >= 0):
            break
        # a violation hidden by rounding in the running averages; pool again
        fitted = np.repeat(pava(level, block_n), lengths)
    fitted = np.clip(fitted, clip_epsilon, 1.0 - clip_epsilon)
    return CalibrationCurve(knots, fitted, clip_epsilon, counts, sums)


def apply_calibration(curve, probs):
    """Evaluate the step function elementwise.

    A value takes the calibrated level of the largest knot at or below it;
    values below the first knot take the first level.
    """
    p = np.asarray(probs, dtype=np.float64)
    idx = np.searchsorted(curve.knots_raw, p, side="right") - 1
    return curve.knots_cal[np.clip(idx, 0, None)]


def cross_entropy(curve_values, counts, label_sums):
    """Mean Bernoulli cross-entropy of per-knot predictions on aggregated data."""
    f = np.asarray(curve_values, dtype=np.float64)
    return float(-(label_sums * np.log(f) + (counts - label_sums) * np.log1p(-f)).sum()
                 / np.sum(counts))
