"""Calibrated thresholds controlling the expected false negative rate.

Given calibration images, the false negative rate of the set
``{j : s_j >= tau}`` on image ``i`` is the weighted count of its positive
pixels scoring below ``tau``, each weighted ``1 / |Y_i|``. The threshold is
the largest ``tau`` with

    sum_i sum_{j in Y_i} 1{s_ij < tau} / |Y_i|  <=  (n + 1) * alpha - B,

which is a quantile of the pooled weighted score distribution and is found
with one sort and a cumulative-weight scan.
"""

from dataclasses import dataclass

import numpy as np

from .scores import threshold_set


class CalibrationError(ValueError):
    """Raised when no calibration image has a nonempty ground-truth mask."""


@dataclass(frozen=True)
class WeightedScores:
    """Pooled positive-pixel scores with weight ``1 / |Y_i|``.

    Arrays are aligned; ``image_index`` refers to the position of the image
    in the list passed to :func:`collect_weighted_scores`, and ``pixel_index``
    to the flattened pixel position. ``n_images`` counts images that
    contributed samples; ``n_empty`` those skipped for having an empty mask.
    """

    score: np.ndarray
    weight: np.ndarray
    image_index: np.ndarray
    pixel_index: np.ndarray
    n_images: int
    n_empty: int = 0

    def __len__(self):
        return self.score.size


@dataclass(frozen=True)
class ThresholdResult:
    tau: float
    quantile_level: float
    n_images: int
    empirical_risk_at_tau: float


def collect_weighted_scores(images):
    """Pool ``(score, 1/|Y_i|)`` over the positive pixels of every image.

    Parameters
    ----------
    images : iterable of (scores, mask) pairs
        Score arrays and binary masks of matching shape.

    Raises
    ------
    CalibrationError
        If every mask is empty.
    """
    scores, weights, img_idx, pix_idx = [], [], [], []
    n_images = n_empty = 0
    for i, (s, mask) in enumerate(images):
        s = np.asarray(s, dtype=np.float64).ravel()
        pos = np.flatnonzero(np.asarray(mask).ravel())
        if pos.size == 0:
            n_empty += 1
            continue
        n_images += 1
        scores.append(s[pos])
        weights.append(np.full(pos.size, 1.0 / pos.size))
        img_idx.append(np.full(pos.size, i, dtype=np.int64))
        pix_idx.append(pos.astype(np.int64))
    if n_images == 0:
        raise CalibrationError("all calibration masks are empty")
    return WeightedScores(np.concatenate(scores), np.concatenate(weights),
                          np.concatenate(img_idx), np.concatenate(pix_idx),
                          n_images, n_empty)


def risk_budget(n_images, alpha, B=1.0):
    """Allowed total weighted miss mass ``(n + 1) * alpha - B``."""
    return (n_images + 1) * alpha - B


def _check_args(n_images, alpha, B):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if B < 0:
        raise ValueError("B must be nonnegative")
    if n_images < 1:
        raise ValueError("n_images must be at least 1")


def weighted_quantile_threshold(samples, n_images=None, alpha=0.1, B=1.0):
    """Largest threshold whose weighted miss mass stays within budget.

    Candidates are 0 and the observed scores. A negative budget returns 0,
    which includes every pixel. Ties are resolved deterministically by
    sorting on (score, image index, pixel index).

    Parameters
    ----------
    samples : WeightedScores
    n_images : int, optional
        Number of calibration images; defaults to ``samples.n_images``.
    alpha : float
        Target expected false negative rate, in (0, 1).
    B : float
        Upper bound of the per-image loss (1 for the false negative rate).
    """
    if n_images is None:
        n_images = samples.n_images
    _check_args(n_images, alpha, B)
    budget = risk_budget(n_images, alpha, B)
    level = budget / n_images
    if budget < 0 or len(samples) == 0:
        return ThresholdResult(0.0, level, n_images, 0.0)

    order = np.lexsort((samples.pixel_index, samples.image_index, samples.score))
    s = samples.score[order]
    w = samples.weight[order]
    cum = np.cumsum(w)
    # first index of each distinct score; weight strictly below it is the
    # cumulative weight just before that index
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    below = np.r_[0.0, cum][starts]
    feasible = np.flatnonzero(below <= budget)
    # below is nondecreasing, so the feasible candidates form a prefix
    k = feasible[-1]
    tau = float(s[starts[k]])
    return ThresholdResult(tau, level, n_images, float(below[k]) / n_images)


def _fnr_losses(images, tau):
    losses = []
    for s, mask in images:
        y = np.asarray(mask).astype(bool)
        if not y.any():
            continue
        covered = np.count_nonzero(threshold_set(s, tau) & y)
        losses.append(1.0 - covered / np.count_nonzero(y))
    return losses


def empirical_fnr(images, tau):
    """Mean false negative rate of ``{score >= tau}`` over images with nonempty masks."""
    losses = _fnr_losses(images, tau)
    return float(np.mean(losses)) if losses else float("nan")


def grid_search_threshold(images, alpha=0.1, B=1.0, grid_step=0.01):
    """Brute-force threshold: scan a regular grid on [0, 1].

    At every grid point the per-image false negative rate of ``{s >= tau}``
    is evaluated and the constraint
    ``(1/(n+1)) * sum_i FNR_i(tau) + B/(n+1) <= alpha`` is checked. Returns
    the largest feasible grid point, or 0 when none is feasible.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    n_steps = int(np.floor(1.0 / grid_step + 1e-9))
    grid = np.minimum(np.arange(n_steps + 1) * grid_step, 1.0)

    total_loss = np.zeros(grid.size)
    n = 0
    for s, mask in images:
        y = np.asarray(mask).astype(bool)
        if not y.any():
            continue
        n += 1
        positives = np.sort(np.asarray(s, dtype=np.float64)[y])
        # positives missed at tau are those with score < tau
        missed = np.searchsorted(positives, grid, side="left")
        total_loss += missed / positives.size
    if n == 0:
        raise CalibrationError("all calibration masks are empty")
    _check_args(n, alpha, B)

    feasible = np.flatnonzero(total_loss / (n + 1) + B / (n + 1) <= alpha)
    level = risk_budget(n, alpha, B) / n
    if feasible.size == 0:
        return ThresholdResult(0.0, level, n, 0.0)
    g = feasible[-1]
    return ThresholdResult(float(grid[g]), level, n, float(total_loss[g]) / n)
