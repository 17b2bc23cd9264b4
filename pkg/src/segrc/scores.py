"""Pixel conformity scores and prediction sets.

Two scores are provided. The CRC score is the model probability itself. The
CRA score of a pixel is the fraction of the image's total probability mass
held by pixels whose probability is at most its own, so thresholds act on
each image's own confidence profile rather than on absolute probabilities.
"""

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an image has zero total probability mass."""


def _as_float(probs):
    probs = np.asarray(probs)
    if not np.issubdtype(probs.dtype, np.floating):
        probs = probs.astype(np.float64)
    return probs.astype(np.float64, copy=False)


def crc_score(probs):
    """Return the CRC conformity scores: a float64 copy of the probabilities."""
    return np.array(probs, dtype=np.float64)


def cra_score(probs):
    """Normalized cumulative mass of all pixels with probability <= each pixel's.

    Pixels with equal probability share one score. The highest-probability
    pixels score exactly 1.

    Raises
    ------
    DegenerateInputError
        If the probabilities sum to zero.
    """
    p = _as_float(probs)
    flat = p.ravel()
    levels, inverse = np.unique(flat, return_inverse=True)
    cum = np.cumsum(np.bincount(inverse.ravel(), weights=flat, minlength=levels.size))
    total = cum[-1]
    if not total > 0:
        raise DegenerateInputError("total probability mass is zero")
    return (cum / total)[inverse.ravel()].reshape(p.shape)


def threshold_set(scores, tau):
    """Prediction set ``{j : score_j >= tau}`` as a boolean array."""
    return np.asarray(scores) >= tau


def adaptive_set(probs, alpha_prime):
    """Smallest set of pixels holding at least ``1 - alpha_prime`` of the total mass.

    Pixels are added in order of decreasing probability, one tie group at a
    time, so the set can overshoot the mass target when a tie group straddles
    it. Pixels with zero probability are never needed.

    This set coincides with ``cra_score(probs) > alpha_prime`` (strictly
    greater, at level ``alpha_prime``).
    """
    if not 0 <= alpha_prime <= 1:
        raise ValueError("alpha_prime must lie in [0, 1]")
    p = _as_float(probs)
    flat = p.ravel()
    levels, inverse = np.unique(flat, return_inverse=True)
    # ascending cumulative mass; a tie group is left out exactly when it and
    # every lower group together hold at most alpha' of the total, i.e. when
    # the groups above it already reach the (1 - alpha') target
    cum = np.cumsum(np.bincount(inverse.ravel(), weights=flat, minlength=levels.size))
    total = cum[-1]
    if not total > 0:
        raise DegenerateInputError("total probability mass is zero")
    take = cum > alpha_prime * total
    return take[inverse.ravel()].reshape(p.shape)
