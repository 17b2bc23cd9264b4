"""Stratified thresholds keyed on each image's total predicted mass.

Images are binned into ``K`` strata at the empirical ``1/K, ..., (K-1)/K``
quantiles of the calibration images' total probability mass, and each
stratum gets its own CRA-score threshold. Strata are indexed from 0.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .risk_quantile import collect_weighted_scores, weighted_quantile_threshold

DEFAULT_K = 4
MIN_STRATUM_SIZE = 20


def fit_strata(total_masses, K=DEFAULT_K):
    """Edges at the ``k/K`` empirical quantiles (linear interpolation) of the masses."""
    masses = np.asarray(total_masses, dtype=np.float64).ravel()
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > masses.size:
        raise ValueError(f"cannot form {K} strata from {masses.size} images")
    if K == 1:
        return np.empty(0)
    return np.quantile(masses, np.arange(1, K) / K)


def assign_stratum(edges, total_mass):
    """Stratum index of ``total_mass``; interval ``k`` is ``[edges[k-1], edges[k])``.

    Masses below the first edge fall in stratum 0 and masses at or above the
    last edge in stratum ``K - 1``. Accepts scalars or arrays.
    """
    idx = np.searchsorted(np.asarray(edges, dtype=np.float64), total_mass, side="right")
    return int(idx) if np.ndim(idx) == 0 else idx


@dataclass(frozen=True)
class StrataModel:
    edges: np.ndarray
    tau: np.ndarray
    n: np.ndarray
    global_tau: float
    fallback: np.ndarray

    @property
    def K(self):
        return self.tau.size

    def threshold_for(self, total_mass):
        return float(self.tau[assign_stratum(self.edges, total_mass)])

    def to_csv(self, path):
        lower = np.r_[-np.inf, self.edges]
        upper = np.r_[self.edges, np.inf]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["stratum", "lower_edge", "upper_edge", "n", "tau"])
            for k in range(self.K):
                writer.writerow([k, repr(float(lower[k])), repr(float(upper[k])),
                                 int(self.n[k]), repr(float(self.tau[k]))])

    @classmethod
    def from_csv(cls, path, global_tau=float("nan"), min_size=MIN_STRATUM_SIZE):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["stratum", "lower_edge", "upper_edge", "n", "tau"]:
                raise ValueError(f"{path}: unexpected strata header {reader.fieldnames}")
            rows = sorted(reader, key=lambda r: int(r["stratum"]))
        edges = np.array([float(r["lower_edge"]) for r in rows[1:]])
        n = np.array([int(r["n"]) for r in rows], dtype=np.int64)
        return cls(edges, np.array([float(r["tau"]) for r in rows]), n,
                   global_tau, n < min_size)


def fit_stratum_thresholds(score_images, strata, alpha, B=1.0, K=None, global_tau=None,
                           min_size=MIN_STRATUM_SIZE):
    """Per-stratum thresholds from the weighted-quantile rule.

    Parameters
    ----------
    score_images : list of (scores, mask)
        Calibration images, already scored.
    strata : array_like of int
        Stratum index of each calibration image.
    alpha, B : float
        Risk level and loss bound.
    K : int, optional
        Number of strata; defaults to ``max(strata) + 1``.
    global_tau : float, optional
        Threshold used by strata whose count of nonempty-mask images is below
        ``min_size``. Computed from all images when omitted.
    min_size : int
        Minimum stratum size for a stratum-specific threshold.

    Returns
    -------
    tau, n, fallback : ndarrays
        Threshold, calibration count (nonempty masks) and fallback flag per
        stratum.
    """
    strata = np.asarray(strata, dtype=np.int64)
    if K is None:
        K = int(strata.max()) + 1 if strata.size else 1
    return _per_stratum(score_images, strata, K, alpha, B, global_tau, min_size)


def _per_stratum(score_images, strata, K, alpha, B, global_tau, min_size):
    if global_tau is None:
        global_tau = weighted_quantile_threshold(
            collect_weighted_scores(score_images), alpha=alpha, B=B).tau
    tau = np.full(K, float(global_tau))
    n = np.zeros(K, dtype=np.int64)
    fallback = np.ones(K, dtype=bool)
    for k in range(K):
        members = [img for img, g in zip(score_images, strata) if g == k]
        members = [(s, m) for s, m in members if np.any(m)]
        n[k] = len(members)
        if n[k] == 0 or n[k] < min_size:
            continue
        tau[k] = weighted_quantile_threshold(collect_weighted_scores(members),
                                             alpha=alpha, B=B).tau
        fallback[k] = False
    return tau, n, fallback


def fit_strata_model(score_images, total_masses, alpha, K=DEFAULT_K, B=1.0,
                     global_tau=None, min_size=MIN_STRATUM_SIZE):
    """Fit edges on the calibration masses, then per-stratum thresholds."""
    edges = fit_strata(total_masses, K)
    strata = assign_stratum(edges, np.asarray(total_masses, dtype=np.float64))
    if global_tau is None:
        global_tau = weighted_quantile_threshold(
            collect_weighted_scores(score_images), alpha=alpha, B=B).tau
    tau, n, fallback = _per_stratum(score_images, np.atleast_1d(strata), K, alpha, B,
                                    global_tau, min_size)
    return StrataModel(edges, tau, n, float(global_tau), fallback)
