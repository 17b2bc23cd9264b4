"""Per-image metrics, repeated-split trials, alpha sweeps and CSV reports.

Coverage of an image is ``|C & Y| / |Y|`` and its false negative rate is
``1 - coverage``. The coverage gap of a trial is the mean over test images of
``|coverage - (1 - alpha)|``. Images with an empty ground-truth mask have no
defined coverage; they are counted in ``n_empty_masks`` and left out of every
average.
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset_io import split_dataset
from .methods import Method, MethodSpec, fit_curve, fit_from_scores, method_scores, threshold_for_mass, working_probs

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ["method", "alpha", "trial", "marginal_coverage", "coverage_gap",
                 "mean_set_size", "n_test", "n_empty_masks"]
AGGREGATE_COLUMNS = ["method", "alpha", "n_trials",
                     "marginal_coverage", "marginal_coverage_std_trials",
                     "marginal_coverage_std_samples",
                     "coverage_gap", "coverage_gap_std_trials", "coverage_gap_std_samples",
                     "mean_set_size", "n_test", "n_empty_masks"]


@dataclass(frozen=True)
class ImageResult:
    sample_id: str
    coverage: float
    fnr: float
    set_size: int
    stratum: int | None = None

    @property
    def empty(self):
        return np.isnan(self.coverage)


def evaluate_image(pred, mask, sample_id="", stratum=None):
    """Coverage, false negative rate and set size of one prediction set.

    An empty mask yields NaN coverage and FNR (``result.empty`` is true).
    """
    pred = np.asarray(pred, dtype=bool)
    y = np.asarray(mask).astype(bool)
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match mask {y.shape}")
    size = int(np.count_nonzero(pred))
    n_pos = np.count_nonzero(y)
    if n_pos == 0:
        return ImageResult(sample_id, float("nan"), float("nan"), size, stratum)
    coverage = np.count_nonzero(pred & y) / n_pos
    return ImageResult(sample_id, coverage, 1.0 - coverage, size, stratum)


def _std(x, ddof):
    x = np.asarray(x, dtype=np.float64)
    return float(np.std(x, ddof=ddof)) if x.size > ddof else 0.0


@dataclass
class TrialResult:
    method: str
    alpha: float
    trial: int
    images: list
    strata_n: np.ndarray | None = None

    def _covered(self):
        return np.array([r.coverage for r in self.images if not r.empty])

    @property
    def n_test(self):
        return sum(1 for r in self.images if not r.empty)

    @property
    def n_empty_masks(self):
        return sum(1 for r in self.images if r.empty)

    @property
    def marginal_coverage(self):
        c = self._covered()
        return float(c.mean()) if c.size else float("nan")

    @property
    def coverage_gap(self):
        c = self._covered()
        return float(np.abs(c - (1 - self.alpha)).mean()) if c.size else float("nan")

    @property
    def mean_set_size(self):
        return float(np.mean([r.set_size for r in self.images])) if self.images else 0.0

    def stratum_fnr(self, k):
        f = [r.fnr for r in self.images if not r.empty and r.stratum == k]
        return float(np.mean(f)) if f else float("nan")


@dataclass
class TrialReport:
    """Across-trial summary for one (method, alpha).

    ``*_std_trials`` is the standard deviation of the per-trial values;
    ``*_std_samples`` pools every test image of every trial.
    """

    method: str
    alpha: float
    trials: list = field(repr=False)

    @property
    def n_trials(self):
        return len(self.trials)

    def per_trial(self, name):
        return np.array([getattr(t, name) for t in self.trials], dtype=np.float64)

    def sample_coverages(self):
        return np.concatenate([t._covered() for t in self.trials])

    @property
    def marginal_coverage(self):
        return float(np.mean(self.per_trial("marginal_coverage")))

    @property
    def marginal_coverage_std_trials(self):
        return _std(self.per_trial("marginal_coverage"), 1)

    @property
    def marginal_coverage_std_samples(self):
        return _std(self.sample_coverages(), 0)

    @property
    def coverage_gap(self):
        return float(np.mean(self.per_trial("coverage_gap")))

    @property
    def coverage_gap_std_trials(self):
        return _std(self.per_trial("coverage_gap"), 1)

    @property
    def coverage_gap_std_samples(self):
        return _std(np.abs(self.sample_coverages() - (1 - self.alpha)), 0)

    @property
    def mean_set_size(self):
        return float(np.mean(self.per_trial("mean_set_size")))

    @property
    def n_test(self):
        return float(np.mean(self.per_trial("n_test")))

    @property
    def n_empty_masks(self):
        return int(sum(t.n_empty_masks for t in self.trials))

    def standard_error(self, name):
        """Across-trial standard error of the mean of a per-trial quantity."""
        return _std(self.per_trial(name), 1) / np.sqrt(self.n_trials)

    def stratum_fnr(self, k, min_n=0):
        """Per-trial mean FNR of test images in stratum ``k``.

        Trials where the stratum had fewer than ``min_n`` calibration images,
        or no test image, are dropped.
        """
        out = []
        for t in self.trials:
            if t.strata_n is None or k >= t.strata_n.size or t.strata_n[k] < min_n:
                continue
            v = t.stratum_fnr(k)
            if not np.isnan(v):
                out.append(v)
        return np.array(out)

    def row(self):
        return {c: getattr(self, c) for c in AGGREGATE_COLUMNS}


class _Pool:
    """Scores of every dataset image under one (score kind, curve) setting."""

    def __init__(self, images, method, curve=None):
        self._images = images
        self._method = method
        self.curve = curve
        self._scores = {}
        self._mass = {}

    def scores(self, i):
        if i not in self._scores:
            self._scores[i] = method_scores(self._method, self._images[i][0], self.curve)
        return self._scores[i]

    def mass(self, i):
        if i not in self._mass:
            self._mass[i] = float(working_probs(self._images[i][0], self.curve).sum())
        return self._mass[i]


def _run_one_trial(t, ids, images, methods, val_frac, cal_frac, seed, raw_pools):
    split = split_dataset(ids, val_frac, cal_frac, seed + t)
    pos = {sid: i for i, sid in enumerate(ids)}
    val = [pos[s] for s in split.val_ids]
    cal = [pos[s] for s in split.cal_ids]
    test = [pos[s] for s in split.test_ids]

    # calibrated scores depend on the trial's curve, one per n_bins setting
    calibrated_pools = {}
    results = []
    for spec in methods:
        if spec.method.calibrated:
            if spec.n_bins not in calibrated_pools:
                curve = fit_curve(spec, [images[i] for i in val])
                calibrated_pools[spec.n_bins] = _Pool(images, spec.method, curve)
            pool = calibrated_pools[spec.n_bins]
        else:
            pool = raw_pools[spec.method.adaptive]
        fitted = fit_from_scores(spec, pool.curve,
                                 [(pool.scores(i), images[i][1]) for i in cal],
                                 [pool.mass(i) for i in cal])
        image_results = []
        for i in test:
            tau, k = threshold_for_mass(fitted, pool.mass(i) if fitted.strata is not None else 0.0)
            pred = pool.scores(i) >= tau
            image_results.append(evaluate_image(pred, images[i][1], ids[i], k))
        strata_n = fitted.strata.n.copy() if fitted.strata is not None else None
        results.append(TrialResult(spec.label, spec.alpha, t, image_results, strata_n))
    return results


def _threads():
    try:
        return max(1, int(os.environ.get("SEGRC_THREADS", "1")))
    except ValueError:
        return 1


def run_trials(dataset, methods, n_trials=100, cal_frac=0.5, seed=0, val_frac=0.2,
               n_threads=None):
    """Repeated random splits; every method is fitted and tested on each split.

    Parameters
    ----------
    dataset : list
        Samples with ``sample_id``, ``probs`` and ``mask``.
    methods : list of MethodSpec
    n_trials : int
        Trial ``t`` uses the split drawn with seed ``seed + t``; all methods
        share it, so per-trial differences between methods are paired.
    cal_frac, val_frac : float
        Calibration and validation fractions; the rest is tested. The
        validation split is held out in every trial, and only calibrated
        methods use it.
    n_threads : int, optional
        Trials run concurrently on this many threads (default from
        ``SEGRC_THREADS``, else 1). Results do not depend on it.

    Returns
    -------
    list of TrialReport
        One per entry of ``methods``, in order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    methods = list(methods)
    if not methods:
        raise ValueError("no methods given")
    if any(m.method.calibrated for m in methods) and val_frac <= 0:
        raise ValueError("calibrated methods need val_frac > 0")
    ids = [s.sample_id for s in dataset]
    images = [(np.asarray(s.probs, dtype=np.float64), np.asarray(s.mask)) for s in dataset]
    raw_pools = {False: _Pool(images, Method.CRC), True: _Pool(images, Method.CRA)}
    # warm the shared caches so worker threads only read them
    for pool in raw_pools.values():
        for i in range(len(images)):
            pool.scores(i)
            pool.mass(i)

    def work(t):
        return _run_one_trial(t, ids, images, methods, val_frac, cal_frac, seed, raw_pools)

    n_threads = n_threads or _threads()
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as ex:
            per_trial = list(ex.map(work, range(n_trials)))
    else:
        per_trial = [work(t) for t in range(n_trials)]
    logger.info("ran %d trials x %d methods", n_trials, len(methods))
    return [TrialReport(spec.label, spec.alpha, [trial[j] for trial in per_trial])
            for j, spec in enumerate(methods)]


def sweep_alpha(dataset, methods, alphas, n_trials=100, seed=0, cal_frac=0.5, val_frac=0.2,
                n_threads=None, **spec_kwargs):
    """One report per (method, alpha) over a shared set of trial splits.

    ``methods`` holds method names or :class:`Method` values; ``spec_kwargs``
    (``B``, ``K``, ``n_bins``, ``min_stratum_size``) go to every spec.
    """
    alphas = list(alphas)
    if not alphas:
        raise ValueError("alphas must be nonempty")
    specs = [MethodSpec(Method.parse(m), float(a), **spec_kwargs)
             for m in methods for a in alphas]
    return run_trials(dataset, specs, n_trials=n_trials, cal_frac=cal_frac, seed=seed,
                      val_frac=val_frac, n_threads=n_threads)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_trials_csv(reports, path):
    """One row per (method, alpha, trial)."""
    rows = []
    for rep in reports:
        for t in rep.trials:
            rows.append({c: getattr(t, c) for c in TRIAL_COLUMNS})
    _write_rows(path, TRIAL_COLUMNS, rows)


def write_aggregate_csv(reports, path):
    """One row per (method, alpha) with across-trial and pooled-sample spreads."""
    _write_rows(path, AGGREGATE_COLUMNS, [rep.row() for rep in reports])


def write_strata_csv(reports, path, min_n=0):
    """Per-stratum mean FNR and its across-trial standard error (CCRA-S only)."""
    columns = ["method", "alpha", "stratum", "n_trials", "mean_fnr", "se_fnr"]
    rows = []
    for rep in reports:
        sizes = [t.strata_n.size for t in rep.trials if t.strata_n is not None]
        if not sizes:
            continue
        for k in range(max(sizes)):
            f = rep.stratum_fnr(k, min_n)
            rows.append({"method": rep.method, "alpha": rep.alpha, "stratum": k,
                         "n_trials": f.size,
                         "mean_fnr": float(f.mean()) if f.size else float("nan"),
                         "se_fnr": _std(f, 1) / np.sqrt(f.size) if f.size else float("nan")})
    _write_rows(path, columns, rows)


def coverage_histogram(report, bins=20):
    """Density histogram of pooled per-image coverage on [0, 1]."""
    density, edges = np.histogram(report.sample_coverages(), bins=bins, range=(0.0, 1.0),
                                  density=True)
    return edges, density


def write_histogram_csv(reports, path, bins=20):
    columns = ["method", "alpha", "bin_lo", "bin_hi", "density"]
    rows = []
    for rep in reports:
        edges, density = coverage_histogram(rep, bins)
        for lo, hi, d in zip(edges[:-1], edges[1:], density):
            rows.append({"method": rep.method, "alpha": rep.alpha,
                         "bin_lo": lo, "bin_hi": hi, "density": d})
    _write_rows(path, columns, rows)
