"""Fit/predict pipelines for CRC, CRA, CCRA and CCRA-S.

=======  ==================================================================
CRC      threshold on raw probabilities
CRA      threshold on the CRA score of raw probabilities
CCRA     isotonic calibration fitted on a validation split, then CRA
CCRA-S   CCRA with one threshold per stratum of calibrated total mass
=======  ==================================================================

Images are passed as ``(probs, mask)`` pairs or as objects with ``probs``
and ``mask`` attributes (e.g. :class:`segrc.dataset_io.Sample`).
"""

import csv
import enum
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .calibration import CLIP_EPSILON, DEFAULT_BINS, CalibrationCurve, fit_isotonic
from .risk_quantile import CalibrationError, collect_weighted_scores, weighted_quantile_threshold
from .scores import DegenerateInputError, cra_score, crc_score, threshold_set
from .stratification import DEFAULT_K, MIN_STRATUM_SIZE, StrataModel, assign_stratum, fit_strata_model


class Method(str, enum.Enum):
    CRC = "CRC"
    CRA = "CRA"
    CCRA = "CCRA"
    CCRA_S = "CCRA-S"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("_", "-")
        for m in cls:
            if m.value == key:
                return m
        raise ValueError(f"unknown method {name!r}; expected one of crc, cra, ccra, ccra-s")

    @property
    def calibrated(self):
        return self in (Method.CCRA, Method.CCRA_S)

    @property
    def adaptive(self):
        return self is not Method.CRC


class DegenerateImageWarning(UserWarning):
    """An image with zero total mass was given the all-pixel prediction set."""


@dataclass(frozen=True)
class MethodSpec:
    method: Method
    alpha: float
    B: float = 1.0
    K: int = DEFAULT_K
    n_bins: int = DEFAULT_BINS
    min_stratum_size: int = MIN_STRATUM_SIZE

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.B < 0:
            raise ValueError("B must be nonnegative")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.n_bins < 1:
            raise ValueError("n_bins must be at least 1")

    @property
    def label(self):
        return self.method.value


@dataclass(frozen=True)
class FittedMethod:
    spec: MethodSpec
    tau: float
    n_cal: int
    curve: CalibrationCurve | None = None
    strata: StrataModel | None = None
    n_empty: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.curve is not None) != self.spec.method.calibrated:
            raise ValueError(f"{self.spec.label} requires curve={self.spec.method.calibrated}")
        if (self.strata is not None) != (self.spec.method is Method.CCRA_S):
            raise ValueError(f"strata are set only for CCRA-S, not {self.spec.label}")


def _pair(image):
    if isinstance(image, tuple):
        return image
    return image.probs, image.mask


def working_probs(probs, curve=None):
    """Probabilities a method scores: raw, or passed through the calibration curve."""
    p = np.asarray(probs, dtype=np.float64)
    return p if curve is None else curve(p)


def method_scores(method, probs, curve=None):
    """Conformity scores of one image for ``method``.

    For the CRA family a zero-mass image gets score 1 everywhere, so that any
    threshold keeps every pixel; a :class:`DegenerateImageWarning` is issued.
    """
    method = Method.parse(method)
    p = working_probs(probs, curve)
    if not method.adaptive:
        return crc_score(p)
    try:
        return cra_score(p)
    except DegenerateInputError:
        warnings.warn("zero total probability mass; keeping every pixel",
                      DegenerateImageWarning, stacklevel=2)
        return np.ones(p.shape)


def fit_curve(spec, val_images):
    """Isotonic calibration curve for a calibrated method, else ``None``.

    Raises ``ValueError`` if validation images are missing for a calibrated
    method or supplied for an uncalibrated one.
    """
    val_images = list(val_images or [])
    if not spec.method.calibrated:
        if val_images:
            raise ValueError(f"{spec.label} does not use a validation set")
        return None
    if not val_images:
        raise ValueError(f"{spec.label} needs a nonempty validation set")
    pairs = [_pair(im) for im in val_images]
    raw = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p, _ in pairs])
    labels = np.concatenate([np.asarray(m).ravel() for _, m in pairs])
    return fit_isotonic(raw, labels, n_bins=spec.n_bins)


def fit_from_scores(spec, curve, scored, masses=None):
    """Thresholds from already-scored calibration images.

    Parameters
    ----------
    scored : list of (scores, mask)
        Calibration images scored with :func:`method_scores` under ``curve``.
    masses : sequence of float, optional
        Total working-probability mass per image; required for CCRA-S.
    """
    samples = collect_weighted_scores(scored)
    tau = weighted_quantile_threshold(samples, alpha=spec.alpha, B=spec.B).tau
    strata = None
    if spec.method is Method.CCRA_S:
        if masses is None:
            raise ValueError("CCRA-S needs the total mass of every calibration image")
        keep = [i for i, (_, m) in enumerate(scored) if np.any(m)]
        strata = fit_strata_model([scored[i] for i in keep], [masses[i] for i in keep],
                                  spec.alpha, K=spec.K, B=spec.B, global_tau=tau,
                                  min_size=spec.min_stratum_size)
    return FittedMethod(spec, tau, samples.n_images, curve, strata, samples.n_empty)


def fit(spec, val_images, cal_images):
    """Calibrate ``spec`` on the calibration images.

    ``val_images`` feed only the isotonic calibration curve (CCRA, CCRA-S)
    and must be empty or ``None`` for CRC and CRA.

    Raises
    ------
    ValueError
        Validation images missing for a calibrated method, or supplied for
        an uncalibrated one.
    CalibrationError
        No calibration image has a nonempty mask.
    """
    cal_images = [_pair(im) for im in cal_images]
    if not cal_images:
        raise CalibrationError("no calibration images")
    curve = fit_curve(spec, val_images)
    scored = [(method_scores(spec.method, p, curve), m) for p, m in cal_images]
    masses = None
    if spec.method is Method.CCRA_S:
        masses = [working_probs(p, curve).sum() for p, _ in cal_images]
    return fit_from_scores(spec, curve, scored, masses)


def threshold_for_mass(fitted, mass):
    """Threshold for a test image of total working mass ``mass``, and its stratum."""
    if fitted.strata is None:
        return fitted.tau, None
    k = assign_stratum(fitted.strata.edges, mass)
    return float(fitted.strata.tau[k]), k


def image_threshold(fitted, probs):
    """Threshold applied to one test image, and its stratum (or ``None``)."""
    if fitted.strata is None:
        return fitted.tau, None
    return threshold_for_mass(fitted, working_probs(probs, fitted.curve).sum())


def predict(fitted, probs):
    """Boolean prediction set for one test image."""
    scores = method_scores(fitted.spec.method, probs, fitted.curve)
    tau, _ = image_threshold(fitted, probs)
    return threshold_set(scores, tau)


def save_fitted(fitted, directory):
    """Write ``spec.csv`` plus ``curve.csv`` / ``strata.csv`` when present."""
    os.makedirs(directory, exist_ok=True)
    spec = fitted.spec
    rows = [
        ("method", spec.label),
        ("alpha", repr(float(spec.alpha))),
        ("B", repr(float(spec.B))),
        ("K", str(spec.K)),
        ("n_bins", str(spec.n_bins)),
        ("min_stratum_size", str(spec.min_stratum_size)),
        ("tau", repr(float(fitted.tau))),
        ("n_cal", str(fitted.n_cal)),
        ("n_empty", str(fitted.n_empty)),
    ]
    rows += [(k, str(v)) for k, v in fitted.extra.items()]
    with open(os.path.join(directory, "spec.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        writer.writerows(rows)
    for name, obj in (("curve.csv", fitted.curve), ("strata.csv", fitted.strata)):
        path = os.path.join(directory, name)
        if obj is not None:
            obj.to_csv(path)
        elif os.path.exists(path):
            os.remove(path)


_SPEC_KEYS = {"method", "alpha", "B", "K", "n_bins", "min_stratum_size", "tau", "n_cal", "n_empty"}


def load_fitted(directory):
    """Inverse of :func:`save_fitted`."""
    spec_path = os.path.join(directory, "spec.csv")
    if not os.path.isfile(spec_path):
        raise FileNotFoundError(f"no spec.csv in {directory}")
    with open(spec_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["key", "value"]:
            raise ValueError(f"{spec_path}: expected header key,value")
        kv = dict(row for row in reader if row)
    spec = MethodSpec(kv["method"], float(kv["alpha"]), float(kv["B"]), int(kv["K"]),
                      int(kv["n_bins"]), int(kv["min_stratum_size"]))
    tau = float(kv["tau"])
    curve = strata = None
    if spec.method.calibrated:
        curve = CalibrationCurve.from_csv(os.path.join(directory, "curve.csv"), CLIP_EPSILON)
    if spec.method is Method.CCRA_S:
        strata = StrataModel.from_csv(os.path.join(directory, "strata.csv"), tau,
                                      spec.min_stratum_size)
    extra = {k: v for k, v in kv.items() if k not in _SPEC_KEYS}
    return FittedMethod(spec, tau, int(kv["n_cal"]), curve, strata,
                        int(kv.get("n_empty", 0)), extra)
