"""Array files, dataset manifests and calibration splits.

Probability maps are stored as little-endian float32 and masks as uint8, both
in the version 1.0 ``.npy`` layout so that outputs of external segmentation
models load without conversion.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PROB_DTYPE = np.dtype("<f4")
MASK_DTYPE = np.dtype("|u1")
MANIFEST_HEADER = ("sample_id", "prob_path", "mask_path")


class FormatError(ValueError):
    """Raised when an array file is not a well-formed 2-D probability or mask file."""


class ValidationError(ValueError):
    """Raised when array values violate the probability or mask invariants."""


def check_probability_map(probs):
    """Validate a probability map and return it as a 2-D float array."""
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
        raise ValidationError(f"probability map must be 2-D and nonempty, got shape {probs.shape}")
    if not np.issubdtype(probs.dtype, np.floating):
        raise ValidationError(f"probability map must be floating point, got {probs.dtype}")
    if not np.all(np.isfinite(probs)):
        raise ValidationError("probability map contains NaN or inf")
    if probs.min() < 0 or probs.max() > 1:
        raise ValidationError("probability map values must lie in [0, 1]")
    return probs


def check_mask(mask, shape=None):
    """Validate a binary mask; optionally require it to match ``shape``."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValidationError(f"mask must be 2-D and nonempty, got shape {mask.shape}")
    if mask.dtype != bool:
        if not (np.issubdtype(mask.dtype, np.integer) or np.issubdtype(mask.dtype, np.floating)):
            raise ValidationError(f"unsupported mask dtype {mask.dtype}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValidationError("mask values must be 0 or 1")
    if shape is not None and mask.shape != tuple(shape):
        raise ValidationError(f"mask shape {mask.shape} does not match {tuple(shape)}")
    return mask


def write_array(path, array, kind=None):
    """Write a probability map or mask to ``path``.

    ``kind`` is ``"prob"`` or ``"mask"``; when omitted it is inferred from the
    dtype (floating point means probabilities, bool/integer means mask).
    Probabilities are cast to float32, masks to uint8.
    """
    array = np.asarray(array)
    if kind is None:
        kind = "prob" if np.issubdtype(array.dtype, np.floating) else "mask"
    if kind == "prob":
        out = check_probability_map(array).astype(PROB_DTYPE)
    elif kind == "mask":
        out = check_mask(array).astype(MASK_DTYPE)
    else:
        raise ValueError(f"kind must be 'prob' or 'mask', got {kind!r}")
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, np.ascontiguousarray(out), version=(1, 0), allow_pickle=False)


def read_array(path):
    """Read a probability map (float32) or mask (uint8) written by :func:`write_array`.

    Raises
    ------
    FormatError
        Bad magic string, unsupported version or dtype, non 2-D shape, or
        Fortran ordering.
    ValidationError
        Probability outside [0, 1] (or NaN), or mask value other than 0/1.
    """
    with open(path, "rb") as fh:
        try:
            version = np.lib.format.read_magic(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if version != (1, 0):
            raise FormatError(f"{path}: unsupported format version {version}")
        try:
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if fortran_order:
            raise FormatError(f"{path}: Fortran-ordered arrays are not supported")
        if len(shape) != 2:
            raise FormatError(f"{path}: expected a 2-D array, got shape {shape}")
        if dtype == PROB_DTYPE:
            kind = "prob"
        elif dtype == MASK_DTYPE:
            kind = "mask"
        else:
            raise FormatError(f"{path}: unsupported dtype {dtype.str}")
        count = shape[0] * shape[1]
        data = np.fromfile(fh, dtype=dtype, count=count)
        if data.size != count:
            raise FormatError(f"{path}: truncated data ({data.size} of {count} values)")
    array = data.reshape(shape)
    if kind == "prob":
        check_probability_map(array)
    else:
        check_mask(array)
    return array


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    prob_path: str
    mask_path: str


def write_manifest(path, records):
    """Write manifest records; paths are stored relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            writer.writerow([
                rec.sample_id,
                os.path.relpath(os.path.abspath(rec.prob_path), base),
                os.path.relpath(os.path.abspath(rec.mask_path), base),
            ])


def read_manifest(path, check_files=True):
    """Read a manifest and resolve its paths against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise FormatError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            sample_id, prob_path, mask_path = (c.strip() for c in row)
            if sample_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate sample_id {sample_id!r}")
            seen.add(sample_id)
            rec = ManifestRecord(sample_id,
                                 os.path.normpath(os.path.join(base, prob_path)),
                                 os.path.normpath(os.path.join(base, mask_path)))
            if check_files:
                for p in (rec.prob_path, rec.mask_path):
                    if not os.path.isfile(p):
                        raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
            records.append(rec)
    return records


@dataclass
class Sample:
    """One image: model probabilities and (possibly empty) ground-truth mask."""

    sample_id: str
    probs: np.ndarray
    mask: np.ndarray


def load_dataset(manifest_path):
    """Load every sample listed in a manifest, checking shapes agree."""
    samples = []
    for rec in read_manifest(manifest_path):
        probs = read_array(rec.prob_path)
        mask = read_array(rec.mask_path)
        if probs.dtype != PROB_DTYPE:
            raise FormatError(f"{rec.prob_path}: expected a probability file")
        if mask.dtype != MASK_DTYPE:
            raise FormatError(f"{rec.mask_path}: expected a mask file")
        check_mask(mask, probs.shape)
        samples.append(Sample(rec.sample_id, probs, mask))
    logger.info("loaded %d samples from %s", len(samples), manifest_path)
    return samples


@dataclass(frozen=True)
class SplitSpec:
    val_ids: tuple
    cal_ids: tuple
    test_ids: tuple
    seed: int

    def __post_init__(self):
        val, cal, test = set(self.val_ids), set(self.cal_ids), set(self.test_ids)
        if val & cal or val & test or cal & test:
            raise ValueError("split id lists must be pairwise disjoint")


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_dataset(ids, val_frac, cal_frac, seed):
    """Randomly partition ``ids`` into validation, calibration and test lists.

    ``ids`` may be plain ids or objects with a ``sample_id`` attribute
    (manifest records, samples).

    Counts are ``round(val_frac * n)`` and ``round(cal_frac * n)``; the rest is
    the test split. Order within each list follows a seeded permutation, so
    the same seed always yields the same split.
    """
    ids = [getattr(x, "sample_id", x) for x in ids]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    if val_frac < 0 or cal_frac < 0 or val_frac + cal_frac >= 1:
        raise ValueError("need val_frac >= 0, cal_frac >= 0 and val_frac + cal_frac < 1")
    n = len(ids)
    n_val = _round_half_up(val_frac * n)
    n_cal = _round_half_up(cal_frac * n)
    n_test = n - n_val - n_cal
    if (val_frac > 0 and n_val == 0) or (cal_frac > 0 and n_cal == 0) or n_test < 1:
        raise ValueError(
            f"{n} samples cannot populate splits val={val_frac}, cal={cal_frac}, test>0")
    order = np.random.default_rng(seed).permutation(n)
    perm = [ids[i] for i in order]
    return SplitSpec(tuple(perm[:n_val]), tuple(perm[n_val:n_val + n_cal]),
                     tuple(perm[n_val + n_cal:]), seed)
