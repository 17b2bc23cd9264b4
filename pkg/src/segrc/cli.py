"""Command-line entry point: ``segrc {synth,calibrate,predict,eval,sweep}``.

Every flag may also come from a ``--config`` file of ``key = value`` lines
(keys are flag names without the leading dashes); flags given on the
command line win. All flags are checked before any file is read or
written, and bad values exit with a usage message and status 2. Runtime
failures (unreadable inputs, too few samples for a split) exit with 1.

Randomness: ``synth`` derives image ``i`` from ``(seed, i)``; ``calibrate``
draws its split from ``seed``; ``eval`` and ``sweep`` use ``seed + t`` for
trial ``t``.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import __version__
from .dataset_io import load_dataset, read_array, read_manifest, split_dataset, write_array
from .evaluation import (run_trials, write_aggregate_csv, write_histogram_csv, write_strata_csv,
                         write_trials_csv)
from .methods import Method, MethodSpec, fit, image_threshold, load_fitted, predict, save_fitted
from .risk_quantile import CalibrationError
from .synthetic import SynthConfig, generate, parse_miscalibration, write_dataset

logger = logging.getLogger("segrc")

METHOD_NAMES = "crc,cra,ccra,ccra-s"


# flag value parsers; argparse turns ArgumentTypeError into a usage error

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite, got {text!r}")
    return v


def _nonneg_float(text):
    v = _float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {v}")
    return v


def _alpha(text):
    v = _float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {v}")
    return v


def _size(text):
    h, sep, w = text.lower().partition("x")
    try:
        h, w = int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    if not sep or h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be two positive integers HxW, got {text!r}")
    return h, w


def _scale_range(text):
    lo, sep, hi = text.partition(":")
    lo, hi = _float(lo), _float(hi) if sep else _float(lo)
    if not 0 < lo <= hi <= 1:
        raise argparse.ArgumentTypeError(f"scale must be MIN:MAX with 0 < MIN <= MAX <= 1, got {text!r}")
    return lo, hi


def _split(text):
    val, sep, cal = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"split must be VAL:CAL fractions, got {text!r}")
    val, cal = _nonneg_float(val), _nonneg_float(cal)
    if cal <= 0 or val + cal >= 1:
        raise argparse.ArgumentTypeError(f"split needs CAL > 0 and VAL + CAL < 1, got {text!r}")
    return val, cal


def _miscal(text):
    try:
        return parse_miscalibration(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _method(text):
    try:
        return Method.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _methods(text):
    names = [t for t in text.split(",") if t.strip()]
    if not names:
        raise argparse.ArgumentTypeError("no methods given")
    methods = [_method(t) for t in names]
    if len(set(methods)) != len(methods):
        raise argparse.ArgumentTypeError(f"duplicate methods in {text!r}")
    return methods


def _alphas(text):
    """``a,b,c`` or an inclusive range ``start:stop:step``."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"alpha range must be START:STOP:STEP, got {text!r}")
        start, stop, step = (_float(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad alpha range {text!r}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + i * step, 12) for i in range(n)]
    else:
        values = [_float(t) for t in text.split(",") if t.strip()]
    if not values:
        raise argparse.ArgumentTypeError("no alpha values given")
    for v in values:
        _alpha(repr(v))
    return values


def build_parser():
    """Top-level parser and a dict of subcommand parsers."""
    parser = argparse.ArgumentParser(prog="segrc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value file supplying default flags")
        subs[name] = p
        return p

    p = add("synth", "generate a synthetic dataset")
    p.add_argument("--n", type=_positive_int, default=100, help="number of images")
    p.add_argument("--size", type=_size, default=(32, 32), help="image size HxW")
    p.add_argument("--miscal", type=_miscal, default=("none", 1.0),
                   help="none, sharpen:G or flatten:G")
    p.add_argument("--noise-sd", type=_nonneg_float, default=0.0, help="logit noise std")
    p.add_argument("--scale", type=_scale_range, default=(0.01, 0.3),
                   help="blob area range MIN:MAX as image fractions")
    p.add_argument("--blobs", type=_positive_int, default=1, help="blobs per image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")

    def method_options(p):
        p.add_argument("--k", type=_positive_int, default=4, help="strata for CCRA-S")
        p.add_argument("--n-bins", type=_positive_int, default=1000,
                       help="isotonic calibration bins")
        p.add_argument("--loss-bound", dest="B", type=_nonneg_float, default=1.0,
                       help="upper bound B on the per-image loss")
        p.add_argument("--min-stratum-size", type=_positive_int, default=20,
                       help="smaller strata use the global threshold")
        p.add_argument("--split", type=_split, default=(0.2, 0.5),
                       help="validation and calibration fractions VAL:CAL")
        p.add_argument("--manifest", help="dataset manifest CSV")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory")

    p = add("calibrate", "fit one method and save it")
    p.add_argument("--method", type=_method, help=METHOD_NAMES)
    p.add_argument("--alpha", type=_alpha, help="target false negative rate")
    method_options(p)

    p = add("predict", "write prediction masks with a saved model")
    p.add_argument("--model", help="directory written by calibrate")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--all", action="store_true",
                   help="predict every sample, not only the model's test split")

    p = add("eval", "repeated-split evaluation of several methods")
    p.add_argument("--methods", type=_methods, default=_methods(METHOD_NAMES))
    p.add_argument("--alpha", type=_alphas, default=[0.1],
                   help="one alpha or a comma-separated list")
    p.add_argument("--trials", type=_positive_int, default=100)
    method_options(p)

    p = add("sweep", "evaluation over a range of alphas")
    p.add_argument("--methods", type=_methods, default=_methods(METHOD_NAMES))
    p.add_argument("--alphas", type=_alphas, default=_alphas("0.01:0.20:0.01"),
                   help="START:STOP:STEP (inclusive) or a comma-separated list")
    p.add_argument("--trials", type=_positive_int, default=100)
    method_options(p)
    return parser, subs


REQUIRED = {
    "synth": ["out"],
    "calibrate": ["method", "alpha", "manifest", "out"],
    "predict": ["model", "manifest", "out"],
    "eval": ["manifest", "out"],
    "sweep": ["manifest", "out"],
}


def read_config(path, subparser):
    """Parse a ``key = value`` file into string defaults for ``subparser``."""
    names = {}
    for action in subparser._actions:
        names[action.dest] = action
        for opt in action.option_strings:
            names[opt.lstrip("-").replace("-", "_")] = action
    defaults = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().lstrip("-").replace("-", "_")
            if not sep or key not in names or key in ("config", "help"):
                subparser.error(f"{path}:{lineno}: unknown or malformed entry {line!r}")
            action = names[key]
            value = value.strip()
            if isinstance(action, argparse._StoreTrueAction):
                if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    subparser.error(f"{path}:{lineno}: {key} expects true or false")
                defaults[action.dest] = value.lower() in ("1", "true", "yes")
            else:
                defaults[action.dest] = value
    return defaults


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    sub = subs[args.command]
    if args.config:
        if not os.path.isfile(args.config):
            sub.error(f"config file {args.config} not found")
        sub.set_defaults(**read_config(args.config, sub))
        args = parser.parse_args(argv)
    for dest in REQUIRED[args.command]:
        if getattr(args, dest) is None:
            sub.error(f"--{dest.replace('_', '-')} is required")
    for dest in ("manifest", "model"):
        path = getattr(args, dest, None)
        if path is not None and not os.path.exists(path):
            sub.error(f"--{dest}: {path} does not exist")
    if args.command in ("calibrate", "eval", "sweep"):
        val, _ = args.split
        calibrated = ([args.method] if args.command == "calibrate" else args.methods)
        if val == 0 and any(m.calibrated for m in calibrated):
            sub.error("CCRA and CCRA-S need a validation fraction above 0 in --split")
    return args


def _spec_kwargs(args):
    return dict(B=args.B, K=args.k, n_bins=args.n_bins, min_stratum_size=args.min_stratum_size)


def cmd_synth(args):
    mode, gamma = args.miscal
    config = SynthConfig(n_images=args.n, height=args.size[0], width=args.size[1],
                         object_scale_range=args.scale, n_blobs=args.blobs,
                         miscalibration=mode, gamma=gamma, noise_sd=args.noise_sd,
                         seed=args.seed)
    manifest = write_dataset(generate(config), args.out)
    n = len(load_dataset(manifest))
    logger.info("wrote %d samples to %s", n, manifest)
    return manifest


def cmd_calibrate(args):
    samples = load_dataset(args.manifest)
    val_frac, cal_frac = args.split
    split = split_dataset(samples, val_frac, cal_frac, args.seed)
    by_id = {s.sample_id: s for s in samples}
    spec = MethodSpec(args.method, args.alpha, **_spec_kwargs(args))
    val = [by_id[i] for i in split.val_ids] if spec.method.calibrated else None
    fitted = fit(spec, val, [by_id[i] for i in split.cal_ids])
    fitted.extra.update(split_seed=args.seed, val_frac=repr(val_frac),
                        cal_frac=repr(cal_frac), n_samples=len(samples))
    save_fitted(fitted, args.out)
    check = load_fitted(args.out)
    if check.tau != fitted.tau:
        raise ValueError(f"model in {args.out} did not read back")
    logger.info("%s alpha=%g tau=%r on %d calibration images", spec.label, spec.alpha,
                fitted.tau, fitted.n_cal)
    return fitted


def _test_ids(fitted, samples):
    keys = ("split_seed", "val_frac", "cal_frac")
    if not all(k in fitted.extra for k in keys):
        return None
    n = int(fitted.extra.get("n_samples", len(samples)))
    if n != len(samples):
        raise ValueError(f"model was calibrated on {n} samples but the manifest lists "
                         f"{len(samples)}; use --all to predict every sample")
    split = split_dataset(samples, float(fitted.extra["val_frac"]),
                          float(fitted.extra["cal_frac"]), int(fitted.extra["split_seed"]))
    return set(split.test_ids)


def cmd_predict(args):
    if not os.path.isdir(args.model):
        raise FileNotFoundError(f"model directory {args.model} not found")
    fitted = load_fitted(args.model)
    samples = load_dataset(args.manifest)
    keep = None if args.all else _test_ids(fitted, samples)
    targets = [s for s in samples if keep is None or s.sample_id in keep]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for s in targets:
        pred = predict(fitted, s.probs)
        tau, k = image_threshold(fitted, s.probs)
        path = os.path.join(args.out, f"{s.sample_id}.npy")
        write_array(path, pred.astype(np.uint8), kind="mask")
        if not np.array_equal(read_array(path), pred):
            raise ValueError(f"{path} did not read back")
        rows.append([s.sample_id, f"{s.sample_id}.npy", repr(float(tau)),
                     "" if k is None else k, int(pred.sum())])
    with open(os.path.join(args.out, "predictions.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "mask_path", "tau", "stratum", "set_size"])
        writer.writerows(rows)
    logger.info("wrote %d prediction masks to %s", len(rows), args.out)
    return rows


def _evaluate(args, alphas):
    samples = load_dataset(args.manifest)
    val_frac, cal_frac = args.split
    specs = [MethodSpec(m, a, **_spec_kwargs(args)) for m in args.methods for a in alphas]
    return run_trials(samples, specs, n_trials=args.trials, cal_frac=cal_frac,
                      seed=args.seed, val_frac=val_frac)


def cmd_eval(args):
    reports = _evaluate(args, args.alpha)
    os.makedirs(args.out, exist_ok=True)
    write_trials_csv(reports, os.path.join(args.out, "trials.csv"))
    write_aggregate_csv(reports, os.path.join(args.out, "aggregate.csv"))
    write_strata_csv(reports, os.path.join(args.out, "strata.csv"), args.min_stratum_size)
    write_histogram_csv(reports, os.path.join(args.out, "histogram.csv"))
    for r in reports:
        logger.info("%-6s alpha=%.3f coverage=%.4f gap=%.4f", r.method, r.alpha,
                    r.marginal_coverage, r.coverage_gap)
    return reports


def cmd_sweep(args):
    reports = _evaluate(args, args.alphas)
    os.makedirs(args.out, exist_ok=True)
    write_aggregate_csv(reports, os.path.join(args.out, "sweep.csv"))
    write_trials_csv(reports, os.path.join(args.out, "sweep_trials.csv"))
    return reports


COMMANDS = {"synth": cmd_synth, "calibrate": cmd_calibrate, "predict": cmd_predict,
            "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None):
    """Run one command; returns the process exit status."""
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, CalibrationError) as e:
        logger.error("%s: %s", args.command, e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
