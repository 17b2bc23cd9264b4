"""Conformal risk control of the false negative rate for binary segmentation."""

from .calibration import CalibrationCurve, apply_calibration, fit_isotonic, pava
from .dataset_io import (FormatError, Sample, SplitSpec, ValidationError, load_dataset,
                         read_array, read_manifest, split_dataset, write_array, write_manifest)
from .evaluation import (ImageResult, TrialReport, evaluate_image, run_trials, sweep_alpha,
                         write_aggregate_csv, write_trials_csv)
from .methods import (FittedMethod, Method, MethodSpec, fit, load_fitted, predict,
                      save_fitted)
from .risk_quantile import (CalibrationError, ThresholdResult, collect_weighted_scores,
                            grid_search_threshold, weighted_quantile_threshold)
from .scores import DegenerateInputError, adaptive_set, cra_score, crc_score, threshold_set
from .stratification import StrataModel, assign_stratum, fit_stratum_thresholds, fit_strata
from .synthetic import SynthConfig, generate

__version__ = "0.1.0"
