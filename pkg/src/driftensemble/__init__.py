"""Streaming drift detection with an ADWIN / Page-Hinkley / KSWIN voting ensemble."""

from .calibration import BaselineStats, CalibrationProfile, GridSpec, calibrate, collect_baseline, load_profile
from .detector import Detector, DriftEvent, WindowModel, adapt_voting_length, one_sample_ks_z, vote
from .driftgen import SENSOR_PROFILES, SensorProfile, generate_experiment, q_grid
from .errors import BusClosedError, BusyError, DriftEnsembleError, FormatError, InputError, StateError
from .estimators import Adwin, Kswin, PageHinkley, Sample, ks_two_sample_distance
from .metrics import f1_score

__version__ = "0.1.0"

__all__ = [
    "Adwin",
    "BaselineStats",
    "BusClosedError",
    "BusyError",
    "CalibrationProfile",
    "Detector",
    "DriftEnsembleError",
    "DriftEvent",
    "FormatError",
    "GridSpec",
    "InputError",
    "Kswin",
    "PageHinkley",
    "SENSOR_PROFILES",
    "Sample",
    "SensorProfile",
    "StateError",
    "WindowModel",
    "adapt_voting_length",
    "calibrate",
    "collect_baseline",
    "f1_score",
    "generate_experiment",
    "ks_two_sample_distance",
    "load_profile",
    "one_sample_ks_z",
    "q_grid",
    "vote",
]
