"""Single-stream throughput benchmark of the streaming detector."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .calibration import CalibrationProfile
from .detector import Detector
from .errors import InputError

__all__ = ["BenchReport", "bench"]


@dataclass(frozen=True)
class BenchReport:
    samples: int
    init_ms: float
    total_s: float
    mean_us: float
    p50_us: float
    p99_us: float
    max_us: float
    samples_per_s: float
    events: int

    def to_dict(self) -> dict:
        return asdict(self)


def bench(profile: CalibrationProfile, n_samples: int = 1_000_000, seed: int = 0, drift_every: int = 0) -> BenchReport:
    """Time detector construction and every ``ingest`` call over baseline-distributed samples.

    With ``drift_every > 0`` the mean alternates between the baseline and a
    five-sigma offset every ``drift_every`` samples, so the firing path is timed too.
    """
    if n_samples < 1:
        raise InputError("n_samples must be positive")
    base = profile.baseline
    rng = np.random.default_rng(seed)
    values = rng.normal(base.mu_prime, base.sigma if base.sigma > 0 else 1.0, n_samples)
    if drift_every > 0:
        phase = (np.arange(n_samples) // drift_every) % 2
        values += 5.0 * max(base.sigma, 1.0) * phase

    # compile outside the timed region
    Detector(profile).ingest(float(values[0]))

    tic = time.perf_counter_ns()
    detector = Detector(profile)
    init_ns = time.perf_counter_ns() - tic

    durations = np.empty(n_samples, np.int64)
    clock = time.perf_counter_ns
    ingest = detector.ingest
    start = clock()
    for i, x in enumerate(values.tolist()):
        t0 = clock()
        ingest(x)
        durations[i] = clock() - t0
    total_ns = clock() - start

    us = durations / 1e3
    return BenchReport(
        samples=n_samples,
        init_ms=init_ns / 1e6,
        total_s=total_ns / 1e9,
        mean_us=float(us.mean()),
        p50_us=float(np.percentile(us, 50)),
        p99_us=float(np.percentile(us, 99)),
        max_us=float(us.max()),
        samples_per_s=n_samples / (total_ns / 1e9),
        events=len(detector.events),
    )
