"""Online change estimators: ADWIN, two-sided Page-Hinkley and KSWIN.

Each estimator owns its mutable state and exposes ``insert(x)`` which folds one
value in and reports whether a change was detected at that sample. The heavy
lifting lives in :mod:`driftensemble._kernels` so the batch experiment runner and
these streaming objects execute the very same code.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import InputError

__all__ = [
    "Adwin",
    "Direction",
    "EstimatorVerdict",
    "Kswin",
    "PageHinkley",
    "Sample",
    "adwin_epsilon_cut",
    "kswin_threshold",
    "ks_two_sample_distance",
]


@dataclass(frozen=True, slots=True)
class Sample:
    """One timestamped reading on one stream."""

    index: int
    timestamp: int  # milliseconds, monotonic
    value: float

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)


class Direction(str, enum.Enum):
    NONE = "none"
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True, slots=True)
class EstimatorVerdict:
    drifted: bool
    direction: Direction = Direction.NONE

    def __post_init__(self) -> None:
        if self.direction is not Direction.NONE and not self.drifted:
            raise InputError("a directional verdict must be a detection")

    def __bool__(self) -> bool:
        return self.drifted


NO_DRIFT = EstimatorVerdict(False)
DRIFT = EstimatorVerdict(True)
DRIFT_UP = EstimatorVerdict(True, Direction.UP)
DRIFT_DOWN = EstimatorVerdict(True, Direction.DOWN)


def _finite(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise InputError(f"non-finite sample value: {x!r}")
    return x


def _unit_interval(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise InputError(f"{name} must lie in (0, 1), got {value}")
    return value


def adwin_epsilon_cut(n_hist: float, n_new: float, variance: float, delta: float, n_total: float) -> float:
    """Threshold a cut's mean difference must exceed for ADWIN to drop the older part."""
    if n_hist <= 0 or n_new <= 0:
        raise InputError("both sub-windows must be non-empty")
    return float(K.adwin_epsilon_cut(float(n_hist), float(n_new), float(variance), float(delta), float(n_total)))


def kswin_threshold(alpha: float, l_r: int) -> float:
    return math.sqrt(-math.log(alpha) / l_r)


class Adwin:
    """Adaptive windowing over an exponential histogram of (count, sum, sum-of-squares) buckets.

    At every insert all bucket boundaries are tried as cuts between an older and a
    newer sub-window; any cut whose mean gap beats the Bernstein-style bound drops
    the older part.
    """

    def __init__(self, delta: float = 0.002, max_buckets: int = 5) -> None:
        self.delta = _unit_interval("delta", delta)
        if max_buckets < 2:
            raise InputError("max_buckets must be at least 2")
        self.max_buckets = int(max_buckets)
        self._sums = np.zeros((K.ADWIN_MAX_LEVELS, self.max_buckets + 1))
        self._sqs = np.zeros((K.ADWIN_MAX_LEVELS, self.max_buckets + 1))
        self._nb = np.zeros(K.ADWIN_MAX_LEVELS, np.int64)
        self._totals = np.zeros(3)
        self.n_detections = 0

    def insert(self, x: float) -> EstimatorVerdict:
        x = _finite(x)
        if K.adwin_insert(self._sums, self._sqs, self._nb, self._totals, x, self.delta, self.max_buckets):
            self.n_detections += 1
            return DRIFT
        return NO_DRIFT

    @property
    def width(self) -> int:
        return int(self._totals[0])

    @property
    def total(self) -> float:
        return float(self._totals[1])

    @property
    def total_sq(self) -> float:
        return float(self._totals[2])

    @property
    def mean(self) -> float:
        n = self._totals[0]
        return float(self._totals[1] / n) if n else 0.0

    @property
    def variance(self) -> float:
        n = self._totals[0]
        if not n:
            return 0.0
        mean = self._totals[1] / n
        return float(max(self._totals[2] / n - mean * mean, 0.0))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def buckets(self) -> list[tuple[int, float, float]]:
        """Buckets oldest to newest as ``(count, sum, sum_sq)``."""
        out = []
        for level in range(K.ADWIN_MAX_LEVELS - 1, -1, -1):
            for j in range(self._nb[level]):
                out.append((1 << level, float(self._sums[level, j]), float(self._sqs[level, j])))
        return out

    def largest_bucket(self) -> int:
        levels = np.nonzero(self._nb)[0]
        return int(1 << levels.max()) if levels.size else 0


class PageHinkley:
    """Symmetric Page-Hinkley test built from two one-sided cumulative sums.

    ``initial_mean``/``initial_count`` seed the running mean (a calibrated baseline
    behaves as ``initial_count`` prior samples); detections restore that seed.
    """

    def __init__(self, beta: float, lam: float, initial_mean: float = 0.0, initial_count: int = 0) -> None:
        if beta <= 0 or lam <= 0:
            raise InputError("beta and lambda must be positive")
        if initial_count < 0:
            raise InputError("initial_count must be non-negative")
        self.beta = float(beta)
        self.lam = float(lam)
        self._state = np.zeros(K.PHT_STATE_SIZE)
        self._state[K.P_INIT_N] = float(initial_count)
        self._state[K.P_INIT_MEAN] = float(initial_mean) if initial_count else 0.0
        K.pht_reset(self._state)
        self.n_detections = 0

    def insert(self, x: float) -> EstimatorVerdict:
        x = _finite(x)
        direction = K.pht_insert(self._state, x, self.beta, self.lam)
        if direction == 0:
            return NO_DRIFT
        self.n_detections += 1
        return DRIFT_UP if direction > 0 else DRIFT_DOWN

    @property
    def n(self) -> int:
        return int(self._state[K.P_N] - self._state[K.P_INIT_N])

    @property
    def mean(self) -> float:
        return float(self._state[K.P_MEAN])

    @property
    def u_up(self) -> float:
        return float(self._state[K.P_UP])

    @property
    def u_up_min(self) -> float:
        return float(self._state[K.P_UP_MIN])

    @property
    def u_down(self) -> float:
        return float(self._state[K.P_DOWN])

    @property
    def u_down_max(self) -> float:
        return float(self._state[K.P_DOWN_MAX])


class Kswin:
    """Kolmogorov-Smirnov windowing.

    The window keeps the last ``l_omega + l_r`` values. Once full, the oldest
    ``l_omega`` values are tested against the newest ``l_r`` with the exact
    two-sample distance; a detection keeps only the newest ``l_r`` values.

    The older block is meant to be a uniform draw of ``l_omega`` values from the
    non-recent part of the window. That part holds exactly ``l_omega`` values, so
    the draw is the whole block and the statistic does not depend on ``seed``.
    """

    def __init__(self, alpha: float, l_r: int, l_omega: int = 30, seed: int | None = None) -> None:
        self.alpha = _unit_interval("alpha", alpha)
        if l_r < 2 or l_omega < 2:
            raise InputError("l_r and l_omega must be at least 2")
        self.l_r = int(l_r)
        self.l_omega = int(l_omega)
        self.seed = seed
        self.threshold = kswin_threshold(self.alpha, self.l_r)
        self._window = np.zeros(self.l_omega + self.l_r)
        self._sorted = np.zeros(self.l_r)
        self._meta = np.zeros(2, np.int64)
        self._scratch = np.zeros(self.l_omega)
        self.n_detections = 0

    def insert(self, x: float) -> EstimatorVerdict:
        x = _finite(x)
        if K.kswin_insert(
            self._window, self._sorted, self._meta, self._scratch, x, self.l_omega, self.l_r, self.threshold
        ):
            self.n_detections += 1
            return DRIFT
        return NO_DRIFT

    @property
    def capacity(self) -> int:
        return self.l_omega + self.l_r

    def window(self) -> np.ndarray:
        head, count = self._meta
        idx = (head + np.arange(count)) % self.capacity
        return self._window[idx].copy()

    @property
    def mean(self) -> float:
        w = self.window()
        return float(w.mean()) if w.size else 0.0

    @property
    def std(self) -> float:
        w = self.window()
        return float(w.std()) if w.size else 0.0


def ks_two_sample_distance(a: Sequence[float] | Iterable[float], b: Sequence[float] | Iterable[float]) -> float:
    """Exact two-sample Kolmogorov-Smirnov distance ``sup_x |F_a(x) - F_b(x)|``."""
    xa = np.sort(np.asarray(list(a) if not isinstance(a, np.ndarray) else a, dtype=float))
    xb = np.sort(np.asarray(list(b) if not isinstance(b, np.ndarray) else b, dtype=float))
    if xa.size == 0 or xb.size == 0:
        raise InputError("both samples must be non-empty")
    if not (np.isfinite(xa).all() and np.isfinite(xb).all()):
        raise InputError("samples must be finite")
    return float(K.ks_sorted_distance(xa, xb))
