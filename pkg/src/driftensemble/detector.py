"""Per-stream ensemble detector.

A :class:`Detector` feeds every value to ADWIN, Page-Hinkley and KSWIN, takes a
2-of-3 vote over the last ``L_v`` verdicts, and resizes ``L_v`` from the
mean-change ratio of non-overlapping trend blocks.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import InputError, StateError
from .estimators import Sample

if TYPE_CHECKING:
    from .calibration import CalibrationProfile

__all__ = [
    "DEFAULT_L_M",
    "Detector",
    "DriftEvent",
    "StreamTrace",
    "TrendStats",
    "TrendWindow",
    "VerdictHistory",
    "WindowModel",
    "adapt_voting_length",
    "normalized_window_size",
    "one_sample_ks_z",
    "trend_update",
    "vote",
]

DEFAULT_L_M = 64
# The window model consumes the mean-change ratio in percent.
UPSILON_PERCENT = 100.0
# Largest voting window when none is configured, as a multiple of the smallest.
DEFAULT_L_MAX_FACTOR = 1.5

# (zeta, eta, gamma) of the mean-change-ratio model, fitted per sensor type.
WINDOW_COEFFICIENTS = {
    "temperature": (8.782, -5.021, 1.468),
    "humidity": (9.641, -4.117, 1.508),
    "pressure": (7.590, -5.132, 1.829),
}


@dataclass(frozen=True)
class WindowModel:
    """Maps the mean-change ratio to a voting window length through ``zeta * exp(eta * x) + gamma``."""

    zeta: float
    eta: float
    gamma: float
    l_min: int
    l_max: int

    def __post_init__(self) -> None:
        if not self.zeta > 0:
            raise InputError("zeta must be positive")
        if self.eta == 0 or not math.isfinite(self.eta):
            raise InputError("eta must be finite and non-zero")
        if not self.l_min < self.l_max:
            raise InputError("l_min must be smaller than l_max")
        if self.l_min < 1:
            raise InputError("l_min must be positive")

    @classmethod
    def for_sensor(cls, sensor_type: str, l_k: int, l_max: int | None = None) -> "WindowModel":
        """Reference coefficients for ``sensor_type`` with ``l_min = l_k + 1``."""
        try:
            zeta, eta, gamma = WINDOW_COEFFICIENTS[sensor_type]
        except KeyError:
            raise InputError(f"no window model coefficients for sensor type {sensor_type!r}") from None
        l_min = l_k + 1
        if l_max is None:
            l_max = int(round(DEFAULT_L_MAX_FACTOR * l_min))
        return cls(zeta, eta, gamma, l_min, int(l_max))

    def upsilon(self, x: float) -> float:
        return self.zeta * math.exp(self.eta * x) + self.gamma

    @property
    def initial_length(self) -> int:
        return int(self.l_min + (self.l_max - self.l_min) // 4)


def normalized_window_size(upsilon: float, model: WindowModel) -> float:
    return float(K.normalized_window_size(float(upsilon), model.zeta, model.eta, model.gamma))


def adapt_voting_length(upsilon: float, model: WindowModel) -> int:
    """Voting window length for a mean-change ratio: sharp change gives ``l_min``, none gives ``l_max``."""
    return int(K.voting_length(float(upsilon), model.zeta, model.eta, model.gamma, model.l_min, model.l_max))


@dataclass(frozen=True)
class TrendStats:
    slope: float
    theta_deg: float
    mean: float
    upsilon: float | None  # absent for the first block
    degenerate: bool = False


class TrendWindow:
    """Non-overlapping block of ``l_m`` samples; each full block yields a :class:`TrendStats`."""

    def __init__(self, l_m: int = DEFAULT_L_M) -> None:
        if l_m < 2:
            raise InputError("l_m must be at least 2")
        self.l_m = int(l_m)
        self._istate = np.zeros(K.DET_I_SIZE, np.int64)
        self._fstate = np.zeros(K.DET_F_SIZE)

    @property
    def buffered(self) -> int:
        return int(self._istate[K.I_TREND_N])

    @property
    def prev_mean(self) -> float | None:
        return float(self._fstate[K.F_PREV_MEAN]) if self._istate[K.I_HAS_PREV] else None

    def push(self, x: float) -> TrendStats | None:
        ready, slope, mean, upsilon, has_upsilon, degenerate = K.trend_push(
            self._istate, self._fstate, float(x), self.l_m
        )
        if not ready:
            return None
        return TrendStats(
            slope=slope,
            theta_deg=math.degrees(math.atan(slope)),
            mean=mean,
            upsilon=upsilon if has_upsilon else None,
            degenerate=degenerate,
        )


def trend_update(tw: TrendWindow, sample: Sample | float) -> TrendStats | None:
    value = sample.value if isinstance(sample, Sample) else sample
    return tw.push(value)


class VerdictHistory:
    """Per-estimator boolean verdicts, kept for at least ``capacity`` samples."""

    def __init__(self, voting_length: int, capacity: int | None = None, n_estimators: int = 3) -> None:
        if voting_length < 1:
            raise InputError("voting_length must be positive")
        self.voting_length = int(voting_length)
        self.capacity = int(capacity or voting_length)
        self._seqs = [deque(maxlen=max(self.capacity, self.voting_length)) for _ in range(n_estimators)]
        self.length = 0

    def append(self, verdicts: Sequence[bool]) -> None:
        if len(verdicts) != len(self._seqs):
            raise InputError("one verdict per estimator is required")
        for seq, v in zip(self._seqs, verdicts):
            seq.append(bool(v))
        self.length += 1

    def set_voting_length(self, lv: int) -> None:
        self.voting_length = int(lv)
        if lv > self._seqs[0].maxlen:
            self._seqs = [deque(seq, maxlen=lv) for seq in self._seqs]

    def presence(self) -> tuple[bool, ...]:
        """Whether each estimator has a detection within the last ``voting_length`` samples."""
        lv = self.voting_length
        return tuple(any(list(seq)[-lv:]) for seq in self._seqs)

    def sequences(self) -> list[list[bool]]:
        return [list(seq) for seq in self._seqs]


def vote(history: VerdictHistory) -> int:
    """1 when at least two estimators fired within the voting window, else 0."""
    if history.length < history.voting_length:
        return 0
    return int(sum(history.presence()) >= 2)


def one_sample_ks_z(window: Iterable[float], mu0: float, sigma0: float) -> float:
    """Kolmogorov statistic of ``window`` against Normal(mu0, sigma0**2)."""
    if not sigma0 > 0:
        raise InputError("sigma0 must be positive")
    values = np.sort(np.asarray(list(window), dtype=float))
    if values.size == 0:
        raise InputError("window must be non-empty")
    if not np.isfinite(values).all():
        raise InputError("window values must be finite")
    return float(K.one_sample_ks_sorted(values, float(mu0), float(sigma0)))


@dataclass(frozen=True)
class DriftEvent:
    stream_id: str
    start: int
    end: int
    per_estimator_counts: tuple[int, int, int]
    z_statistic: float
    window_length: int
    mean_offset: float = 0.0
    vote: int = 1

    def __post_init__(self) -> None:
        if self.end - self.start + 1 != self.window_length:
            raise InputError("event range does not match its window length")

    @property
    def sample_index_range(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class StreamTrace:
    """Per-sample record of a batch run through :meth:`Detector.run`."""

    verdicts: np.ndarray  # (3, n) uint8: ADWIN, PHT, KSWIN
    directions: np.ndarray  # PHT +1 / -1 / 0
    votes: np.ndarray
    lengths: np.ndarray  # voting window length in force at each sample
    fired: np.ndarray
    windows: np.ndarray  # event window length where fired, else 0
    z_values: np.ndarray
    offsets: np.ndarray
    counts: np.ndarray
    offset: int = 0  # stream index of the first traced sample
    events: list[DriftEvent] = field(default_factory=list)


class Detector:
    """Ensemble drift detector for one stream.

    ``pht_prior`` seeds Page-Hinkley with the baseline mean weighted as ``b``
    earlier samples; a detection then restores that baseline, so the test keeps
    measuring departures from normal rather than from the most recent regime.
    """

    ESTIMATORS = ("adwin", "pht", "kswin")

    def __init__(
        self,
        profile: "CalibrationProfile | None" = None,
        window_model: WindowModel | None = None,
        stream_id: str = "",
        l_m: int = DEFAULT_L_M,
        initial_length: int | None = None,
        max_buckets: int = 5,
        pht_prior: bool = True,
        upsilon_scale: float = UPSILON_PERCENT,
    ) -> None:
        if l_m < 2:
            raise InputError("l_m must be at least 2")
        self.stream_id = stream_id
        self.l_m = int(l_m)
        self.max_buckets = int(max_buckets)
        self.pht_prior = pht_prior
        if not upsilon_scale > 0:
            raise InputError("upsilon_scale must be positive")
        self.upsilon_scale = float(upsilon_scale)
        self._initial_length = initial_length
        self._window_model = window_model
        self.profile = None
        self.window_model = None
        self.skipped = 0
        self.events: list[DriftEvent] = []
        self.last_verdicts = (False, False, False)
        self.last_vote = 0
        if profile is not None:
            self.calibrate(profile)

    # ------------------------------------------------------------------ setup
    def calibrate(self, profile: "CalibrationProfile") -> None:
        """Install hyperparameters and baseline and reset all state."""
        baseline = profile.baseline
        if not baseline.sigma > 0:
            raise StateError("baseline standard deviation must be positive")
        model = self._window_model or profile.window_model
        if model is None:
            model = WindowModel.for_sensor(profile.sensor_type, profile.l_omega + profile.l_r)
        l_k = profile.l_omega + profile.l_r
        if model.l_min <= l_k:
            raise InputError(f"voting window l_min={model.l_min} must exceed the KSWIN window {l_k}")
        self.profile = profile
        self.window_model = model
        lv0 = self._initial_length if self._initial_length is not None else model.initial_length
        if not model.l_min <= lv0 <= model.l_max:
            raise InputError("initial voting length must lie within [l_min, l_max]")

        cap = model.l_max + 1
        ist = np.zeros(K.DET_I_SIZE, np.int64)
        ist[K.I_LV] = lv0
        ist[K.I_LAST_A] = ist[K.I_LAST_P] = ist[K.I_LAST_K] = ist[K.I_LAST_END] = K.NEVER
        ist[K.I_L_MIN] = model.l_min
        ist[K.I_L_MAX] = model.l_max
        ist[K.I_L_M] = self.l_m
        ist[K.I_L_OMEGA] = profile.l_omega
        ist[K.I_L_R] = profile.l_r
        ist[K.I_M] = self.max_buckets
        ist[K.I_CAP] = cap
        fst = np.zeros(K.DET_F_SIZE)
        fst[K.F_MU0] = baseline.mu_prime
        fst[K.F_SIGMA0] = baseline.sigma
        fst[K.F_DELTA] = profile.delta
        fst[K.F_BETA] = profile.beta
        fst[K.F_LAMBDA] = profile.lam
        fst[K.F_KS_THRESHOLD] = math.sqrt(-math.log(profile.alpha) / profile.l_r)
        fst[K.F_ZETA] = model.zeta
        fst[K.F_ETA] = model.eta
        fst[K.F_GAMMA] = model.gamma
        fst[K.F_UPSILON_SCALE] = self.upsilon_scale

        p_state = np.zeros(K.PHT_STATE_SIZE)
        if self.pht_prior:
            p_state[K.P_INIT_N] = baseline.b
            p_state[K.P_INIT_MEAN] = baseline.mu_prime
        K.pht_reset(p_state)

        self._ist = ist
        self._fst = fst
        self._a = (
            np.zeros((K.ADWIN_MAX_LEVELS, self.max_buckets + 1)),
            np.zeros((K.ADWIN_MAX_LEVELS, self.max_buckets + 1)),
            np.zeros(K.ADWIN_MAX_LEVELS, np.int64),
            np.zeros(3),
        )
        self._p = p_state
        self._k = (
            np.zeros(l_k),
            np.zeros(profile.l_r),
            np.zeros(2, np.int64),
            np.zeros(profile.l_omega),
        )
        self._cum = np.zeros((3, cap), np.int64)
        self._values = np.zeros(cap)
        self._z = np.zeros(cap)
        self._counts = np.zeros(3, np.int64)
        self.skipped = 0
        self.events = []

    @property
    def calibrated(self) -> bool:
        return self.profile is not None

    def _require(self) -> None:
        if self.profile is None:
            raise StateError("detector is not calibrated")

    # ------------------------------------------------------------------ accessors
    @property
    def n_ingested(self) -> int:
        self._require()
        return int(self._ist[K.I_T])

    @property
    def voting_length(self) -> int:
        self._require()
        return int(self._ist[K.I_LV])

    @property
    def cooldown(self) -> int:
        self._require()
        return int(self._ist[K.I_COOLDOWN])

    def presence(self) -> tuple[bool, bool, bool]:
        """Per-estimator detection presence within the current voting window."""
        self._require()
        t = self._ist[K.I_T] - 1
        lv = self._ist[K.I_LV]
        return tuple(bool(t - self._ist[i] < lv) for i in (K.I_LAST_A, K.I_LAST_P, K.I_LAST_K))

    def current_window(self) -> np.ndarray:
        """The most recent ``min(L_v, n)`` values, oldest first."""
        self._require()
        t = int(self._ist[K.I_T])
        n = min(int(self._ist[K.I_LV]), t)
        cap = self._values.shape[0]
        idx = np.arange(t - n, t) % cap
        return self._values[idx].copy()

    def current_z(self) -> float:
        """KS statistic of the current window against the baseline (0.0 before any sample)."""
        window = self.current_window()
        if window.size == 0:
            return 0.0
        return one_sample_ks_z(window, self.profile.baseline.mu_prime, self.profile.baseline.sigma)

    def current_mean_offset(self) -> float:
        window = self.current_window()
        return float(window.mean() - self.profile.baseline.mu_prime) if window.size else 0.0

    @property
    def adwin_mean(self) -> float:
        totals = self._a[3]
        return float(totals[1] / totals[0]) if totals[0] else 0.0

    @property
    def pht_mean(self) -> float:
        return float(self._p[K.P_MEAN])

    # ------------------------------------------------------------------ ingest
    def ingest(self, sample: Sample | float) -> DriftEvent | None:
        """Fold one sample in; returns a :class:`DriftEvent` when the vote fires outside cooldown."""
        self._require()
        value = sample.value if isinstance(sample, Sample) else sample
        value = float(value)
        if not math.isfinite(value):
            self.skipped += 1
            raise InputError(f"non-finite sample value: {value!r}")
        t = int(self._ist[K.I_T])
        a_sums, a_sqs, a_nb, a_totals = self._a
        k_window, k_sorted, k_meta, k_scratch = self._k
        va, dp, vk, v, n_window, z, offset = K.detector_step(
            self._ist,
            self._fst,
            a_sums,
            a_sqs,
            a_nb,
            a_totals,
            self._p,
            k_window,
            k_sorted,
            k_meta,
            k_scratch,
            self._cum,
            self._values,
            self._z,
            self._counts,
            value,
        )
        self.last_verdicts = (bool(va), dp != 0, bool(vk))
        self.last_vote = int(v)
        if not n_window:
            return None
        event = DriftEvent(
            stream_id=self.stream_id,
            start=t - n_window + 1,
            end=t,
            per_estimator_counts=tuple(int(c) for c in self._counts),
            z_statistic=float(z),
            window_length=int(n_window),
            mean_offset=float(offset),
        )
        self.events.append(event)
        return event

    def run(self, values: np.ndarray | Sequence[float]) -> StreamTrace:
        """Ingest a whole array in compiled code, continuing from the current state."""
        self._require()
        arr = np.ascontiguousarray(values, dtype=float)
        if not np.isfinite(arr).all():
            raise InputError("batch values must be finite")
        offset = int(self._ist[K.I_T])
        a_sums, a_sqs, a_nb, a_totals = self._a
        k_window, k_sorted, k_meta, k_scratch = self._k
        out = K.run_detector(
            arr,
            self._ist,
            self._fst,
            a_sums,
            a_sqs,
            a_nb,
            a_totals,
            self._p,
            k_window,
            k_sorted,
            k_meta,
            k_scratch,
            self._cum,
            self._values,
            self._z,
        )
        trace = StreamTrace(*out, offset=offset)
        for i in np.flatnonzero(trace.fired):
            lv = int(trace.windows[i])
            end = offset + int(i)
            event = DriftEvent(
                stream_id=self.stream_id,
                start=end - lv + 1,
                end=end,
                per_estimator_counts=tuple(int(c) for c in trace.counts[:, i]),
                z_statistic=float(trace.z_values[i]),
                window_length=lv,
                mean_offset=float(trace.offsets[i]),
            )
            trace.events.append(event)
        self.events.extend(trace.events)
        if arr.size:
            last = arr.size - 1
            self.last_verdicts = tuple(bool(trace.verdicts[e, last]) for e in range(3))
            self.last_vote = int(trace.votes[last])
        return trace
