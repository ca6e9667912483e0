"""Baseline statistics and zero-false-alarm grid calibration of estimator hyperparameters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .detector import WindowModel, WINDOW_COEFFICIENTS
from .errors import FormatError, InputError
from .estimators import Sample, kswin_threshold

__all__ = [
    "BaselineStats",
    "CalibrationProfile",
    "GridSpec",
    "bundled_profile",
    "calibrate",
    "collect_baseline",
    "load_baseline_csv",
    "load_profile",
    "replay_alarms",
    "replay_sequence",
]

MIN_BASELINE = 30
DEFAULT_B = 100
BUNDLED = ("temperature", "humidity", "pressure")
REPLAY_MODES = ("gaussian", "bootstrap")


@dataclass(frozen=True)
class BaselineStats:
    mu_prime: float
    sigma2: float
    b: int = DEFAULT_B
    samples: tuple[float, ...] = ()
    constant: bool = False

    def __post_init__(self) -> None:
        if self.sigma2 < 0 or not math.isfinite(self.sigma2):
            raise InputError("sigma2 must be a finite non-negative number")
        if self.b < MIN_BASELINE:
            raise InputError(f"baseline needs at least {MIN_BASELINE} samples, got {self.b}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def collect_baseline(prefix: Sequence[Sample] | Sequence[float] | np.ndarray) -> BaselineStats:
    """Mean and unbiased variance of a drift-free prefix."""
    values = np.asarray([s.value if isinstance(s, Sample) else s for s in prefix], dtype=float)
    if values.size < MIN_BASELINE:
        raise InputError(f"baseline needs at least {MIN_BASELINE} samples, got {values.size}")
    if not np.isfinite(values).all():
        raise InputError("baseline values must be finite")
    sigma2 = float(values.var(ddof=1))
    return BaselineStats(
        mu_prime=float(values.mean()),
        sigma2=sigma2,
        b=int(values.size),
        samples=tuple(float(v) for v in values),
        constant=sigma2 == 0.0,
    )


def _log_grid(lo: float, hi: float, n: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


@dataclass(frozen=True)
class GridSpec:
    """Coarse grids for each hyperparameter plus the replay settings used to judge them.

    ``replay_length`` extends the prefix with seeded values so that ADWIN and
    Page-Hinkley are judged on a stream long enough to expose slow false alarms.
    ``replay_mode`` is ``"gaussian"`` (draws from Normal(mu', sigma^2), which has
    the tails a real stream has) or ``"bootstrap"`` (resampling the prefix).
    KSWIN is judged on the prefix alone.
    """

    deltas: tuple[float, ...] = tuple(round(0.05 * k, 2) for k in range(1, 20))
    lambdas: tuple[float, ...] = (10.0, 20.0, 50.0, 100.0, 200.0, 480.0, 1e3, 2e3, 5e3, 1e4, 3e4, 1e5)
    betas: tuple[float, ...] = _log_grid(0.01, 5.0, 12)
    alphas: tuple[float, ...] = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
    l_rs: tuple[int, ...] = (100, 200, 300, 500)
    l_omega: int = 30
    refine_factor: int = 10
    budget: int = 5000
    replay_length: int = 10_000
    replay_seed: int = 0
    replay_mode: str = "gaussian"
    max_buckets: int = 5

    def __post_init__(self) -> None:
        for name in ("deltas", "lambdas", "betas", "alphas", "l_rs"):
            values = getattr(self, name)
            if not values:
                raise InputError(f"grid {name} is empty")
            if list(values) != sorted(set(values)):
                raise InputError(f"grid {name} must be strictly ascending")
        if not all(0 < d < 1 for d in self.deltas) or not all(0 < a < 1 for a in self.alphas):
            raise InputError("delta and alpha grids must lie in (0, 1)")
        if min(self.lambdas) <= 0 or min(self.betas) <= 0:
            raise InputError("lambda and beta grids must be positive")
        if min(self.l_rs) < 2 or self.l_omega < 2:
            raise InputError("window lengths must be at least 2")
        if self.refine_factor < 2:
            raise InputError("refine_factor must be at least 2 so the fine step is smaller than the coarse step")
        if self.budget < 1 or self.replay_length < 0:
            raise InputError("budget must be positive and replay_length non-negative")
        if self.replay_mode not in REPLAY_MODES:
            raise InputError(f"replay_mode must be one of {', '.join(REPLAY_MODES)}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise InputError(f"unknown grid field(s): {', '.join(sorted(extra))}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class CalibrationProfile:
    sensor_type: str
    delta: float
    beta: float
    lam: float
    alpha: float
    l_r: int
    l_omega: int
    baseline: BaselineStats
    window_model: WindowModel | None = None
    degraded: bool = False
    replays: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.delta < 1 and 0 < self.alpha < 1):
            raise InputError("delta and alpha must lie in (0, 1)")
        if not (self.beta > 0 and self.lam > 0):
            raise InputError("beta and lambda must be positive")
        if self.l_r < 2 or self.l_omega < 2:
            raise InputError("l_r and l_omega must be at least 2")

    @property
    def l_k(self) -> int:
        return self.l_omega + self.l_r

    @property
    def ks_threshold(self) -> float:
        return kswin_threshold(self.alpha, self.l_r)

    def resolved_window_model(self, l_max: int | None = None) -> WindowModel:
        if self.window_model is not None and l_max is None:
            return self.window_model
        return WindowModel.for_sensor(self.sensor_type, self.l_k, l_max)

    # ------------------------------------------------------------------ serialization
    def to_dict(self) -> dict:
        wm = self.window_model
        return {
            "sensor_type": self.sensor_type,
            "delta": self.delta,
            "beta": self.beta,
            "lambda": self.lam,
            "alpha": self.alpha,
            "l_r": self.l_r,
            "l_omega": self.l_omega,
            "degraded": self.degraded,
            "replays": self.replays,
            "baseline": {
                "mu_prime": self.baseline.mu_prime,
                "sigma2": self.baseline.sigma2,
                "b": self.baseline.b,
                "constant": self.baseline.constant,
                "samples": list(self.baseline.samples),
            },
            "window_model": None
            if wm is None
            else {"zeta": wm.zeta, "eta": wm.eta, "gamma": wm.gamma, "l_min": wm.l_min, "l_max": wm.l_max},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationProfile":
        try:
            base = data["baseline"]
            baseline = BaselineStats(
                mu_prime=float(base["mu_prime"]),
                sigma2=float(base["sigma2"]),
                b=int(base.get("b", DEFAULT_B)),
                samples=tuple(float(v) for v in base.get("samples", ())),
                constant=bool(base.get("constant", False)),
            )
            wm = data.get("window_model")
            model = None if wm is None else WindowModel(
                float(wm["zeta"]), float(wm["eta"]), float(wm["gamma"]), int(wm["l_min"]), int(wm["l_max"])
            )
            return cls(
                sensor_type=str(data["sensor_type"]),
                delta=float(data["delta"]),
                beta=float(data["beta"]),
                lam=float(data["lambda"]),
                alpha=float(data["alpha"]),
                l_r=int(data["l_r"]),
                l_omega=int(data.get("l_omega", 30)),
                baseline=baseline,
                window_model=model,
                degraded=bool(data.get("degraded", False)),
                replays=int(data.get("replays", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise FormatError(f"invalid profile: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProfile":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid profile JSON: {exc}") from exc

    def to_text(self) -> str:
        """Flat ``key = value`` form; floats use ``repr`` so the round trip is exact."""
        d = self.to_dict()
        lines = [
            f"sensor_type = {d['sensor_type']}",
            f"delta = {d['delta']!r}",
            f"beta = {d['beta']!r}",
            f"lambda = {d['lambda']!r}",
            f"alpha = {d['alpha']!r}",
            f"l_r = {d['l_r']}",
            f"l_omega = {d['l_omega']}",
            f"degraded = {str(d['degraded']).lower()}",
            f"replays = {d['replays']}",
            f"baseline.mu_prime = {d['baseline']['mu_prime']!r}",
            f"baseline.sigma2 = {d['baseline']['sigma2']!r}",
            f"baseline.b = {d['baseline']['b']}",
            f"baseline.constant = {str(d['baseline']['constant']).lower()}",
            "baseline.samples = " + ",".join(repr(v) for v in d["baseline"]["samples"]),
        ]
        if d["window_model"] is not None:
            for key in ("zeta", "eta", "gamma", "l_min", "l_max"):
                lines.append(f"window_model.{key} = {d['window_model'][key]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CalibrationProfile":
        flat: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"line {n}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            flat[key] = value
        nested: dict = {"baseline": {}}
        window: dict = {}
        for key, value in flat.items():
            if key.startswith("baseline."):
                nested["baseline"][key.split(".", 1)[1]] = value
            elif key.startswith("window_model."):
                window[key.split(".", 1)[1]] = value
            else:
                nested[key] = value
        base = nested["baseline"]
        if "samples" in base:
            try:
                base["samples"] = [float(v) for v in base["samples"].split(",") if v.strip()]
            except ValueError as exc:
                raise FormatError(f"invalid baseline samples: {exc}") from exc
        for flag_holder, key in ((nested, "degraded"), (base, "constant")):
            if key in flag_holder:
                flag_holder[key] = flag_holder[key].lower() == "true"
        nested["window_model"] = window or None
        return cls.from_dict(nested)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        text = self.to_json() if path.suffix == ".json" else self.to_text()
        path.write_text(text, encoding="utf-8")


def load_profile(path_or_name: str | Path) -> CalibrationProfile:
    """Load a profile file (JSON or key-value) or a bundled profile by sensor name."""
    if str(path_or_name) in BUNDLED and not Path(path_or_name).exists():
        return bundled_profile(str(path_or_name))
    path = Path(path_or_name)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read profile {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        return CalibrationProfile.from_json(text)
    return CalibrationProfile.from_text(text)


def bundled_profile(sensor_type: str) -> CalibrationProfile:
    """The reference per-sensor hyperparameters shipped with the package."""
    if sensor_type not in BUNDLED:
        raise InputError(f"no bundled profile for {sensor_type!r}; choose from {', '.join(BUNDLED)}")
    text = resources.files("driftensemble").joinpath("profiles", f"{sensor_type}.json").read_text("utf-8")
    return CalibrationProfile.from_json(text)


def load_baseline_csv(
    path: str | Path, b: int = DEFAULT_B, sensor_type: str | None = None, device_id: str | None = None
) -> tuple[BaselineStats, str]:
    """Baseline from the first ``b`` matching rows of a trusted CSV; returns the stats and sensor type."""
    from .driftgen import read_csv_rows

    values: list[float] = []
    found_type = sensor_type
    for row in read_csv_rows(path):
        if sensor_type is not None and row.sensor_type != sensor_type:
            continue
        if device_id is not None and row.device_id != device_id:
            continue
        if found_type is None:
            found_type = row.sensor_type
        elif row.sensor_type != found_type:
            continue
        values.append(row.sample.value)
        if len(values) == b:
            break
    return collect_baseline(values), found_type or "unknown"


# ---------------------------------------------------------------------- grid search


def replay_sequence(baseline: BaselineStats, length: int, seed: int, mode: str = "gaussian") -> np.ndarray:
    """The baseline prefix followed by ``length`` seeded values.

    ``gaussian`` draws from Normal(mu', sigma^2); ``bootstrap`` resamples the prefix.
    """
    prefix = np.asarray(baseline.samples, dtype=float)
    if prefix.size == 0:
        raise InputError("baseline carries no samples to replay")
    if length <= 0:
        return prefix.copy()
    rng = np.random.default_rng(seed)
    if mode == "gaussian":
        extra = rng.normal(baseline.mu_prime, baseline.sigma, length)
    elif mode == "bootstrap":
        extra = rng.choice(prefix, size=length, replace=True)
    else:
        raise InputError(f"unknown replay mode {mode!r}")
    return np.concatenate([prefix, extra])


def _neighbours(grid: Sequence[float], best: float) -> tuple[float, float]:
    i = list(grid).index(best)
    lo = grid[i - 1] if i > 0 else grid[i]
    hi = grid[i + 1] if i + 1 < len(grid) else grid[i]
    return lo, hi


def _fine_linear(grid: Sequence[float], best: float, factor: int) -> list[float]:
    lo, hi = _neighbours(grid, best)
    pts = set()
    for a, b in ((lo, best), (best, hi)):
        if a != b:
            pts.update(float(v) for v in np.linspace(a, b, factor + 1))
    pts.add(float(best))
    return sorted(round(p, 12) for p in pts)


def _fine_log(grid: Sequence[float], best: float, factor: int) -> list[float]:
    lo, hi = _neighbours(grid, best)
    pts = set()
    for a, b in ((lo, best), (best, hi)):
        if a != b:
            pts.update(float(v) for v in np.geomspace(a, b, factor + 1))
    pts.add(float(best))
    return sorted(pts)


def _fine_int(grid: Sequence[int], best: int, factor: int) -> list[int]:
    lo, hi = _neighbours(grid, best)
    pts = {int(best)}
    for a, b in ((lo, best), (best, hi)):
        if a != b:
            step = max(1, (b - a) // factor)
            pts.update(range(int(a), int(b) + 1, step))
    return sorted(pts)


class _Budget:
    def __init__(self, limit: int) -> None:
        self.limit = limit
        self.used = 0

    def take(self) -> bool:
        if self.used >= self.limit:
            return False
        self.used += 1
        return True


def _first_passing(candidates: Iterable, count_alarms, budget: _Budget):
    """First candidate with zero alarms, else the least-alarm candidate seen, plus a pass flag.

    Screening stops each replay at its first alarm; only when nothing passes are
    the failures replayed in full to rank them.
    """
    failed = []
    for cand in candidates:
        if not budget.take():
            break
        if count_alarms(cand, True) == 0:
            return cand, True
        failed.append(cand)
    if not failed:
        return None, False
    counts = [count_alarms(cand, False) for cand in failed]
    return failed[int(np.argmin(counts))], False


def calibrate(
    baseline: BaselineStats,
    grid: GridSpec | None = None,
    sensor_type: str = "temperature",
    window_model: WindowModel | None = None,
    pht_prior: bool = True,
) -> CalibrationProfile:
    """Two-stage grid search choosing, per estimator, the preferred zero-false-alarm point.

    Preferences: largest ADWIN ``delta``; smallest ``(lambda, beta)`` for Page-Hinkley
    in that order; largest KSWIN ``alpha`` then smallest ``l_r``. The second stage
    searches one coarse step either side of the first-stage winner at
    ``1/refine_factor`` resolution. A profile with an estimator that cannot reach
    zero alarms keeps its least-alarm point and is marked degraded.
    """
    grid = grid or GridSpec()
    budget = _Budget(grid.budget)
    long_replay = replay_sequence(baseline, grid.replay_length, grid.replay_seed, grid.replay_mode)
    prefix = np.asarray(baseline.samples, dtype=float)
    init_n = float(baseline.b) if pht_prior else 0.0
    init_mean = baseline.mu_prime if pht_prior else 0.0

    def adwin_alarms(d, stop):
        return K.adwin_replay(long_replay, d, grid.max_buckets, stop)

    def pht_alarms(p, stop):
        return K.pht_replay(long_replay, p[1], p[0], init_n, init_mean, stop)

    def ks_alarms(p, stop):
        return K.kswin_replay(prefix, grid.l_omega, p[1], kswin_threshold(p[0], p[1]), stop)

    passed = []

    # ADWIN: largest delta
    delta, ok = _first_passing(sorted(grid.deltas, reverse=True), adwin_alarms, budget)
    if ok:
        fine = [d for d in _fine_linear(grid.deltas, delta, grid.refine_factor) if d > delta]
        cand, fine_ok = _first_passing(sorted(fine, reverse=True), adwin_alarms, budget)
        if fine_ok:
            delta = cand
    passed.append(ok)
    delta = delta if delta is not None else grid.deltas[0]

    # PHT: smallest (lambda, beta)
    coarse = [(lam, beta) for lam in grid.lambdas for beta in grid.betas]
    pht, ok = _first_passing(coarse, pht_alarms, budget)
    if ok:
        fine = [
            (lam, beta)
            for lam in _fine_log(grid.lambdas, pht[0], grid.refine_factor)
            for beta in _fine_log(grid.betas, pht[1], grid.refine_factor)
            if (lam, beta) < pht
        ]
        cand, fine_ok = _first_passing(sorted(fine), pht_alarms, budget)
        if fine_ok:
            pht = cand
    passed.append(ok)
    pht = pht if pht is not None else (grid.lambdas[-1], grid.betas[-1])

    # KSWIN: largest alpha, then smallest l_r
    coarse = [(alpha, l_r) for alpha in sorted(grid.alphas, reverse=True) for l_r in grid.l_rs]
    ks, ok = _first_passing(coarse, ks_alarms, budget)
    if ok:
        fine = [
            (alpha, l_r)
            for alpha in _fine_log(grid.alphas, ks[0], grid.refine_factor)
            for l_r in _fine_int(grid.l_rs, ks[1], grid.refine_factor)
            if (-alpha, l_r) < (-ks[0], ks[1])
        ]
        cand, fine_ok = _first_passing(sorted(fine, key=lambda p: (-p[0], p[1])), ks_alarms, budget)
        if fine_ok:
            ks = cand
    passed.append(ok)
    ks = ks if ks is not None else (grid.alphas[-1], grid.l_rs[-1])

    if window_model is None and sensor_type in WINDOW_COEFFICIENTS:
        window_model = WindowModel.for_sensor(sensor_type, grid.l_omega + int(ks[1]))
    return CalibrationProfile(
        sensor_type=sensor_type,
        delta=float(delta),
        beta=float(pht[1]),
        lam=float(pht[0]),
        alpha=float(ks[0]),
        l_r=int(ks[1]),
        l_omega=grid.l_omega,
        baseline=baseline,
        window_model=window_model,
        degraded=not all(passed),
        replays=budget.used,
    )


def replay_alarms(profile: CalibrationProfile, values: Sequence[float] | np.ndarray, pht_prior: bool = True) -> tuple[int, int, int]:
    """Detections of each estimator, built fresh from ``profile``, over ``values``."""
    arr = np.ascontiguousarray(values, dtype=float)
    init_n = float(profile.baseline.b) if pht_prior else 0.0
    init_mean = profile.baseline.mu_prime if pht_prior else 0.0
    return (
        int(K.adwin_replay(arr, profile.delta, 5, False)),
        int(K.pht_replay(arr, profile.beta, profile.lam, init_n, init_mean, False)),
        int(K.kswin_replay(arr, profile.l_omega, profile.l_r, profile.ks_threshold, False)),
    )
