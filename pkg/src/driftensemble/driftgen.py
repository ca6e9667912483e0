"""Synthetic sensor streams with ground-truth drift labels, a live emulator and CSV replay."""

from __future__ import annotations

import csv
import enum
import json
import math
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import BusyError, FormatError, InputError
from .estimators import Sample

__all__ = [
    "CsvRow",
    "CsvStream",
    "Emulator",
    "LabeledStream",
    "SENSOR_PROFILES",
    "SensorProfile",
    "SlotKind",
    "TimeslotSpec",
    "demux_csv",
    "export_csv",
    "generate_experiment",
    "q_grid",
    "read_csv_rows",
    "stream_csv",
]

CSV_COLUMNS = ("timestamp", "device_id", "sensor_type", "value")
MAX_MALFORMED_FRACTION = 0.10
Q_MULTIPLES = (1 / 3, 1 / 2, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class SensorProfile:
    sensor_type: str
    mu_prime: float
    sigma2: float
    sample_period_ms: int = 10_000

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise InputError("sigma2 must be positive")
        if self.sample_period_ms <= 0:
            raise InputError("sample_period_ms must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


SENSOR_PROFILES = {
    "temperature": SensorProfile("temperature", 20.32, 1.178),
    "humidity": SensorProfile("humidity", 30.14, 0.966),
    "pressure": SensorProfile("pressure", 102.4, 224.52),
}


class SlotKind(str, enum.Enum):
    NORMAL = "normal"
    ABRUPT = "abrupt"
    INCREMENTAL = "incremental"


SLOT_KINDS = (SlotKind.NORMAL, SlotKind.ABRUPT, SlotKind.INCREMENTAL)


@dataclass(frozen=True)
class TimeslotSpec:
    kind: SlotKind
    length: int
    q_offset: float = 0.0
    start: int = 0

    @property
    def end(self) -> int:
        return self.start + self.length

    @property
    def drifting(self) -> bool:
        return self.kind is not SlotKind.NORMAL


@dataclass
class LabeledStream:
    values: np.ndarray
    labels: np.ndarray
    slots: list[TimeslotSpec]
    seed: int
    q: float
    profile: SensorProfile
    start_ms: int = 0

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def timestamp(self, i: int) -> int:
        return self.start_ms + i * self.profile.sample_period_ms

    @property
    def samples(self) -> list[Sample]:
        return [Sample(i, self.timestamp(i), float(v)) for i, v in enumerate(self.values)]


def q_grid(sigma2: float) -> list[float]:
    """The seven drift magnitudes, from a third of the variance up to five times it."""
    if not sigma2 > 0:
        raise InputError("sigma2 must be positive")
    return [m * sigma2 for m in Q_MULTIPLES]


def _slot_offsets(kind: SlotKind, q_offset: float, length: int) -> np.ndarray:
    if kind is SlotKind.ABRUPT:
        return np.full(length, q_offset)
    if kind is SlotKind.INCREMENTAL:
        return (q_offset / length) * np.arange(length)
    return np.zeros(length)


def generate_experiment(
    profile: SensorProfile,
    q: float,
    n_slots: int = 40,
    seed: int = 0,
    min_length: int = 500,
    max_length: int = 1500,
) -> LabeledStream:
    """A stream of ``n_slots`` timeslots of random kind and length; slot 0 is always normal.

    Random draws happen in a fixed order (kinds, lengths, offsets, noise), so two
    calls with the same seed and different ``q`` share every draw except the
    offsets' scale.
    """
    if not q > 0 or not math.isfinite(q):
        raise InputError("q must be a positive finite number")
    if n_slots < 1:
        raise InputError("n_slots must be at least 1")
    if not 1 <= min_length <= max_length:
        raise InputError("slot length bounds are inconsistent")
    rng = np.random.default_rng(seed)
    kinds = rng.integers(0, 3, n_slots)
    kinds[0] = 0
    lengths = rng.integers(min_length, max_length + 1, n_slots)
    offsets = rng.uniform(-q, q, n_slots)
    total = int(lengths.sum())
    values = rng.normal(profile.mu_prime, profile.sigma, total)
    labels = np.zeros(total, np.uint8)

    slots = []
    start = 0
    for k, length, q_off in zip(kinds, lengths, offsets):
        kind = SLOT_KINDS[int(k)]
        length = int(length)
        q_off = float(q_off) if kind is not SlotKind.NORMAL else 0.0
        if kind is not SlotKind.NORMAL:
            values[start : start + length] += _slot_offsets(kind, q_off, length)
            labels[start : start + length] = 1
        slots.append(TimeslotSpec(kind, length, q_off, start))
        start += length
    return LabeledStream(values, labels, slots, seed, float(q), profile)


# ---------------------------------------------------------------------- live emulator


@dataclass
class _ActiveDrift:
    kind: SlotKind
    q_offset: float
    length: int
    start: int


class Emulator:
    """Endless stream of baseline samples into which drift slots can be injected at runtime.

    Commands may be queued from any thread with :meth:`submit`; they are applied
    between samples, so an injection always starts at a sample boundary.
    """

    def __init__(self, profile: SensorProfile, seed: int = 0, device_id: str = "emulator", start_ms: int = 0) -> None:
        self.profile = profile
        self.device_id = device_id
        self.start_ms = start_ms
        self._rng = np.random.default_rng(seed)
        self._index = 0
        self._drift: _ActiveDrift | None = None
        self._commands: queue.SimpleQueue = queue.SimpleQueue()
        self._lock = threading.Lock()
        self.acks: list[dict] = []

    @property
    def index(self) -> int:
        return self._index

    @property
    def busy(self) -> bool:
        d = self._drift
        return d is not None and self._index < d.start + d.length

    def inject_drift(self, kind: SlotKind | str, q_offset: float, length: int) -> int:
        """Start a drift slot at the next emitted sample; returns its first index."""
        kind = SlotKind(kind)
        if kind is SlotKind.NORMAL:
            raise InputError("only abrupt or incremental drift can be injected")
        if int(length) <= 0:
            raise InputError("injection length must be positive")
        if not math.isfinite(q_offset):
            raise InputError("q_offset must be finite")
        with self._lock:
            if self.busy:
                raise BusyError("a drift slot is already active")
            self._drift = _ActiveDrift(kind, float(q_offset), int(length), self._index)
            return self._index

    def submit(self, command: Mapping | str | bytes) -> None:
        """Queue an injection command (a mapping or its JSON text) for the next sample boundary."""
        self._commands.put(command)

    def _drain(self) -> None:
        while True:
            try:
                raw = self._commands.get_nowait()
            except queue.Empty:
                return
            try:
                cmd = json.loads(raw) if isinstance(raw, (str, bytes)) else dict(raw)
                start = self.inject_drift(cmd["kind"], float(cmd["q_offset"]), int(cmd["length"]))
                self.acks.append({"ok": True, "start": start, **cmd})
            except (InputError, BusyError, KeyError, TypeError, ValueError) as exc:
                self.acks.append({"ok": False, "error": type(exc).__name__, "detail": str(exc)})

    def next(self) -> tuple[Sample, int]:
        """The next sample and its ground-truth label."""
        self._drain()
        i = self._index
        x = float(self._rng.normal(self.profile.mu_prime, self.profile.sigma))
        label = 0
        d = self._drift
        if d is not None and d.start <= i < d.start + d.length:
            j = i - d.start
            x += d.q_offset if d.kind is SlotKind.ABRUPT else (d.q_offset / d.length) * j
            label = 1
        self._index += 1
        return Sample(i, self.start_ms + i * self.profile.sample_period_ms, x), label

    def take(self, n: int) -> tuple[list[Sample], list[int]]:
        samples, labels = [], []
        for _ in range(n):
            s, y = self.next()
            samples.append(s)
            labels.append(y)
        return samples, labels


# ---------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class CsvRow:
    sample: Sample
    device_id: str
    sensor_type: str


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(round(float(text)))
    except ValueError:
        pass
    return int(datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp() * 1000)


@dataclass
class CsvStream:
    """Parsed rows of a sensor CSV file plus the count of skipped malformed rows."""

    rows: list[CsvRow] = field(default_factory=list)
    skipped: int = 0

    def __iter__(self) -> Iterator[Sample]:
        return (row.sample for row in self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def _load_csv(
    path: str | Path, column_map: Mapping[str, str] | None = None, max_malformed: float = MAX_MALFORMED_FRACTION
) -> CsvStream:
    cols = {c: c for c in CSV_COLUMNS}
    cols.update(column_map or {})
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    out = CsvStream()
    total = 0
    with handle:
        reader = csv.DictReader(handle)
        missing = [cols[c] for c in ("timestamp", "value") if cols[c] not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        for record in reader:
            total += 1
            try:
                value = float(record[cols["value"]])
                if not math.isfinite(value):
                    raise ValueError("non-finite value")
                ts = _parse_timestamp(record[cols["timestamp"]])
            except (TypeError, ValueError, AttributeError):
                out.skipped += 1
                continue
            sample = Sample(len(out.rows), ts, value)
            out.rows.append(
                CsvRow(sample, (record.get(cols["device_id"]) or "").strip(), (record.get(cols["sensor_type"]) or "").strip())
            )
    if total and out.skipped / total > max_malformed:
        raise FormatError(f"{path}: {out.skipped} of {total} rows malformed")
    return out


def stream_csv(path: str | Path, column_map: Mapping[str, str] | None = None) -> CsvStream:
    """Replay a CSV file as samples in file order; malformed rows are skipped and counted."""
    return _load_csv(path, column_map)


def read_csv_rows(path: str | Path, column_map: Mapping[str, str] | None = None) -> list[CsvRow]:
    return _load_csv(path, column_map).rows


def demux_csv(path: str | Path, column_map: Mapping[str, str] | None = None) -> dict[tuple[str, str], list[Sample]]:
    """Split a multi-device file into per-(device, sensor) streams with their own ordinals."""
    streams: dict[tuple[str, str], list[Sample]] = {}
    for row in read_csv_rows(path, column_map):
        key = (row.device_id, row.sensor_type)
        seq = streams.setdefault(key, [])
        seq.append(Sample(len(seq), row.sample.timestamp, row.sample.value))
    return streams


def export_csv(stream: LabeledStream, path: str | Path, device_id: str = "emulator") -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([*CSV_COLUMNS, "label"])
        for i, (v, y) in enumerate(zip(stream.values, stream.labels)):
            writer.writerow([stream.timestamp(i), device_id, stream.profile.sensor_type, repr(float(v)), int(y)])
