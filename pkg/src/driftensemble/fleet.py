"""Peer comparison of drift announcements: natural (fleet-wide) versus abnormal (single device) drift."""

from __future__ import annotations

import enum
import json
import math
import statistics
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .bus import BusMessage, TopicBus
from .errors import FormatError, InputError

__all__ = [
    "AnnouncementStore",
    "ClassificationResult",
    "DeviceMetadata",
    "DriftAnnouncement",
    "Verdict",
    "announce_topic",
    "build_announcement",
    "classify",
    "load_manifest",
    "match_peers",
    "save_manifest",
    "verdict_topic",
]

DEFAULT_PEER_KEYS = ("room",)
DEFAULT_MIN_PEERS = 2
DEFAULT_KAPPA = 3.0
MAD_FLOOR = 1e-6


@dataclass(frozen=True)
class DeviceMetadata:
    device_id: str
    sensor_type: str
    tags: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.device_id:
            raise InputError("device_id must be non-empty")
        if "/" in self.device_id or "/" in self.sensor_type:
            raise InputError("device_id and sensor_type may not contain '/'")
        object.__setattr__(self, "tags", dict(self.tags))

    def __hash__(self) -> int:
        return hash((self.device_id, self.sensor_type, tuple(sorted(self.tags.items()))))

    def to_dict(self) -> dict:
        return {"device_id": self.device_id, "sensor_type": self.sensor_type, "tags": dict(self.tags)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DeviceMetadata":
        try:
            tags = {str(k): str(v) for k, v in dict(data.get("tags") or {}).items()}
            return cls(str(data["device_id"]), str(data["sensor_type"]), tags)
        except (KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"invalid device metadata: {exc}") from exc


def load_manifest(path: str | Path) -> list[DeviceMetadata]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError("manifest must be a JSON list of devices")
    devices = [DeviceMetadata.from_dict(d) for d in data]
    ids = [d.device_id for d in devices]
    if len(set(ids)) != len(ids):
        raise FormatError("device ids in a manifest must be unique")
    return devices


def save_manifest(devices: Sequence[DeviceMetadata], path: str | Path) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in devices], indent=2) + "\n", encoding="utf-8")


def announce_topic(device_id: str, sensor_type: str) -> str:
    return f"drift/{device_id}/{sensor_type}/announce"


def verdict_topic(device_id: str, sensor_type: str) -> str:
    return f"drift/{device_id}/{sensor_type}/verdict"


@dataclass(frozen=True)
class DriftAnnouncement:
    vote: int
    z_statistic: float
    mean_offset: float
    window_length: int
    sample_index: int
    metadata: DeviceMetadata
    issued_at: int  # ms

    def __post_init__(self) -> None:
        if self.vote not in (0, 1):
            raise InputError("vote must be 0 or 1")
        if not math.isfinite(self.z_statistic):
            raise InputError("z_statistic must be finite")

    @property
    def device_id(self) -> str:
        return self.metadata.device_id

    def to_dict(self) -> dict:
        return {
            "device_id": self.metadata.device_id,
            "sensor_type": self.metadata.sensor_type,
            "tags": dict(self.metadata.tags),
            "vote": self.vote,
            "z": self.z_statistic,
            "mean_offset": self.mean_offset,
            "window_length": self.window_length,
            "sample_index": self.sample_index,
            "issued_at": self.issued_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Mapping) -> "DriftAnnouncement":
        try:
            return cls(
                vote=int(data["vote"]),
                z_statistic=float(data["z"]),
                mean_offset=float(data["mean_offset"]),
                window_length=int(data["window_length"]),
                sample_index=int(data["sample_index"]),
                metadata=DeviceMetadata.from_dict(data),
                issued_at=int(data["issued_at"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise FormatError(f"invalid announcement: {exc}") from exc

    @classmethod
    def from_json(cls, text: str | bytes) -> "DriftAnnouncement":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid announcement JSON: {exc}") from exc


def build_announcement(event, metadata: DeviceMetadata, issued_at: int) -> DriftAnnouncement:
    """Announcement for a :class:`~driftensemble.detector.DriftEvent`."""
    return DriftAnnouncement(
        vote=int(event.vote),
        z_statistic=float(event.z_statistic),
        mean_offset=float(event.mean_offset),
        window_length=int(event.window_length),
        sample_index=int(event.end),
        metadata=metadata,
        issued_at=int(issued_at),
    )


def match_peers(
    subject: DeviceMetadata, devices: Iterable[DeviceMetadata], keys: Sequence[str] = DEFAULT_PEER_KEYS
) -> list[DeviceMetadata]:
    """Other devices with the subject's sensor type and identical values for every tag in ``keys``."""
    out = []
    for d in devices:
        if d.device_id == subject.device_id or d.sensor_type != subject.sensor_type:
            continue
        if all(d.tags.get(k) == subject.tags.get(k) for k in keys):
            out.append(d)
    return out


class Verdict(str, enum.Enum):
    NATURAL = "natural"
    ABNORMAL = "abnormal"
    INSUFFICIENT_PEERS = "insufficient_peers"


@dataclass(frozen=True)
class ClassificationResult:
    verdict: Verdict
    subject: str
    peer_count: int
    agreeing_peers: int
    z_values: tuple[float, ...]
    skew_flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "subject": self.subject,
            "peer_count": self.peer_count,
            "agreeing_peers": self.agreeing_peers,
            "z_values": list(self.z_values),
            "skew_flagged": self.skew_flagged,
        }


def classify(
    subject: DriftAnnouncement,
    announcements: Iterable[DriftAnnouncement],
    keys: Sequence[str] = DEFAULT_PEER_KEYS,
    t_c_ms: int | None = None,
    min_peers: int = DEFAULT_MIN_PEERS,
    kappa: float = DEFAULT_KAPPA,
) -> ClassificationResult:
    """Natural when most matched peers also vote drift and the subject's Z is not a robust outlier.

    Only the newest announcement per peer within ``t_c_ms`` of the subject counts.
    The outlier test is ``|z - median| <= kappa * MAD`` over the peers' and the
    subject's Z values, with the MAD floored at ``1e-6``.
    """
    if subject.vote != 1:
        raise InputError("only a drift announcement (vote = 1) can be classified")
    latest: dict[str, DriftAnnouncement] = {}
    skew = False
    for ann in announcements:
        if ann.device_id == subject.device_id:
            continue
        if not match_peers(subject.metadata, [ann.metadata], keys):
            continue
        if t_c_ms is not None:
            gap = abs(ann.issued_at - subject.issued_at)
            if gap > t_c_ms:
                continue
            if gap > t_c_ms / 2:
                skew = True
        prev = latest.get(ann.device_id)
        if prev is None or (ann.issued_at, ann.sample_index) > (prev.issued_at, prev.sample_index):
            latest[ann.device_id] = ann
    peers = [latest[k] for k in sorted(latest)]
    agreeing = sum(a.vote for a in peers)
    z_all = tuple(sorted([subject.z_statistic, *(a.z_statistic for a in peers)]))
    if len(peers) < min_peers:
        return ClassificationResult(Verdict.INSUFFICIENT_PEERS, subject.device_id, len(peers), agreeing, z_all, skew)
    median = statistics.median(z_all)
    mad = max(statistics.median(abs(z - median) for z in z_all), MAD_FLOOR)
    co_vote = agreeing >= math.ceil((len(peers) + 1) / 2)
    consistent = abs(subject.z_statistic - median) <= kappa * mad
    verdict = Verdict.NATURAL if co_vote and consistent else Verdict.ABNORMAL
    return ClassificationResult(verdict, subject.device_id, len(peers), agreeing, z_all, skew)


class AnnouncementStore:
    """Latest announcements per device, fed by one writer and read as consistent snapshots."""

    def __init__(self, history: int = 64) -> None:
        self._lock = threading.Lock()
        self._by_device: dict[str, list[DriftAnnouncement]] = {}
        self.history = history
        self.rejected = 0

    def add(self, ann: DriftAnnouncement) -> None:
        with self._lock:
            seq = self._by_device.setdefault(ann.device_id, [])
            seq.append(ann)
            if len(seq) > self.history:
                del seq[0]

    def on_message(self, msg: BusMessage) -> None:
        try:
            self.add(DriftAnnouncement.from_json(msg.payload))
        except InputError:
            self.rejected += 1

    def attach(self, bus: TopicBus, pattern: str = "drift/+/+/announce"):
        return bus.subscribe(pattern, callback=self.on_message)

    def snapshot(self) -> tuple[DriftAnnouncement, ...]:
        with self._lock:
            return tuple(a for seq in self._by_device.values() for a in seq)

    def latest(self, device_id: str) -> DriftAnnouncement | None:
        with self._lock:
            seq = self._by_device.get(device_id)
            return seq[-1] if seq else None
