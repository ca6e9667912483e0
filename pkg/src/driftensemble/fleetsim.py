"""Synchronous multi-device simulation: emulators feed detectors, which talk over a topic bus."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .bus import TopicBus
from .calibration import CalibrationProfile, bundled_profile
from .detector import Detector, DriftEvent
from .driftgen import SENSOR_PROFILES, Emulator, SensorProfile, SlotKind
from .errors import InputError
from .fleet import (
    DEFAULT_PEER_KEYS,
    AnnouncementStore,
    ClassificationResult,
    DeviceMetadata,
    DriftAnnouncement,
    Verdict,
    announce_topic,
    build_announcement,
    classify,
    match_peers,
    verdict_topic,
)

__all__ = ["FleetConfig", "FleetOutcome", "Scenario", "run_fleet", "default_manifest"]


class Scenario(str, enum.Enum):
    NATURAL = "natural"
    ABNORMAL = "abnormal"
    MIXED = "mixed"


@dataclass(frozen=True)
class FleetConfig:
    """Simulation knobs. Offsets are in baseline standard deviations.

    Devices publish a status announcement (current vote and window Z) every
    ``heartbeat_every`` samples; a device's drift is classified ``settle``
    samples after its event, once its voting window covers only drifted data.
    """

    seed: int = 0
    n_samples: int = 4000
    drift_start: int = 1000
    drift_length: int | None = None  # None: the drift lasts until the end
    offset_sigmas: float = 10.0
    heartbeat_every: int = 50
    settle: int | None = None
    keys: tuple[str, ...] = DEFAULT_PEER_KEYS
    min_peers: int = 2
    kappa: float = 3.0

    def __post_init__(self) -> None:
        if not 0 <= self.drift_start < self.n_samples:
            raise InputError("drift_start must fall inside the simulation")
        if (self.drift_length is not None and self.drift_length <= 0) or self.heartbeat_every <= 0:
            raise InputError("drift_length and heartbeat_every must be positive")


@dataclass
class FleetOutcome:
    scenario: Scenario
    results: list[tuple[int, ClassificationResult]] = field(default_factory=list)
    expected: dict[str, Verdict | None] = field(default_factory=dict)
    events: dict[str, list[DriftEvent]] = field(default_factory=dict)
    verdict_messages: int = 0

    def verdicts_by_device(self) -> dict[str, list[Verdict]]:
        out: dict[str, list[Verdict]] = {}
        for _, res in self.results:
            out.setdefault(res.subject, []).append(res.verdict)
        return out

    @property
    def correct(self) -> bool:
        got = self.verdicts_by_device()
        for device, want in self.expected.items():
            seen = got.get(device, [])
            if want is None:
                if seen:
                    return False
            elif not seen or any(v is not want for v in seen):
                return False
        return True


def default_manifest(n: int = 5, sensor_type: str = "temperature", room: str = "A") -> list[DeviceMetadata]:
    return [DeviceMetadata(f"dev{i}", sensor_type, {"room": room}) for i in range(n)]


def _drifting_devices(scenario: Scenario, devices: Sequence[DeviceMetadata], keys: Sequence[str]) -> tuple[set, set]:
    """Device ids given a shared drift and the id given a lone drift."""
    groups: list[list[DeviceMetadata]] = []
    seen: set[str] = set()
    for d in devices:
        if d.device_id in seen:
            continue
        group = [d, *match_peers(d, devices, keys)]
        seen.update(g.device_id for g in group)
        groups.append(group)
    if scenario is Scenario.NATURAL:
        return {d.device_id for d in devices}, set()
    if scenario is Scenario.ABNORMAL:
        return set(), {devices[0].device_id}
    # mixed: alternate groups between a shared drift and a single-device drift
    shared, lone = set(), set()
    for i, group in enumerate(groups):
        if i % 2 == 0:
            shared.update(d.device_id for d in group)
        else:
            lone.add(group[0].device_id)
    if len(groups) == 1:
        # one group: the shared drift is already the whole fleet, so nobody drifts alone
        return shared, set()
    return shared, lone


def _expected(devices, shared, lone, keys, min_peers) -> dict[str, Verdict | None]:
    out: dict[str, Verdict | None] = {}
    for d in devices:
        if d.device_id not in shared and d.device_id not in lone:
            out[d.device_id] = None
        elif len(match_peers(d, devices, keys)) < min_peers:
            out[d.device_id] = Verdict.INSUFFICIENT_PEERS
        elif d.device_id in shared:
            out[d.device_id] = Verdict.NATURAL
        else:
            out[d.device_id] = Verdict.ABNORMAL
    return out


def run_fleet(
    devices: Sequence[DeviceMetadata],
    scenario: Scenario | str,
    config: FleetConfig | None = None,
    profiles: Mapping[str, CalibrationProfile] | None = None,
    sensors: Mapping[str, SensorProfile] | None = None,
) -> FleetOutcome:
    """Run every device in lockstep and classify each drift event against its peers."""
    scenario = Scenario(scenario)
    config = config or FleetConfig()
    if not devices:
        raise InputError("the fleet is empty")
    profiles = dict(profiles or {})
    sensors = dict(sensors or SENSOR_PROFILES)
    bus = TopicBus()
    store = AnnouncementStore()
    store.attach(bus)
    verdict_sub = bus.subscribe("drift/+/+/verdict")

    shared, lone = _drifting_devices(scenario, devices, config.keys)
    outcome = FleetOutcome(scenario, expected=_expected(devices, shared, lone, config.keys, config.min_peers))

    nodes = []
    for i, meta in enumerate(devices):
        if meta.sensor_type not in sensors:
            raise InputError(f"no sensor profile for {meta.sensor_type!r}")
        profile = profiles.get(meta.sensor_type) or bundled_profile(meta.sensor_type)
        profiles[meta.sensor_type] = profile
        sensor = sensors[meta.sensor_type]
        emulator = Emulator(sensor, seed=config.seed * 10_007 + i, device_id=meta.device_id)
        detector = Detector(profile, stream_id=meta.device_id)
        nodes.append((meta, emulator, detector, sensor))
        outcome.events[meta.device_id] = []

    settle = config.settle
    if settle is None:
        settle = max(det.window_model.l_max for _, _, det, _ in nodes) + config.heartbeat_every
    pending: list[tuple[int, DeviceMetadata, DriftAnnouncement]] = []

    for t in range(config.n_samples):
        for meta, emulator, detector, sensor in nodes:
            if t == config.drift_start and (meta.device_id in shared or meta.device_id in lone):
                emulator.submit(
                    {
                        "kind": SlotKind.ABRUPT.value,
                        "q_offset": config.offset_sigmas * sensor.sigma,
                        "length": config.drift_length or config.n_samples - config.drift_start,
                    }
                )
            sample, _ = emulator.next()
            event = detector.ingest(sample)
            topic = announce_topic(meta.device_id, meta.sensor_type)
            if event is not None:
                outcome.events[meta.device_id].append(event)
                ann = build_announcement(event, meta, sample.timestamp)
                bus.publish(topic, ann.to_json())
                pending.append((t + settle, meta, ann))
            elif t % config.heartbeat_every == 0:
                status = DriftAnnouncement(
                    vote=detector.last_vote,
                    z_statistic=detector.current_z(),
                    mean_offset=detector.current_mean_offset(),
                    window_length=detector.voting_length,
                    sample_index=t,
                    metadata=meta,
                    issued_at=sample.timestamp,
                )
                bus.publish(topic, status.to_json())
        due = [p for p in pending if p[0] <= t]
        pending = [p for p in pending if p[0] > t]
        for _, meta, ann in due:
            current = store.latest(meta.device_id)
            subject = current if current is not None and current.vote == 1 else ann
            period = sensors[meta.sensor_type].sample_period_ms
            t_c = 5 * period * profiles[meta.sensor_type].resolved_window_model().l_max
            result = classify(subject, store.snapshot(), config.keys, t_c, config.min_peers, config.kappa)
            bus.publish(verdict_topic(meta.device_id, meta.sensor_type), result.to_dict())
            outcome.results.append((t, result))
    outcome.verdict_messages = len(verdict_sub.drain())
    bus.close()
    return outcome
