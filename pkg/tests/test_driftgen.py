import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftensemble.driftgen import (
    SENSOR_PROFILES,
    Emulator,
    SensorProfile,
    SlotKind,
    demux_csv,
    export_csv,
    generate_experiment,
    q_grid,
    read_csv_rows,
    stream_csv,
)
from driftensemble.errors import BusyError, FormatError, InputError
from driftensemble.estimators import ks_two_sample_distance

TEMP = SENSOR_PROFILES["temperature"]


# --------------------------------------------------------------------------- q grid


def test_q_grid_temperature():
    want = [0.3927, 0.589, 1.178, 2.356, 3.534, 4.712, 5.89]
    assert q_grid(1.178) == pytest.approx(want, abs=1e-4)


def test_q_grid_unit_and_pressure():
    assert q_grid(1.0) == pytest.approx([1 / 3, 1 / 2, 1, 2, 3, 4, 5])
    assert q_grid(224.52) == pytest.approx([74.84, 112.26, 224.52, 449.04, 673.56, 898.08, 1122.6], abs=1e-9)


def test_q_grid_rejects_nonpositive():
    with pytest.raises(InputError):
        q_grid(0.0)


# --------------------------------------------------------------------------- experiment streams


def test_generated_stream_layout():
    s = generate_experiment(TEMP, 5 * TEMP.sigma2, n_slots=40, seed=3)
    assert len(s.slots) == 40 and s.slots[0].kind is SlotKind.NORMAL
    assert s.slots[-1].end == len(s)
    for a, b in zip(s.slots, s.slots[1:]):
        assert a.end == b.start
    for slot in s.slots:
        assert 500 <= slot.length <= 1500
        assert abs(slot.q_offset) <= 5 * TEMP.sigma2
        assert (s.labels[slot.start : slot.end] == int(slot.drifting)).all()


def test_slot_offsets_applied():
    s = generate_experiment(TEMP, 4.0, n_slots=30, seed=1)
    noise = generate_experiment(TEMP, 1e-300, n_slots=30, seed=1).values
    for slot in s.slots:
        diff = s.values[slot.start : slot.end] - noise[slot.start : slot.end]
        if slot.kind is SlotKind.ABRUPT:
            assert diff == pytest.approx(np.full(slot.length, slot.q_offset), abs=1e-9)
        elif slot.kind is SlotKind.INCREMENTAL:
            assert diff == pytest.approx(slot.q_offset / slot.length * np.arange(slot.length), abs=1e-9)
        else:
            assert diff == pytest.approx(0.0, abs=1e-12)


def test_generation_is_seeded():
    a = generate_experiment(TEMP, 1.0, n_slots=10, seed=42)
    b = generate_experiment(TEMP, 1.0, n_slots=10, seed=42)
    assert np.array_equal(a.values, b.values) and a.slots == b.slots
    assert not np.array_equal(a.values, generate_experiment(TEMP, 1.0, n_slots=10, seed=43).values)


def test_vanishing_drift_is_indistinguishable():
    exceed = total = 0
    for seed in range(100):
        s = generate_experiment(TEMP, 1e-4 * TEMP.sigma, n_slots=12, seed=seed)
        normal = [sl for sl in s.slots if not sl.drifting]
        drift = [sl for sl in s.slots if sl.drifting]
        if not (normal and drift):
            continue
        a = s.values[normal[0].start : normal[0].end]
        b = s.values[drift[0].start : drift[0].end]
        crit = 1.628 * math.sqrt((len(a) + len(b)) / (len(a) * len(b)))
        exceed += ks_two_sample_distance(a, b) > crit
        total += 1
    assert total >= 90 and exceed < 0.05 * total


@pytest.mark.parametrize("q", [0.0, -1.0, float("inf")])
def test_bad_q_rejected(q):
    with pytest.raises(InputError):
        generate_experiment(TEMP, q)


def test_sensor_profile_validation():
    with pytest.raises(InputError):
        SensorProfile("x", 0.0, 0.0)


# --------------------------------------------------------------------------- emulator


def test_injected_abrupt_drift_labels_and_shifts():
    e = Emulator(TEMP, seed=0)
    e.take(100)
    start = e.inject_drift("abrupt", 3 * TEMP.sigma, 800)
    assert start == 100
    samples, labels = e.take(900)
    assert labels[:800] == [1] * 800 and labels[800:] == [0] * 100
    shifted = np.mean([s.value for s in samples[:800]])
    assert shifted == pytest.approx(TEMP.mu_prime + 3 * TEMP.sigma, abs=0.15)


def test_zero_length_injection_rejected():
    e = Emulator(TEMP)
    with pytest.raises(InputError):
        e.inject_drift("abrupt", 1.0, 0)
    assert not e.busy
    with pytest.raises(InputError):
        e.inject_drift("normal", 1.0, 5)


def test_back_to_back_injections():
    e = Emulator(TEMP)
    e.inject_drift("incremental", 2.0, 800)
    for i in range(800):
        with pytest.raises(BusyError):
            e.inject_drift("abrupt", 1.0, 10)
        e.next()
    assert e.inject_drift("abrupt", 1.0, 10) == 800


def test_incremental_injection_ramps():
    e = Emulator(SensorProfile("t", 0.0, 1e-12), seed=0)
    e.inject_drift("incremental", 10.0, 10)
    values = [s.value for s in e.take(10)[0]]
    assert values == pytest.approx([float(j) for j in range(10)], abs=1e-4)


def test_submitted_commands_apply_at_sample_boundary():
    e = Emulator(TEMP)
    e.take(5)
    e.submit('{"kind": "abrupt", "q_offset": 2.0, "length": 3}')
    e.submit({"kind": "abrupt", "q_offset": 2.0, "length": 3})
    e.submit("not json")
    _, labels = e.take(4)
    assert labels == [1, 1, 1, 0]
    assert e.acks[0]["ok"] and e.acks[0]["start"] == 5
    assert e.acks[1] == {"ok": False, "error": "BusyError", "detail": "a drift slot is already active"}
    assert not e.acks[2]["ok"]


def test_submit_from_other_thread():
    e = Emulator(TEMP)
    t = threading.Thread(target=e.submit, args=({"kind": "abrupt", "q_offset": 1.0, "length": 2},))
    t.start()
    t.join()
    _, labels = e.take(3)
    assert labels == [1, 1, 0]


def test_emulator_timestamps():
    e = Emulator(TEMP, start_ms=1000)
    samples, _ = e.take(3)
    assert [s.index for s in samples] == [0, 1, 2]
    assert [s.timestamp for s in samples] == [1000, 11000, 21000]


# --------------------------------------------------------------------------- CSV


def write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_csv_well_formed(tmp_path):
    p = write(tmp_path / "a.csv", ["timestamp,device_id,sensor_type,value", "0,d,t,1.5", "10000,d,t,2.5", "20000,d,t,3.5"])
    s = stream_csv(p)
    assert [x.index for x in s] == [0, 1, 2] and s.skipped == 0
    assert [x.value for x in s] == [1.5, 2.5, 3.5]


def test_csv_skips_malformed_row(tmp_path):
    lines = ["timestamp,device_id,sensor_type,value"] + [f"{i},d,t,{i}" for i in range(10)]
    lines[4] = "3,d,t,oops"
    s = stream_csv(write(tmp_path / "b.csv", lines))
    assert len(s) == 9 and s.skipped == 1
    assert [x.index for x in s] == list(range(9))


def test_csv_aborts_when_mostly_malformed(tmp_path):
    lines = ["timestamp,device_id,sensor_type,value", "0,d,t,1.0", "1,d,t,x", "2,d,t,nan"]
    with pytest.raises(FormatError):
        stream_csv(write(tmp_path / "c.csv", lines))


def test_csv_missing_file_and_columns(tmp_path):
    with pytest.raises(InputError):
        stream_csv(tmp_path / "nope.csv")
    with pytest.raises(FormatError):
        stream_csv(write(tmp_path / "d.csv", ["time,val", "0,1"]))


def test_csv_iso_timestamps_and_column_map(tmp_path):
    p = write(tmp_path / "e.csv", ["ts,reading", "2024-01-01T00:00:00Z,1.0", "2024-01-01T00:00:10Z,2.0"])
    rows = read_csv_rows(p, {"timestamp": "ts", "value": "reading"})
    assert rows[1].sample.timestamp - rows[0].sample.timestamp == 10_000


def test_demux_multi_device(tmp_path):
    lines = ["timestamp,device_id,sensor_type,value"]
    for i in range(6):
        lines.append(f"{i * 10000},dev{i % 2},temperature,{i}")
        lines.append(f"{i * 10000},dev{i % 2},humidity,{i + 100}")
    streams = demux_csv(write(tmp_path / "f.csv", lines))
    assert set(streams) == {(f"dev{d}", s) for d in (0, 1) for s in ("temperature", "humidity")}
    dev1_t = streams[("dev1", "temperature")]
    assert [x.index for x in dev1_t] == [0, 1, 2]
    assert [x.value for x in dev1_t] == [1.0, 3.0, 5.0]
    assert all(b.timestamp - a.timestamp == 20_000 for a, b in zip(dev1_t, dev1_t[1:]))


def test_export_round_trip(tmp_path):
    s = generate_experiment(TEMP, 1.0, n_slots=3, seed=0)
    export_csv(s, tmp_path / "g.csv")
    back = stream_csv(tmp_path / "g.csv")
    assert np.array_equal(np.array([x.value for x in back]), s.values)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_labels_match_slot_kinds(seed, q):
    s = generate_experiment(TEMP, q, n_slots=5, seed=seed, min_length=10, max_length=30)
    expected = np.concatenate([np.full(sl.length, int(sl.drifting)) for sl in s.slots])
    assert np.array_equal(s.labels, expected)
