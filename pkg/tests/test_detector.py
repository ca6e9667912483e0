import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from driftensemble.calibration import bundled_profile
from driftensemble.detector import (
    WINDOW_COEFFICIENTS,
    Detector,
    DriftEvent,
    TrendWindow,
    VerdictHistory,
    WindowModel,
    adapt_voting_length,
    normalized_window_size,
    one_sample_ks_z,
    vote,
)
from driftensemble.errors import InputError, StateError
from driftensemble.estimators import Sample


@pytest.fixture(scope="module")
def temp_profile():
    return bundled_profile("temperature")


def temp_model(l_min=331, l_max=2000):
    return WindowModel(*WINDOW_COEFFICIENTS["temperature"], l_min=l_min, l_max=l_max)


# --------------------------------------------------------------------------- voting


@pytest.mark.parametrize("combo", list(itertools.product((0, 1), repeat=3)))
def test_vote_truth_table(combo):
    h = VerdictHistory(voting_length=4)
    for i in range(4):
        h.append([bool(c) and i == 2 for c in combo])
    assert vote(h) == (1 if sum(combo) >= 2 else 0)


def test_vote_is_zero_before_window_fills():
    h = VerdictHistory(voting_length=5)
    for _ in range(4):
        h.append([True, True, True])
    assert vote(h) == 0
    h.append([False, False, False])
    assert vote(h) == 1


def test_only_kswin_never_votes():
    h = VerdictHistory(voting_length=10)
    for i in range(50):
        h.append([False, False, True])
        assert vote(h) == 0


def test_verdicts_age_out_of_window():
    h = VerdictHistory(voting_length=3)
    h.append([True, True, False])
    for _ in range(2):
        h.append([False, False, False])
    assert vote(h) == 1
    h.append([False, False, False])
    assert vote(h) == 0


def test_history_keeps_verdicts_when_window_grows():
    h = VerdictHistory(voting_length=3, capacity=10)
    h.append([True, True, False])
    for _ in range(4):
        h.append([False, False, False])
    h.set_voting_length(10)
    assert len(h.sequences()[0]) == 5
    assert vote(h) == 0  # five samples recorded, window needs ten


# --------------------------------------------------------------------------- trend


def test_trend_of_exact_line():
    tw = TrendWindow(64)
    out = [tw.push(float(i)) for i in range(64)]
    assert all(o is None for o in out[:-1])
    st_ = out[-1]
    assert st_.slope == pytest.approx(1.0, abs=1e-12)
    assert st_.theta_deg == pytest.approx(45.0, abs=1e-9)
    assert st_.upsilon is None


def test_trend_constant_blocks():
    tw = TrendWindow(16)
    first = [tw.push(3.0) for _ in range(16)][-1]
    second = [tw.push(3.0) for _ in range(16)][-1]
    assert first.slope == 0.0 and first.theta_deg == 0.0
    assert second.upsilon == 0.0 and not second.degenerate


def test_upsilon_mean_ratio():
    tw = TrendWindow(8)
    for _ in range(8):
        tw.push(20.0)
    stat = [tw.push(22.0) for _ in range(8)][-1]
    assert stat.upsilon == pytest.approx(0.1, rel=1e-12)


def test_upsilon_zero_previous_mean_is_degenerate():
    tw = TrendWindow(4)
    for _ in range(4):
        tw.push(0.0)
    stat = [tw.push(1.0) for _ in range(4)][-1]
    assert stat.degenerate


# --------------------------------------------------------------------------- window model


def test_adapt_boundaries():
    m = temp_model()
    zeta, eta, gamma = WINDOW_COEFFICIENTS["temperature"]
    assert adapt_voting_length(zeta + gamma, m) == m.l_min
    assert adapt_voting_length(gamma, m) == m.l_max
    assert adapt_voting_length(100.0, m) == m.l_min
    assert adapt_voting_length(0.0, m) == m.l_max
    mid = zeta * math.exp(eta * 0.5) + gamma
    assert mid == pytest.approx(2.182, abs=1e-3)
    assert adapt_voting_length(mid, m) == round((m.l_min + m.l_max) / 2)


@pytest.mark.parametrize("sensor", sorted(WINDOW_COEFFICIENTS))
def test_window_model_inverts_forward_evaluation(sensor):
    m = WindowModel(*WINDOW_COEFFICIENTS[sensor], l_min=10, l_max=1000)
    for x in np.linspace(0.0, 1.0, 20):
        assert normalized_window_size(m.upsilon(x), m) == pytest.approx(x, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20))
def test_adapt_is_monotone_non_increasing(u1, u2):
    m = temp_model()
    lo, hi = sorted((u1, u2))
    assert adapt_voting_length(lo, m) >= adapt_voting_length(hi, m)


def test_window_model_validation():
    with pytest.raises(InputError):
        WindowModel(1.0, -1.0, 0.0, 10, 10)
    with pytest.raises(InputError):
        WindowModel(0.0, -1.0, 0.0, 1, 10)
    with pytest.raises(InputError):
        WindowModel.for_sensor("sonar", 100)
    assert WindowModel.for_sensor("humidity", 330).l_min == 331


# --------------------------------------------------------------------------- Z statistic


def test_z_of_quantile_matched_window():
    n = 200
    q = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n) * 2.0 + 5.0
    assert one_sample_ks_z(q, 5.0, 2.0) <= 0.5 / n + 1e-12


def test_z_of_disjoint_window():
    rng = np.random.default_rng(0)
    w = rng.normal(0, 1, 100) + 10
    assert one_sample_ks_z(w, 0.0, 1.0) > 0.999


def test_z_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.integers(5, 300))
        assert one_sample_ks_z(w, 0.0, 1.0) == pytest.approx(stats.kstest(w, "norm").statistic, abs=1e-12)


def test_z_monte_carlo_below_critical_value():
    below = 0
    for seed in range(100):
        w = np.random.default_rng(seed).normal(20.32, math.sqrt(1.178), 100)
        below += one_sample_ks_z(w, 20.32, math.sqrt(1.178)) < 1.628 / 10
    assert below >= 95


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100), st.floats(-1e3, 1e3), st.integers(0, 10_000))
def test_z_affine_invariance(scale, shift, seed):
    w = np.random.default_rng(seed).normal(0, 1, 40)
    z0 = one_sample_ks_z(w, 0.1, 1.2)
    z1 = one_sample_ks_z(w * scale + shift, 0.1 * scale + shift, 1.2 * scale)
    assert z1 == pytest.approx(z0, abs=1e-9)


def test_z_rejects_nonpositive_sigma():
    with pytest.raises(InputError):
        one_sample_ks_z([1.0, 2.0], 0.0, 0.0)


# --------------------------------------------------------------------------- Detector


def test_uncalibrated_detector_refuses_samples():
    with pytest.raises(StateError):
        Detector().ingest(1.0)


def test_non_finite_sample_is_rejected_and_counted(temp_profile):
    d = Detector(temp_profile)
    d.ingest(20.0)
    with pytest.raises(InputError):
        d.ingest(Sample(1, 0, float("nan")))
    assert d.skipped == 1
    assert d.n_ingested == 1


@pytest.mark.parametrize("seed", range(20))
def test_baseline_stream_produces_no_events(temp_profile, seed):
    b = temp_profile.baseline
    x = np.random.default_rng(seed).normal(b.mu_prime, b.sigma, 5000)
    assert Detector(temp_profile).run(x).events == []


@pytest.mark.parametrize("seed", range(20))
def test_step_produces_one_event_covering_it(temp_profile, seed):
    b = temp_profile.baseline
    x = np.random.default_rng(1000 + seed).normal(b.mu_prime, b.sigma, 4000)
    x[2000:] += 5 * b.sigma2
    d = Detector(temp_profile)
    events = d.run(x).events
    covering = [e for e in events if e.start <= 2000 <= e.end]
    assert len(covering) == 1
    assert covering[0].end - 2000 <= 2 * d.voting_length
    assert not [e for e in events if e.end < 2000]


def test_streaming_and_batch_agree(temp_profile):
    b = temp_profile.baseline
    rng = np.random.default_rng(3)
    x = rng.normal(b.mu_prime, b.sigma, 6000)
    x[1500:3000] += 3 * b.sigma
    x[4000:] += np.linspace(0, 6 * b.sigma, 2000)
    streamed = Detector(temp_profile, stream_id="s")
    events = [e for e in map(streamed.ingest, x) if e is not None]
    batch = Detector(temp_profile, stream_id="s")
    trace = batch.run(x)
    assert events == trace.events
    assert streamed.voting_length == batch.voting_length
    assert streamed.last_vote == int(trace.votes[-1])


def test_run_continues_from_streamed_state(temp_profile):
    b = temp_profile.baseline
    x = np.random.default_rng(9).normal(b.mu_prime, b.sigma, 3000)
    x[1000:] += 6 * b.sigma
    whole = Detector(temp_profile).run(x).events
    d = Detector(temp_profile)
    for v in x[:1200]:
        d.ingest(v)
    d.run(x[1200:])
    assert d.events == whole


@pytest.mark.parametrize("seed", range(5))
def test_events_never_overlap(temp_profile, seed):
    b = temp_profile.baseline
    rng = np.random.default_rng(seed)
    x = rng.normal(b.mu_prime, b.sigma, 20_000)
    for start in range(1000, 20_000, 1700):
        x[start : start + rng.integers(300, 1500)] += rng.choice([-1, 1]) * rng.uniform(1, 8) * b.sigma
    events = Detector(temp_profile).run(x).events
    assert events
    for a, c in zip(events, events[1:]):
        assert a.end < c.start
    for e in events:
        assert e.window_length == e.end - e.start + 1
        assert 0.0 <= e.z_statistic <= 1.0


def test_voting_length_stays_in_bounds(temp_profile):
    d = Detector(temp_profile)
    m = d.window_model
    trace = d.run(np.random.default_rng(0).normal(20, 3, 5000))
    assert trace.lengths.min() >= m.l_min and trace.lengths.max() <= m.l_max


def test_drift_event_validates_range():
    with pytest.raises(InputError):
        DriftEvent("s", 10, 19, (1, 1, 0), 0.5, window_length=5)
    e = DriftEvent("s", 10, 19, (1, 1, 0), 0.5, window_length=10)
    assert e.sample_index_range == (10, 19)
