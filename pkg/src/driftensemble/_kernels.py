"""Compiled per-sample kernels shared by the streaming classes and the batch runner.

Every estimator and detector step exists exactly once, here. The public classes
in :mod:`driftensemble.estimators` and :mod:`driftensemble.detector` hold their
state in small numpy arrays and call these functions one sample at a time; the
experiment harness calls :func:`run_detector` which loops over the same step.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# ADWIN exponential histogram: level k holds buckets of 2**k samples.
ADWIN_MAX_LEVELS = 48

# PHT state vector layout.
P_N, P_MEAN, P_UP, P_UP_MIN, P_DOWN, P_DOWN_MAX, P_INIT_N, P_INIT_MEAN = range(8)
PHT_STATE_SIZE = 8

# KSWIN integer metadata layout.
K_HEAD, K_COUNT = range(2)

# Detector float state layout.
(
    F_MU0,
    F_SIGMA0,
    F_TREND_SY,
    F_TREND_SIY,
    F_PREV_MEAN,
    F_DELTA,
    F_BETA,
    F_LAMBDA,
    F_KS_THRESHOLD,
    F_ZETA,
    F_ETA,
    F_GAMMA,
    F_UPSILON_SCALE,
) = range(13)
DET_F_SIZE = 13

# Detector integer state layout.
(
    I_T,
    I_LV,
    I_COOLDOWN,
    I_TREND_N,
    I_HAS_PREV,
    I_LAST_A,
    I_LAST_P,
    I_LAST_K,
    I_L_MIN,
    I_L_MAX,
    I_L_M,
    I_L_OMEGA,
    I_L_R,
    I_M,
    I_CAP,
    I_LAST_END,
) = range(16)
DET_I_SIZE = 16

NEVER = -(1 << 40)


# --------------------------------------------------------------------------- ADWIN


@njit(cache=True)
def adwin_insert(sums, sqs, nb, totals, x, delta, max_per_level):
    """Append ``x`` and shrink the window while any bucket boundary is a significant cut.

    ``totals`` is ``[count, sum, sum_sq]``. Returns True when buckets were dropped.
    """
    k = nb[0]
    sums[0, k] = x
    sqs[0, k] = x * x
    nb[0] = k + 1
    totals[0] += 1.0
    totals[1] += x
    totals[2] += x * x

    level = 0
    while nb[level] > max_per_level:
        s = sums[level, 0] + sums[level, 1]
        q = sqs[level, 0] + sqs[level, 1]
        for j in range(2, nb[level]):
            sums[level, j - 2] = sums[level, j]
            sqs[level, j - 2] = sqs[level, j]
        nb[level] -= 2
        kk = nb[level + 1]
        sums[level + 1, kk] = s
        sqs[level + 1, kk] = q
        nb[level + 1] = kk + 1
        level += 1

    drifted = False
    while totals[0] >= 2.0:
        n = totals[0]
        mean = totals[1] / n
        var = totals[2] / n - mean * mean
        if var < 0.0:
            var = 0.0
        log_term = math.log(2.0 * n / delta)

        top = ADWIN_MAX_LEVELS - 1
        while top > 0 and nb[top] == 0:
            top -= 1

        n_hist = 0.0
        s_hist = 0.0
        cut_level = -1
        cut_index = -1
        for lev in range(top, -1, -1):
            size = float(1 << lev)
            for j in range(nb[lev]):
                n_hist += size
                s_hist += sums[lev, j]
                n_new = n - n_hist
                if n_new < 1.0:
                    break
                m = 1.0 / (1.0 / n_hist + 1.0 / n_new)
                eps = math.sqrt(2.0 / m * var * log_term) + 2.0 / (3.0 * m) * log_term
                if abs(s_hist / n_hist - (totals[1] - s_hist) / n_new) > eps:
                    cut_level = lev
                    cut_index = j
                    break
            if cut_level >= 0:
                break
        if cut_level < 0:
            break

        # drop every bucket older than or equal to the cut
        for lev in range(top, cut_level, -1):
            size = float(1 << lev)
            for j in range(nb[lev]):
                totals[0] -= size
                totals[1] -= sums[lev, j]
                totals[2] -= sqs[lev, j]
            nb[lev] = 0
        size = float(1 << cut_level)
        for j in range(cut_index + 1):
            totals[0] -= size
            totals[1] -= sums[cut_level, j]
            totals[2] -= sqs[cut_level, j]
        remaining = nb[cut_level] - (cut_index + 1)
        for j in range(remaining):
            sums[cut_level, j] = sums[cut_level, j + cut_index + 1]
            sqs[cut_level, j] = sqs[cut_level, j + cut_index + 1]
        nb[cut_level] = remaining
        drifted = True
    return drifted


@njit(cache=True)
def adwin_epsilon_cut(n_hist, n_new, variance, delta, n_total):
    m = 1.0 / (1.0 / n_hist + 1.0 / n_new)
    log_term = math.log(2.0 * n_total / delta)
    return math.sqrt(2.0 / m * variance * log_term) + 2.0 / (3.0 * m) * log_term


# --------------------------------------------------------------------------- PHT


@njit(cache=True)
def pht_insert(state, x, beta, lam):
    """Two-sided Page-Hinkley step. Returns +1 (increase), -1 (decrease) or 0."""
    state[P_N] += 1.0
    state[P_MEAN] += (x - state[P_MEAN]) / state[P_N]
    mean = state[P_MEAN]
    state[P_UP] += x - mean - beta / 2.0
    if state[P_UP] < state[P_UP_MIN]:
        state[P_UP_MIN] = state[P_UP]
    state[P_DOWN] += x - mean + beta / 2.0
    if state[P_DOWN] > state[P_DOWN_MAX]:
        state[P_DOWN_MAX] = state[P_DOWN]

    direction = 0
    if state[P_UP] - state[P_UP_MIN] >= lam:
        direction = 1
    elif state[P_DOWN_MAX] - state[P_DOWN] >= lam:
        direction = -1
    if direction != 0:
        pht_reset(state)
    return direction


@njit(cache=True)
def pht_reset(state):
    state[P_N] = state[P_INIT_N]
    state[P_MEAN] = state[P_INIT_MEAN]
    state[P_UP] = 0.0
    state[P_UP_MIN] = 0.0
    state[P_DOWN] = 0.0
    state[P_DOWN_MAX] = 0.0


# --------------------------------------------------------------------------- KS


@njit(cache=True)
def ks_sorted_distance(a, b):
    """Exact sup |F_a - F_b| for two ascending arrays, evaluated at every pooled point."""
    na = a.shape[0]
    nb = b.shape[0]
    i = 0
    j = 0
    d = 0.0
    while i < na and j < nb:
        if a[i] < b[j]:
            v = a[i]
        else:
            v = b[j]
        while i < na and a[i] == v:
            i += 1
        while j < nb and b[j] == v:
            j += 1
        gap = abs(i / na - j / nb)
        if gap > d:
            d = gap
    return d


@njit(cache=True)
def _sorted_insert(arr, n, x):
    # arr[:n] ascending; place x keeping order
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    for j in range(n, lo, -1):
        arr[j] = arr[j - 1]
    arr[lo] = x


@njit(cache=True)
def _sorted_remove(arr, n, x):
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    for j in range(lo, n - 1):
        arr[j] = arr[j + 1]


@njit(cache=True)
def kswin_insert(window, recent_sorted, meta, scratch, x, l_omega, l_r, threshold):
    """Slide the KSWIN window by one sample and test the oldest block against the recent block.

    ``window`` is a ring buffer of capacity ``l_omega + l_r``; ``recent_sorted`` keeps the
    newest ``min(count, l_r)`` values in ascending order. Returns True on drift.
    """
    cap = l_omega + l_r
    head = meta[K_HEAD]
    count = meta[K_COUNT]

    if count >= l_r:
        leaving = window[(head + count - l_r) % cap]
        _sorted_remove(recent_sorted, l_r, leaving)
        _sorted_insert(recent_sorted, l_r - 1, x)
    else:
        _sorted_insert(recent_sorted, count, x)

    if count == cap:
        window[head] = x
        head = (head + 1) % cap
    else:
        window[(head + count) % cap] = x
        count += 1
    meta[K_HEAD] = head
    meta[K_COUNT] = count

    if count < cap:
        return False

    for j in range(l_omega):
        scratch[j] = window[(head + j) % cap]
    hist = np.sort(scratch[:l_omega])
    d = ks_sorted_distance(hist, recent_sorted)
    if d > threshold:
        # keep only the recent block
        meta[K_HEAD] = (head + l_omega) % cap
        meta[K_COUNT] = l_r
        return True
    return False


@njit(cache=True)
def _std_normal_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@njit(cache=True)
def one_sample_ks_sorted(values, mu0, sigma0):
    """Kolmogorov statistic of ascending ``values`` against Normal(mu0, sigma0**2)."""
    n = values.shape[0]
    d = 0.0
    for i in range(n):
        cdf = _std_normal_cdf((values[i] - mu0) / sigma0)
        upper = (i + 1) / n - cdf
        lower = cdf - i / n
        if upper > d:
            d = upper
        if lower > d:
            d = lower
    return d


# --------------------------------------------------------------------------- trend / window


@njit(cache=True)
def trend_push(istate, fstate, x, l_m):
    """Buffer ``x`` into the non-overlapping trend block.

    Returns ``(ready, slope, mean, upsilon, has_upsilon, degenerate)``; only ``ready``
    is meaningful until the block reaches ``l_m`` samples.
    """
    i = istate[I_TREND_N]
    fstate[F_TREND_SY] += x
    fstate[F_TREND_SIY] += i * x
    istate[I_TREND_N] = i + 1
    if i + 1 < l_m:
        return False, 0.0, 0.0, 0.0, False, False

    n = float(l_m)
    sy = fstate[F_TREND_SY]
    mean = sy / n
    i_bar = (n - 1.0) / 2.0
    sxx = n * (n * n - 1.0) / 12.0
    slope = (fstate[F_TREND_SIY] - i_bar * sy) / sxx if sxx > 0.0 else 0.0

    has_upsilon = istate[I_HAS_PREV] == 1
    upsilon = 0.0
    degenerate = False
    if has_upsilon:
        prev = fstate[F_PREV_MEAN]
        denom = abs(prev)
        if denom < 1e-9:
            denom = 1e-9
            degenerate = True
        upsilon = abs(mean - prev) / denom

    fstate[F_PREV_MEAN] = mean
    istate[I_HAS_PREV] = 1
    istate[I_TREND_N] = 0
    fstate[F_TREND_SY] = 0.0
    fstate[F_TREND_SIY] = 0.0
    return True, slope, mean, upsilon, has_upsilon, degenerate


@njit(cache=True)
def normalized_window_size(upsilon, zeta, eta, gamma):
    """Invert upsilon = zeta * exp(eta * x) + gamma for x, clamped to [0, 1]."""
    if upsilon <= gamma:
        return 1.0
    if upsilon >= zeta + gamma:
        return 0.0
    x = math.log((upsilon - gamma) / zeta) / eta
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True)
def voting_length(upsilon, zeta, eta, gamma, l_min, l_max):
    x = normalized_window_size(upsilon, zeta, eta, gamma)
    # round half away from zero, matching Python's documented example values
    return int(math.floor(l_min + x * (l_max - l_min) + 0.5))


# --------------------------------------------------------------------------- detector


@njit(cache=True)
def detector_step(
    istate,
    fstate,
    a_sums,
    a_sqs,
    a_nb,
    a_totals,
    p_state,
    k_window,
    k_sorted,
    k_meta,
    k_scratch,
    cum_ring,
    value_ring,
    z_scratch,
    event_counts,
    x,
):
    """Ingest one finite value into an ensemble detector.

    Returns ``(verdict_a, direction_p, verdict_k, vote, event_length, z, mean_offset)``
    where ``event_length`` is 0 unless an event fired. An event window is the
    voting window clipped to start after the previous event, so events never
    overlap. On a firing, ``event_counts`` receives the per-estimator verdict
    counts of that window.
    """
    t = istate[I_T]
    cap = istate[I_CAP]

    va = adwin_insert(a_sums, a_sqs, a_nb, a_totals, x, fstate[F_DELTA], istate[I_M])
    dp = pht_insert(p_state, x, fstate[F_BETA], fstate[F_LAMBDA])
    vk = kswin_insert(
        k_window, k_sorted, k_meta, k_scratch, x, istate[I_L_OMEGA], istate[I_L_R], fstate[F_KS_THRESHOLD]
    )
    if va:
        istate[I_LAST_A] = t
    if dp != 0:
        istate[I_LAST_P] = t
    if vk:
        istate[I_LAST_K] = t

    slot = t % cap
    prev_slot = (t - 1) % cap
    for e in range(3):
        prev = cum_ring[e, prev_slot] if t > 0 else 0
        hit = va if e == 0 else (dp != 0 if e == 1 else vk)
        cum_ring[e, slot] = prev + (1 if hit else 0)
    value_ring[slot] = x

    lv = istate[I_LV]
    vote = 0
    if t + 1 >= lv:
        n_votes = 0
        if t - istate[I_LAST_A] < lv:
            n_votes += 1
        if t - istate[I_LAST_P] < lv:
            n_votes += 1
        if t - istate[I_LAST_K] < lv:
            n_votes += 1
        if n_votes >= 2:
            vote = 1

    fired = 0
    z = 0.0
    mean_offset = 0.0
    if vote == 1 and istate[I_COOLDOWN] == 0:
        start = max(t - lv + 1, istate[I_LAST_END] + 1)
        fired = t - start + 1
        total = 0.0
        for j in range(fired):
            v = value_ring[(start + j) % cap]
            z_scratch[j] = v
            total += v
        mean_offset = total / fired - fstate[F_MU0]
        z = one_sample_ks_sorted(np.sort(z_scratch[:fired]), fstate[F_MU0], fstate[F_SIGMA0])
        for e in range(3):
            before = cum_ring[e, (start - 1) % cap] if start > 0 else 0
            event_counts[e] = cum_ring[e, slot] - before
        istate[I_COOLDOWN] = lv
        istate[I_LAST_END] = t
    elif istate[I_COOLDOWN] > 0:
        istate[I_COOLDOWN] -= 1

    ready, slope, mean, upsilon, has_upsilon, degenerate = trend_push(istate, fstate, x, istate[I_L_M])
    if ready and has_upsilon and not degenerate:
        istate[I_LV] = voting_length(
            upsilon * fstate[F_UPSILON_SCALE], fstate[F_ZETA], fstate[F_ETA], fstate[F_GAMMA], istate[I_L_MIN], istate[I_L_MAX]
        )

    istate[I_T] = t + 1
    return va, dp, vk, vote, fired, z, mean_offset


@njit(cache=True)
def run_detector(
    values,
    istate,
    fstate,
    a_sums,
    a_sqs,
    a_nb,
    a_totals,
    p_state,
    k_window,
    k_sorted,
    k_meta,
    k_scratch,
    cum_ring,
    value_ring,
    z_scratch,
):
    """Feed a whole array through :func:`detector_step`, recording per-sample traces."""
    n = values.shape[0]
    verdicts = np.zeros((3, n), np.uint8)
    directions = np.zeros(n, np.int8)
    votes = np.zeros(n, np.uint8)
    lengths = np.zeros(n, np.int32)
    fired = np.zeros(n, np.uint8)
    windows = np.zeros(n, np.int32)
    z_values = np.zeros(n)
    offsets = np.zeros(n)
    counts = np.zeros((3, n), np.int32)
    event_counts = np.zeros(3, np.int64)
    for i in range(n):
        # the window that a vote at this sample refers to
        lengths[i] = istate[I_LV]
        va, dp, vk, vote, f, z, off = detector_step(
            istate,
            fstate,
            a_sums,
            a_sqs,
            a_nb,
            a_totals,
            p_state,
            k_window,
            k_sorted,
            k_meta,
            k_scratch,
            cum_ring,
            value_ring,
            z_scratch,
            event_counts,
            values[i],
        )
        verdicts[0, i] = va
        verdicts[1, i] = dp != 0
        verdicts[2, i] = vk
        directions[i] = dp
        votes[i] = vote
        if f:
            fired[i] = 1
            windows[i] = f
            z_values[i] = z
            offsets[i] = off
            for e in range(3):
                counts[e, i] = event_counts[e]
    return verdicts, directions, votes, lengths, fired, windows, z_values, offsets, counts


# --------------------------------------------------------------------------- predictions


@njit(cache=True)
def window_labels(hits, lengths, start):
    """Mark ``[i - lengths[i] + 1, i]`` for every ``i >= start`` where ``hits[i]`` is set."""
    n = hits.shape[0]
    pred = np.zeros(n, np.uint8)
    for i in range(start, n):
        if hits[i]:
            lo = i - lengths[i] + 1
            if lo < start:
                lo = start
            for j in range(lo, i + 1):
                pred[j] = 1
    return pred


@njit(cache=True)
def presence_votes(verdicts, lengths, need):
    """Per-sample vote: at least ``need`` rows of ``verdicts`` have a hit in the trailing window."""
    k, n = verdicts.shape
    out = np.zeros(n, np.uint8)
    last = np.full(k, NEVER, np.int64)
    for i in range(n):
        lv = lengths[i]
        count = 0
        for e in range(k):
            if verdicts[e, i]:
                last[e] = i
            if i - last[e] < lv:
                count += 1
        if i + 1 >= lv and count >= need:
            out[i] = 1
    return out


# --------------------------------------------------------------------------- calibration replays


@njit(cache=True)
def adwin_replay(values, delta, max_per_level, stop_at_first):
    """Number of ADWIN detections over ``values`` from a fresh state."""
    sums = np.zeros((ADWIN_MAX_LEVELS, max_per_level + 1))
    sqs = np.zeros((ADWIN_MAX_LEVELS, max_per_level + 1))
    nb = np.zeros(ADWIN_MAX_LEVELS, np.int64)
    totals = np.zeros(3)
    hits = 0
    for i in range(values.shape[0]):
        if adwin_insert(sums, sqs, nb, totals, values[i], delta, max_per_level):
            hits += 1
            if stop_at_first:
                break
    return hits


@njit(cache=True)
def pht_replay(values, beta, lam, init_n, init_mean, stop_at_first):
    state = np.zeros(PHT_STATE_SIZE)
    state[P_INIT_N] = init_n
    state[P_INIT_MEAN] = init_mean
    pht_reset(state)
    hits = 0
    for i in range(values.shape[0]):
        if pht_insert(state, values[i], beta, lam) != 0:
            hits += 1
            if stop_at_first:
                break
    return hits


@njit(cache=True)
def kswin_replay(values, l_omega, l_r, threshold, stop_at_first):
    window = np.zeros(l_omega + l_r)
    recent = np.zeros(l_r)
    meta = np.zeros(2, np.int64)
    scratch = np.zeros(l_omega)
    hits = 0
    for i in range(values.shape[0]):
        if kswin_insert(window, recent, meta, scratch, values[i], l_omega, l_r, threshold):
            hits += 1
            if stop_at_first:
                break
    return hits
