# src/impact_numba/helpers.py

import numpy as np
from numba import njit

# ==============================================================================
# Core Numba Helper Functions
# Building blocks shared by flow generation, diagnostics and the proxy mapping.
# All of them are sequential and GIL-free so they can run inside day-level threads.
# ==============================================================================


@njit(nogil=True)
def _segment_times(starts: np.ndarray, sizes: np.ndarray, gaps: np.ndarray) -> np.ndarray:
    """Execution times of consecutive metaorders laid out back to back.

    ``gaps`` holds ``sizes[i] - 1`` inter-child gaps for each metaorder in order.
    """
    total = 0
    for i in range(len(sizes)):
        total += sizes[i]
    out = np.empty(total, dtype=np.float64)
    pos = 0
    g = 0
    for i in range(len(sizes)):
        t = starts[i]
        out[pos] = t
        pos += 1
        for _ in range(sizes[i] - 1):
            nxt = t + gaps[g]
            g += 1
            # keep strictly increasing when a gap is below one ulp of t
            if nxt <= t:
                nxt = np.nextafter(t, np.inf)
            out[pos] = nxt
            t = nxt
            pos += 1
    return out


@njit(nogil=True)
def _window_sums(x: np.ndarray, window: int) -> np.ndarray:
    """Sums of consecutive non-overlapping blocks of ``window`` values; the tail is dropped."""
    n_windows = len(x) // window
    out = np.zeros(n_windows, dtype=np.float64)
    for w in range(n_windows):
        acc = 0.0
        base = w * window
        for i in range(window):
            acc += x[base + i]
        out[w] = acc
    return out


@njit(nogil=True)
def _window_deltas(before: np.ndarray, after: np.ndarray, window: int) -> np.ndarray:
    """Price change from just before the first to just after the last event of each block."""
    n_windows = len(before) // window
    out = np.empty(n_windows, dtype=np.float64)
    for w in range(n_windows):
        out[w] = after[(w + 1) * window - 1] - before[w * window]
    return out


@njit(nogil=True)
def _lagged_products(x: np.ndarray, lags: np.ndarray):
    """For each lag: sum of x[i] * x[i + lag] and the number of terms."""
    sums = np.zeros(len(lags), dtype=np.float64)
    counts = np.zeros(len(lags), dtype=np.int64)
    n = len(x)
    for k in range(len(lags)):
        lag = lags[k]
        if lag >= n:
            continue
        acc = 0.0
        for i in range(n - lag):
            acc += x[i] * x[i + lag]
        sums[k] = acc
        counts[k] = n - lag
    return sums, counts


@njit(nogil=True)
def _increment_moments(p: np.ndarray, lags: np.ndarray, powers: np.ndarray):
    """For each (power, lag): sum of |p[i + lag] - p[i]| ** power over overlapping increments."""
    sums = np.zeros((len(powers), len(lags)), dtype=np.float64)
    counts = np.zeros(len(lags), dtype=np.int64)
    n = len(p)
    for k in range(len(lags)):
        lag = lags[k]
        if lag >= n:
            continue
        counts[k] = n - lag
        for i in range(n - lag):
            d = abs(p[i + lag] - p[i])
            for r in range(len(powers)):
                sums[r, k] += d ** powers[r]
    return sums, counts


@njit(nogil=True)
def _group_extents(ids: np.ndarray, volumes: np.ndarray, n_groups: int):
    """First index, last index, member count and summed volume of each group id in 0..n_groups-1."""
    first = np.full(n_groups, -1, dtype=np.int64)
    last = np.full(n_groups, -1, dtype=np.int64)
    count = np.zeros(n_groups, dtype=np.int64)
    total = np.zeros(n_groups, dtype=np.float64)
    for i in range(len(ids)):
        g = ids[i]
        if first[g] < 0:
            first[g] = i
        last[g] = i
        count[g] += 1
        total[g] += volumes[i]
    return first, last, count, total
