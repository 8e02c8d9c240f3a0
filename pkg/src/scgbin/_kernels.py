"""Compiled helpers for the binning hot loops."""

import numpy as np
from numba import njit


@njit(cache=True)
def pstd(x, a, b):
    """Population std of x[a:b]; exactly 0 when the slice is constant."""
    n = b - a
    if n <= 1:
        return 0.0
    lo = x[a]
    hi = x[a]
    s = 0.0
    for k in range(a, b):
        v = x[k]
        s += v
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    if lo == hi:
        return 0.0
    m = s / n
    q = 0.0
    for k in range(a, b):
        d = x[k] - m
        q += d * d
    return np.sqrt(q / n)


@njit(cache=True)
def midpoint(a, b):
    # lower child takes the extra sample on odd widths
    return a + (b - a + 1) // 2


@njit(cache=True)
def adaptive_bounds(x, threshold):
    """Bisect [0, len(x)) until every bin has std <= threshold or width 1."""
    n = x.shape[0]
    out = np.empty(n + 1, dtype=np.int64)
    out[0] = 0
    n_out = 1
    stack_a = np.empty(64, dtype=np.int64)
    stack_b = np.empty(64, dtype=np.int64)
    stack_a[0] = 0
    stack_b[0] = n
    top = 1
    while top > 0:
        top -= 1
        a = stack_a[top]
        b = stack_b[top]
        if b - a > 1 and pstd(x, a, b) > threshold:
            c = midpoint(a, b)
            # right child first so the left one is processed next
            stack_a[top] = c
            stack_b[top] = b
            stack_a[top + 1] = a
            stack_b[top + 1] = c
            top += 2
        else:
            out[n_out] = b
            n_out += 1
    return out[:n_out]


@njit(cache=True)
def split_thresholds(x):
    """Effective split threshold of every splittable node of the bisection tree.

    A node splits under threshold T iff T is below the minimum std over the
    node and all its ancestors, so the bin count at T is 1 + #(values > T).
    """
    n = x.shape[0]
    out = np.empty(max(n - 1, 0), dtype=np.float64)
    n_out = 0
    stack_a = np.empty(64, dtype=np.int64)
    stack_b = np.empty(64, dtype=np.int64)
    stack_m = np.empty(64, dtype=np.float64)
    stack_a[0] = 0
    stack_b[0] = n
    stack_m[0] = np.inf
    top = 1
    while top > 0:
        top -= 1
        a = stack_a[top]
        b = stack_b[top]
        m = stack_m[top]
        if b - a < 2:
            continue
        s = pstd(x, a, b)
        if s < m:
            m = s
        out[n_out] = m
        n_out += 1
        if m <= 0.0:
            continue
        c = midpoint(a, b)
        stack_a[top] = c
        stack_b[top] = b
        stack_m[top] = m
        stack_a[top + 1] = a
        stack_b[top + 1] = c
        stack_m[top + 1] = m
        top += 2
    return out[:n_out]


@njit(cache=True)
def bin_stds(events, bounds):
    """Population std of every (event, bin) pair."""
    n_ev = events.shape[0]
    n_bins = bounds.shape[0] - 1
    out = np.empty((n_ev, n_bins), dtype=np.float64)
    for e in range(n_ev):
        row = events[e]
        for i in range(n_bins):
            out[e, i] = pstd(row, bounds[i], bounds[i + 1])
    return out
