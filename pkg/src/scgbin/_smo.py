"""Compiled inner loop of the SMO dual solver."""

import numpy as np
from numba import njit

_TAU = 1e-12


@njit(cache=True, nogil=True)
def smo_solve(K, y, cost, tol, max_iter, alpha, grad):
    """Run maximal-violating-pair SMO in place on ``alpha`` and ``grad``.

    Minimizes 0.5 a'Qa - e'a with Q_ij = y_i y_j K_ij subject to
    0 <= a <= cost and y'a = 0. ``grad`` must hold Qa - e for the
    starting ``alpha``.

    Returns (iterations, final violation m - M).
    """
    n = y.shape[0]
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator in I_up; j: second-order gain in I_low
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (alpha[t] < cost) if y[t] > 0 else (alpha[t] > 0.0):
                s = -y[t] * grad[t]
                if s > gmax:
                    gmax = s
                    i = t
        gmin = np.inf
        best = np.inf
        j = -1
        for t in range(n):
            if (alpha[t] > 0.0) if y[t] > 0 else (alpha[t] < cost):
                s = -y[t] * grad[t]
                if s < gmin:
                    gmin = s
                b = gmax - s
                if i >= 0 and b > 0.0:
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0.0:
                        a = _TAU
                    obj = -(b * b) / a
                    if obj < best:
                        best = obj
                        j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap < tol:
            break

        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 0.0:
            eta = _TAU
        step = (gmax + y[j] * grad[j]) / eta
        if y[i] > 0:
            lim = cost - alpha[i]
        else:
            lim = alpha[i]
        if lim < step:
            step = lim
        if y[j] > 0:
            lim = alpha[j]
        else:
            lim = cost - alpha[j]
        if lim < step:
            step = lim

        ai = alpha[i] + y[i] * step
        aj = alpha[j] - y[j] * step
        # snap to bounds so set membership is exact
        if ai < 1e-14 * cost:
            ai = 0.0
        elif ai > cost * (1.0 - 1e-14):
            ai = cost
        if aj < 1e-14 * cost:
            aj = 0.0
        elif aj > cost * (1.0 - 1e-14):
            aj = cost
        di = ai - alpha[i]
        dj = aj - alpha[j]
        alpha[i] = ai
        alpha[j] = aj
        for t in range(n):
            grad[t] += y[t] * (y[i] * di * K[t, i] + y[j] * dj * K[t, j])
        it += 1
    return it, gap
