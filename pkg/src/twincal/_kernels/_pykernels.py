"""Pure numpy implementations of the hot loops.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Results agree to rounding; the compiled versions are only faster.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

GAUSS_HALF_WIDTH = 8.0  # pulse support in units of tau_p


def superpose_rect(times, charges, dt, tau_p, n):
    """Sum of unit-area boxcar pulses ``q/tau_p`` on ``[t, t + tau_p)`` sampled at ``j*dt``."""
    times = np.asarray(times, dtype=np.float64)
    charges = np.asarray(charges, dtype=np.float64)
    steps = np.zeros(n + 1)
    if times.size:
        h = charges / tau_p
        j0 = np.ceil(times / dt).astype(np.int64)
        j1 = np.ceil((times + tau_p) / dt).astype(np.int64)
        keep = j0 < n
        np.add.at(steps, j0[keep], h[keep])
        np.add.at(steps, np.minimum(j1[keep], n), -h[keep])
    return np.cumsum(steps[:n])


def superpose_exp(times, charges, dt, tau_p, n):
    """Sum of causal exponential pulses ``(q/tau_p) exp(-(s)/tau_p)``, ``s >= 0``."""
    times = np.asarray(times, dtype=np.float64)
    charges = np.asarray(charges, dtype=np.float64)
    deposit = np.zeros(n)
    if times.size:
        j0 = np.ceil(times / dt).astype(np.int64)
        keep = j0 < n
        j0 = j0[keep]
        w = charges[keep] / tau_p * np.exp(-(j0 * dt - times[keep]) / tau_p)
        np.add.at(deposit, j0, w)
    r = math.exp(-dt / tau_p)
    return lfilter([1.0], [1.0, -r], deposit)


def superpose_gauss(times, charges, dt, tau_p, n):
    """Sum of centred gaussian pulses with standard deviation ``tau_p``, truncated at 8 sigma."""
    times = np.asarray(times, dtype=np.float64)
    charges = np.asarray(charges, dtype=np.float64)
    out = np.zeros(n)
    if not times.size:
        return out
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * tau_p)
    half = GAUSS_HALF_WIDTH * tau_p
    width = int(math.ceil(2.0 * half / dt)) + 2
    offsets = np.arange(width, dtype=np.int64)
    chunk = max(1, 2_000_000 // width)
    for start in range(0, times.size, chunk):
        t = times[start:start + chunk]
        q = charges[start:start + chunk]
        first = np.ceil((t - half) / dt).astype(np.int64)
        idx = first[:, None] + offsets[None, :]
        s = (idx * dt - t[:, None]) / tau_p
        valid = (idx >= 0) & (idx < n) & (np.abs(s) <= GAUSS_HALF_WIDTH)
        vals = q[:, None] * norm * np.exp(-0.5 * s * s)
        out += np.bincount(idx[valid], weights=vals[valid], minlength=n)
    return out


def lagged_block_sums(x, y, max_lag, edges):
    """Block-resolved lag sums ``S[b, m + L] = sum_{j in block b} x[j] * y[j + m]``.

    Pairs are assigned to the block that holds ``j``; pairs with ``j + m``
    outside the record are skipped. Returns ``(S, C)`` where ``C`` counts
    the contributing pairs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = x.shape[0]
    edges = np.asarray(edges, dtype=np.int64)
    nb = edges.shape[0] - 1
    nl = 2 * max_lag + 1
    sums = np.zeros((nb, nl))
    counts = np.zeros((nb, nl), dtype=np.int64)
    for li, m in enumerate(range(-max_lag, max_lag + 1)):
        for b in range(nb):
            j0 = max(edges[b], -m)
            j1 = min(edges[b + 1], n - m)
            if j1 > j0:
                sums[b, li] = np.dot(x[j0:j1], y[j0 + m:j1 + m])
                counts[b, li] = j1 - j0
    return sums, counts
