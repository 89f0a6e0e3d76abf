"""Correlation estimators for photocurrent records and count streams.

Uncertainties come from a blocked jackknife: the record is cut into
contiguous blocks, every statistic is recomputed with one block left out,
and the spread of those replicates gives the standard error. For a plain
mean this is the batch-means error; for ratios it propagates the covariance
between numerator and denominator without extra bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import _kernels
from .detector import CurrentTrace
from .errors import EstimatorError
from .source import CountFrame

Kind = Literal["auto11", "auto22", "cross12", "diff", "auto"]

DEFAULT_BLOCKS = 64


@dataclass
class Estimate:
    """A value with its jackknife standard error.

    ``loo`` holds the leave-one-block-out replicates; estimates computed on
    the same block partition can be combined with :func:`combine`.
    """

    value: float
    stderr: float
    loo: np.ndarray | None = field(default=None, repr=False)

    def __float__(self):
        return float(self.value)

    @classmethod
    def from_loo(cls, value: float, loo: np.ndarray) -> "Estimate":
        return cls(float(value), jackknife_stderr(loo), np.asarray(loo, dtype=float))


def jackknife_stderr(loo: np.ndarray) -> float:
    loo = np.asarray(loo, dtype=float)
    b = loo.shape[0]
    if b < 2:
        return float("nan")
    return float(math.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2)))


def combine(fn: Callable, *estimates: Estimate | float) -> Estimate:
    """Apply ``fn`` to values and to matching jackknife replicates."""
    values = [float(e.value) if isinstance(e, Estimate) else float(e) for e in estimates]
    loos = [e.loo for e in estimates if isinstance(e, Estimate) and e.loo is not None]
    value = fn(*values)
    if not loos:
        return Estimate(float(value), float("nan"))
    nb = loos[0].shape[0]
    if any(l.shape[0] != nb for l in loos):
        raise ValueError("estimates come from different block partitions")
    args = []
    for e, v in zip(estimates, values):
        if isinstance(e, Estimate) and e.loo is not None:
            args.append(e.loo)
        else:
            args.append(np.full(nb, v))
    return Estimate.from_loo(value, fn(*args))


def block_edges(n: int, n_blocks: int) -> np.ndarray:
    n_blocks = max(1, min(int(n_blocks), n))
    return (np.arange(n_blocks + 1, dtype=np.int64) * n) // n_blocks


def choose_blocks(n_samples: int, min_block_len: int, lo: int = 32, hi: int = 256) -> int:
    """Number of blocks so that each spans at least ``min_block_len`` samples."""
    nb = n_samples // max(1, int(min_block_len))
    return int(min(hi, max(lo, nb)))


def mean_current(trace: CurrentTrace) -> float:
    if len(trace) == 0:
        raise ValueError("empty trace")
    return float(np.mean(trace.samples))


def blocked_mean(trace: CurrentTrace, n_blocks: int = DEFAULT_BLOCKS) -> Estimate:
    """Mean current with blocks laid out as in :func:`cross_correlation`."""
    x = np.asarray(trace.samples, dtype=float)
    if x.size == 0:
        raise ValueError("empty trace")
    edges = block_edges(x.size, n_blocks)
    sums = np.add.reduceat(x, edges[:-1])
    counts = np.diff(edges)
    total, n = sums.sum(), counts.sum()
    return Estimate.from_loo(total / n, (total - sums) / (n - counts))


@dataclass
class CorrelationFunction:
    """Sample covariance ``<da(t) db(t + tau)>`` on the lag grid ``m*dt``."""

    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    kind: str
    dt: float
    block_sums: np.ndarray = field(repr=False)
    block_counts: np.ndarray = field(repr=False)
    centered: bool = True

    @property
    def max_lag(self) -> int:
        return (self.lags.size - 1) // 2

    @property
    def n_blocks(self) -> int:
        return self.block_sums.shape[0]

    def loo(self) -> np.ndarray:
        s = self.block_sums.sum(axis=0)
        c = self.block_counts.sum(axis=0)
        return (s[None, :] - self.block_sums) / (c[None, :] - self.block_counts)

    def at_lag(self, tau: float = 0.0) -> Estimate:
        i = int(round(tau / self.dt)) + self.max_lag
        if not 0 <= i < self.lags.size:
            raise ValueError("lag outside the computed range")
        return Estimate.from_loo(self.values[i], self.loo()[:, i])

    def window_sum(self, window: float) -> Estimate:
        """Plain sum of values over ``|tau| <= window`` (no dt factor)."""
        sel = np.abs(self.lags) <= window * (1 + 1e-9) + 1e-300
        return Estimate.from_loo(self.values[sel].sum(), self.loo()[:, sel].sum(axis=1))

    def to_csv(self, path) -> None:
        data = np.column_stack([self.lags, self.values, self.stderr])
        np.savetxt(path, data, delimiter=",", header="lag,value,stderr", comments="", fmt="%.17g")


def _check_aligned(a: CurrentTrace, b: CurrentTrace) -> None:
    if not math.isclose(a.dt, b.dt, rel_tol=1e-12):
        raise ValueError("traces have different sampling periods")
    if len(a) != len(b) or not math.isclose(a.t0, b.t0, rel_tol=0, abs_tol=0.5 * a.dt):
        raise ValueError("traces are not aligned")


def _lag_samples(max_lag: float, dt: float, n: int) -> int:
    m = int(round(max_lag / dt))
    if m < 0:
        raise ValueError("max_lag must be >= 0")
    if m > 0.1 * n:
        raise ValueError("max_lag exceeds 10% of the record length")
    return m


def _correlate(x: np.ndarray, y: np.ndarray, dt: float, max_lag: float, n_blocks: int,
               kind: str, center: bool) -> CorrelationFunction:
    n = x.size
    if n == 0:
        raise ValueError("empty trace")
    m = _lag_samples(max_lag, dt, n)
    if center:
        x = x - x.mean()
        y = y - y.mean()
    edges = block_edges(n, n_blocks)
    sums, counts = _kernels.lagged_block_sums(np.ascontiguousarray(x), np.ascontiguousarray(y), m, edges)
    sums = np.asarray(sums)
    counts = np.asarray(counts)
    values = sums.sum(axis=0) / counts.sum(axis=0)
    lags = np.arange(-m, m + 1) * dt
    cf = CorrelationFunction(lags, values, np.zeros_like(values), kind, dt, sums, counts, center)
    loo = cf.loo()
    nb = loo.shape[0]
    cf.stderr = np.sqrt((nb - 1) / nb * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return cf


def cross_correlation(a: CurrentTrace, b: CurrentTrace, max_lag: float, n_blocks: int = DEFAULT_BLOCKS,
                      kind: str = "cross12", center: bool = True) -> CorrelationFunction:
    """``c(m) = 1/(N-|m|) sum_j (a_j - mean a)(b_{j+m} - mean b)``.

    With ``center=False`` the raw product moment ``<a(t) b(t+tau)>`` is
    returned instead.
    """
    _check_aligned(a, b)
    return _correlate(np.asarray(a.samples, float), np.asarray(b.samples, float), a.dt,
                      max_lag, n_blocks, kind, center)


def autocorrelation(a: CurrentTrace, max_lag: float, n_blocks: int = DEFAULT_BLOCKS,
                    kind: str = "auto", center: bool = True) -> CorrelationFunction:
    x = np.asarray(a.samples, float)
    return _correlate(x, x, a.dt, max_lag, n_blocks, kind, center)


def difference_variance_fn(a: CurrentTrace, b: CurrentTrace, max_lag: float,
                           n_blocks: int = DEFAULT_BLOCKS) -> CorrelationFunction:
    """Autocorrelation of the difference current ``a - b``."""
    _check_aligned(a, b)
    d = np.asarray(a.samples, float) - np.asarray(b.samples, float)
    return _correlate(d, d, a.dt, max_lag, n_blocks, "diff", True)


def integrate_correlation(c: CorrelationFunction, window: float) -> Estimate:
    """Trapezoidal integral of ``c`` over ``[-window, window]``."""
    k = int(round(window / c.dt))
    if k > c.max_lag or window < 0:
        raise ValueError("integration window exceeds the available lags")
    sel = slice(c.max_lag - k, c.max_lag + k + 1)
    w = np.full(2 * k + 1, c.dt)
    if k > 0:
        w[0] = w[-1] = 0.5 * c.dt
    value = float(np.dot(c.values[sel], w))
    loo = c.loo()[:, sel] @ w
    return Estimate.from_loo(value, loo)


@dataclass
class CountingStats:
    """Photon-counting summary of a thinned record.

    ``n1``, ``n2``, ``nc`` count cells with at least one detection in arm 1,
    arm 2, and both. ``n_minus_var`` is the variance of the per-window
    photon-number difference and ``n_mean`` the per-window mean photon
    number averaged over the two arms.
    """

    n1: int
    n2: int
    nc: int
    n_minus_var: float
    n_mean: float
    n_windows: int
    window_cells: int = 1
    blocks: dict = field(default_factory=dict, repr=False)

    def difference_ratio(self) -> Estimate:
        """``Var(N1 - N2) / <N>`` with its jackknife error."""
        b = self.blocks
        W = b["count"].sum()
        S1, S2, Sm = b["s1"].sum(), b["s2"].sum(), b["smean"].sum()
        if Sm <= 0:
            raise EstimatorError("no counts recorded")

        def ratio(s1, s2, sm, w):
            mu = s1 / w
            return (s2 / w - mu * mu) / (sm / w)

        value = ratio(S1, S2, Sm, W)
        loo = ratio(S1 - b["s1"], S2 - b["s2"], Sm - b["smean"], W - b["count"])
        return Estimate.from_loo(value, loo)


def counting_stats(frames: CountFrame, window_cells: int = 1, n_blocks: int = DEFAULT_BLOCKS) -> CountingStats:
    """Singles, same-cell coincidences and windowed difference-count moments."""
    if frames.detected_1 is None or frames.detected_2 is None:
        raise ValueError("frames have not been thinned")
    if window_cells < 1:
        raise ValueError("window_cells must be >= 1")
    d1 = np.asarray(frames.detected_1)
    d2 = np.asarray(frames.detected_2)
    n1 = int(np.count_nonzero(d1))
    n2 = int(np.count_nonzero(d2))
    nc = int(np.count_nonzero((d1 > 0) & (d2 > 0)))

    n_windows = frames.n_cells // window_cells
    if n_windows < 2:
        raise ValueError("need at least two counting windows")
    keep = frames.cell_index < n_windows * window_cells
    win = frames.cell_index[keep] // window_cells
    wins, inv = np.unique(win, return_inverse=True)
    s1 = np.bincount(inv, weights=d1[keep], minlength=wins.size)
    s2 = np.bincount(inv, weights=d2[keep], minlength=wins.size)
    minus = s1 - s2
    mean = 0.5 * (s1 + s2)

    nb = max(2, min(int(n_blocks), n_windows))
    blk_edges = block_edges(n_windows, nb)
    blk = np.searchsorted(blk_edges, wins, side="right") - 1
    blocks = {
        "count": np.diff(blk_edges).astype(float),
        "s1": np.bincount(blk, weights=minus, minlength=nb),
        "s2": np.bincount(blk, weights=minus * minus, minlength=nb),
        "smean": np.bincount(blk, weights=mean, minlength=nb),
    }
    mu = minus.sum() / n_windows
    var = float((minus * minus).sum() / n_windows - mu * mu)
    return CountingStats(n1, n2, nc, var, float(mean.sum() / n_windows), int(n_windows),
                         int(window_cells), blocks)


@dataclass
class FeedforwardResult:
    residual: Estimate
    ratio: Estimate
    var1: Estimate
    var2: Estimate
    cov12: Estimate


def feedforward_residual(a: CurrentTrace, b: CurrentTrace, n_blocks: int = DEFAULT_BLOCKS) -> FeedforwardResult:
    """Noise left on ``a`` after subtracting its best linear prediction from ``b``.

    ``residual = var(a) - cov(a, b)^2 / var(b)`` at zero lag; ``ratio`` is
    ``residual / var(a)``.
    """
    _check_aligned(a, b)
    v1 = autocorrelation(a, 0.0, n_blocks, "auto11").at_lag(0.0)
    v2 = autocorrelation(b, 0.0, n_blocks, "auto22").at_lag(0.0)
    c12 = cross_correlation(a, b, 0.0, n_blocks).at_lag(0.0)
    if not v2.value > 0:
        raise EstimatorError("second trace has zero variance")
    residual = combine(lambda x, y, c: x - c * c / y, v1, v2, c12)
    ratio = combine(lambda x, y, c: 1.0 - c * c / (x * y), v1, v2, c12)
    return FeedforwardResult(residual, ratio, v1, v2, c12)
