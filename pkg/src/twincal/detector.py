"""Detector model: efficiency loss, per-event charge and the analog current.

A detector is an ideal photon counter behind a beam splitter of transmission
``eta``. Each detection deposits a random charge ``q`` through a unit-area
pulse ``f``; the output current is the superposition of all pulses, sampled
every ``dt``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import erfc

from . import _kernels
from .errors import ConfigError
from .source import CountFrame

ChargeKind = Literal["deterministic", "gamma"]
PulseKind = Literal["rect", "exp_decay", "gaussian"]

# maximum sampling period in units of tau_p
RESOLUTION = 20


@dataclass(frozen=True)
class ChargeModel:
    """Charge released per detection event.

    ``excess_ratio`` is ``<q^2>/<q>^2``; ``deterministic`` forces it to 1.
    The gamma family is fixed by its first two moments.
    """

    kind: ChargeKind = "deterministic"
    mean: float = 1.0
    excess_ratio: float = 1.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "gamma"):
            raise ConfigError("charge.kind", "must be 'deterministic' or 'gamma'")
        if not (math.isfinite(self.mean) and self.mean > 0):
            raise ConfigError("charge.mean", "must be > 0")
        if not (math.isfinite(self.excess_ratio) and self.excess_ratio >= 1.0):
            raise ConfigError("charge.excess_ratio", "must be >= 1")
        if self.kind == "deterministic" and self.excess_ratio != 1.0:
            raise ConfigError("charge.excess_ratio", "deterministic charge has excess_ratio 1")

    @property
    def second_moment(self) -> float:
        return self.excess_ratio * self.mean ** 2

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "deterministic" or self.excess_ratio == 1.0:
            return np.full(size, float(self.mean))
        shape = 1.0 / (self.excess_ratio - 1.0)
        return rng.gamma(shape, self.mean / shape, size=size)


@dataclass(frozen=True)
class PulseShape:
    kind: PulseKind = "rect"
    tau_p: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("rect", "exp_decay", "gaussian"):
            raise ConfigError("pulse.kind", "must be one of rect, exp_decay, gaussian")
        if not (math.isfinite(self.tau_p) and self.tau_p > 0):
            raise ConfigError("pulse.tau_p", "must be > 0")

    def f(self, t):
        """Unit-area single-event response."""
        t = np.asarray(t, dtype=float)
        tp = self.tau_p
        if self.kind == "rect":
            out = np.where((t >= 0) & (t < tp), 1.0 / tp, 0.0)
        elif self.kind == "exp_decay":
            out = np.where(t >= 0, np.exp(-np.clip(t, 0, None) / tp) / tp, 0.0)
        else:
            out = np.exp(-0.5 * (t / tp) ** 2) / (math.sqrt(2 * math.pi) * tp)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class DetectorConfig:
    eta: float
    charge: ChargeModel = ChargeModel()
    pulse: PulseShape = PulseShape()
    dt: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigError("detector.eta", "must lie in [0, 1]")
        if self.dt is None:
            object.__setattr__(self, "dt", self.pulse.tau_p / RESOLUTION)
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("detector.dt", "must be > 0")
        if self.dt > self.pulse.tau_p / RESOLUTION * (1 + 1e-12):
            raise ConfigError("detector.dt", f"must be <= tau_p/{RESOLUTION}")

    @property
    def gamma(self) -> float:
        """Analog quantum efficiency: mean charge per incident photon."""
        return self.eta * self.charge.mean


@dataclass
class CurrentTrace:
    """Photocurrent sampled at ``t0 + j*dt`` (charge units per second)."""

    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __len__(self):
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def trim(self, guard: float) -> "CurrentTrace":
        """Drop ``guard`` seconds at both ends."""
        k = int(math.ceil(guard / self.dt - 1e-9))
        if 2 * k >= self.samples.size:
            raise ValueError("guard band removes the whole trace")
        return CurrentTrace(self.samples[k:self.samples.size - k], self.dt, self.t0 + k * self.dt)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.samples])
        np.savetxt(path, data, delimiter=",", header="time,current", comments="", fmt="%.17g")

    def to_npz(self, path) -> None:
        np.savez(path, samples=self.samples, dt=self.dt, t0=self.t0)

    @classmethod
    def from_npz(cls, path) -> "CurrentTrace":
        with np.load(Path(path)) as z:
            return cls(z["samples"], float(z["dt"]), float(z["t0"]))


def thin_counts(frames: CountFrame, eta1: float, eta2: float, rng: np.random.Generator) -> CountFrame:
    """Binomial loss on each arm, independently per cell and per arm."""
    for name, eta in (("eta1", eta1), ("eta2", eta2)):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    d1 = rng.binomial(frames.pairs, eta1)
    d2 = rng.binomial(frames.pairs, eta2)
    return CountFrame(frames.n_cells, frames.tau_coh, frames.cell_index, frames.pairs,
                      frames.phase, d1, d2, dict(frames.meta))


def sample_event_times(frames: CountFrame, arm: int, tau_coh: float | None = None,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Detection times of one arm, sorted.

    Without ``rng`` every photon of a cell shares the cell's emission time
    ``(k + phase) * tau_coh``, so twin photons land at the same instant. With
    ``rng`` each photon gets its own uniform time inside its cell.
    """
    if arm not in (1, 2):
        raise ValueError("arm must be 1 or 2")
    det = frames.detected_1 if arm == 1 else frames.detected_2
    if det is None:
        raise ValueError("frames have not been thinned")
    tau = frames.tau_coh if tau_coh is None else tau_coh
    cells = np.repeat(frames.cell_index, det)
    if rng is None:
        offset = np.repeat(frames.phase, det)
    else:
        offset = rng.random(cells.size)
    times = (cells + offset) * tau
    if rng is not None:
        times.sort()
    return times


def synthesize_current(times, cfg: DetectorConfig, duration: float, rng: np.random.Generator) -> CurrentTrace:
    """``i(j*dt) = sum_n q_n f(j*dt - t_n)`` over a record of length ``duration``."""
    times = np.ascontiguousarray(times, dtype=np.float64)
    if times.size and not np.all(np.isfinite(times)):
        raise ValueError("event times must be finite")
    if cfg.dt > cfg.pulse.tau_p / RESOLUTION * (1 + 1e-12):
        raise ValueError(f"dt must be <= tau_p/{RESOLUTION}")
    n = int(round(duration / cfg.dt))
    charges = cfg.charge.sample(times.size, rng)
    kind, tp = cfg.pulse.kind, cfg.pulse.tau_p
    if kind == "rect":
        samples = _kernels.superpose_rect(times, charges, cfg.dt, tp, n)
    elif kind == "exp_decay":
        samples = _kernels.superpose_exp(times, charges, cfg.dt, tp, n)
    else:
        samples = _kernels.superpose_gauss(times, charges, cfg.dt, tp, n)
    return CurrentTrace(np.asarray(samples), cfg.dt, 0.0)


def pulse_autocorr(pulse: PulseShape, tau):
    """``F(tau) = integral f(t) f(t + tau) dt`` in closed form; unit area."""
    tau = np.abs(np.asarray(tau, dtype=float))
    tp = pulse.tau_p
    if pulse.kind == "rect":
        out = np.clip(1.0 - tau / tp, 0.0, None) / tp
    elif pulse.kind == "exp_decay":
        out = np.exp(-tau / tp) / (2.0 * tp)
    else:
        out = np.exp(-tau ** 2 / (4.0 * tp ** 2)) / (2.0 * math.sqrt(math.pi) * tp)
    return out if out.ndim else float(out)


def autocorr_tail(pulse: PulseShape, window: float) -> float:
    """Mass of ``F`` outside ``[-window, window]``."""
    tp = pulse.tau_p
    if pulse.kind == "rect":
        return max(0.0, 1.0 - window / tp) ** 2
    if pulse.kind == "exp_decay":
        return math.exp(-window / tp)
    return float(erfc(window / (2.0 * tp)))


def integration_window(pulse: PulseShape, tol: float = 1e-3, minimum: float = 5.0) -> float:
    """Smallest half-window (at least ``minimum * tau_p``) whose ``F`` tail is below ``tol``."""
    tp = pulse.tau_p
    w = minimum * tp
    if pulse.kind == "exp_decay":
        w = max(w, tp * math.log(1.0 / tol) * (1 + 1e-9))
    elif pulse.kind == "gaussian":
        while autocorr_tail(pulse, w) > tol:
            w += 0.5 * tp
    return w


def timescale_problem(tau_p: float, tau_coh: float) -> str | None:
    if tau_p < 100.0 * tau_coh * (1 - 1e-9):
        return f"tau_p={tau_p:g} s is less than 100*tau_coh={100 * tau_coh:g} s"
    return None


def check_timescales(tau_p: float, tau_coh: float) -> str | None:
    """Warn when the pulse is not much longer than the coherence time."""
    msg = timescale_problem(tau_p, tau_coh)
    if msg:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return msg
