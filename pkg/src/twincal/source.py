"""Twin-beam photon source.

Time is cut into coherence cells of width ``tau_coh``. Every cell holds one
temporal mode per spectral bin and ``spatial_modes`` spatial mode pairs; each
mode is thermal (Bose-Einstein) with the spectral occupation at its
frequency, and signal and idler carry exactly the same photon number.

Cells are stored sparsely: a :class:`CountFrame` lists only the cells that
received at least one pair, which keeps records of ``1e10`` cells cheap when
the occupation is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigError

Profile = Literal["flat", "gaussian"]

# Gaussian profiles are sampled on bins of width Omega_0 out to this many widths.
GAUSS_BINS = 8


@dataclass(frozen=True)
class SourceConfig:
    """Physical parameters of the down-conversion source.

    ``nbar_peak`` is the mean photon number per mode at band centre,
    ``tau_coh`` the coherence time (the bandwidth is ``1/tau_coh``),
    ``spatial_modes`` the number of mode pairs seen by each detector and
    ``duration`` the record length in seconds.
    """

    nbar_peak: float
    tau_coh: float
    spatial_modes: int = 1
    spectral_profile: Profile = "flat"
    duration: float = 1e-6
    seed: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.nbar_peak) and self.nbar_peak >= 0):
            raise ConfigError("source.nbar_peak", "must be finite and >= 0")
        if not (math.isfinite(self.tau_coh) and self.tau_coh > 0):
            raise ConfigError("source.tau_coh", "must be > 0")
        if int(self.spatial_modes) != self.spatial_modes or self.spatial_modes < 1:
            raise ConfigError("source.spatial_modes", "must be an integer >= 1")
        if self.spectral_profile not in ("flat", "gaussian"):
            raise ConfigError("source.spectral_profile", "must be 'flat' or 'gaussian'")
        if not (math.isfinite(self.duration) and self.duration >= self.tau_coh):
            raise ConfigError("source.duration", "must cover at least one coherence cell")

    @property
    def bandwidth(self) -> float:
        """Spectral width Omega_0 in rad/s."""
        return 1.0 / self.tau_coh

    @property
    def n_cells(self) -> int:
        return max(1, int(round(self.duration / self.tau_coh)))

    def mode_occupations(self) -> np.ndarray:
        """Mean photon number of each spectral bin that shares a cell."""
        if self.spectral_profile == "flat":
            return np.array([self.nbar_peak])
        j = np.arange(-GAUSS_BINS, GAUSS_BINS + 1)
        return self.nbar_peak * np.exp(-0.5 * j.astype(float) ** 2)


@dataclass
class CountFrame:
    """Sparse per-cell counts for a record of ``n_cells`` coherence cells.

    Arrays are aligned and sorted by ``cell_index``; cells that are not listed
    hold zero pairs. ``phase`` in ``[0, 1)`` places the cell's emission time
    inside the cell. ``detected_1``/``detected_2`` are ``None`` until
    :func:`twincal.detector.thin_counts` fills them.
    """

    n_cells: int
    tau_coh: float
    cell_index: np.ndarray
    pairs: np.ndarray
    phase: np.ndarray
    detected_1: np.ndarray | None = None
    detected_2: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.cell_index.size)

    @property
    def duration(self) -> float:
        return self.n_cells * self.tau_coh

    def dense(self, name: str = "pairs") -> np.ndarray:
        """Expand one count column to a full ``n_cells`` array (small records only)."""
        out = np.zeros(self.n_cells, dtype=np.int64)
        col = getattr(self, name)
        if col is None:
            raise ValueError(f"{name} has not been filled")
        out[self.cell_index] = col
        return out


def _sparse_cells(p_nonzero: float, n_cells: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of cells hit by a Bernoulli(p) process, via geometric gaps."""
    if p_nonzero <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p_nonzero >= 1.0:
        return np.arange(n_cells, dtype=np.int64)
    expected = n_cells * p_nonzero
    chunks = []
    pos = -1
    while True:
        size = int(expected * 1.05 + 6.0 * math.sqrt(expected) + 64)
        gaps = rng.geometric(p_nonzero, size=size)
        idx = pos + np.cumsum(gaps, dtype=np.int64)
        if idx[-1] >= n_cells:
            chunks.append(idx[idx < n_cells])
            break
        chunks.append(idx)
        pos = int(idx[-1])
        expected = (n_cells - pos) * p_nonzero
    return np.concatenate(chunks)


def _truncated_multimode(nbar: float, modes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sum of ``modes`` thermal draws with mean ``nbar``, conditioned on being >= 1.

    The first occupied mode index is drawn from its truncated geometric law,
    the later modes are free; each occupied mode holds ``1 + thermal`` photons
    by memorylessness.
    """
    if size == 0:
        return np.empty(0, dtype=np.int64)
    s = nbar / (1.0 + nbar)  # P(mode occupied)
    if modes == 1:
        occupied = np.ones(size, dtype=np.int64)
    else:
        log_empty = math.log1p(-s)
        p_any = -math.expm1(modes * log_empty)
        u = rng.random(size)
        first = 1 + np.floor(np.log1p(-u * p_any) / log_empty).astype(np.int64)
        first = np.clip(first, 1, modes)
        occupied = 1 + rng.binomial(modes - first, s)
    extra = rng.negative_binomial(occupied, 1.0 / (1.0 + nbar))
    return occupied + extra


def sample_pair_counts(cfg: SourceConfig, n_cells: int | None, rng: np.random.Generator) -> CountFrame:
    """Draw the pair number of every coherence cell.

    Each cell's count is negative binomial with shape ``spatial_modes`` per
    spectral bin; bins and cells are independent.
    """
    n_cells = cfg.n_cells if n_cells is None else int(n_cells)
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    m = cfg.spatial_modes
    idx_parts, cnt_parts = [], []
    for nbar in cfg.mode_occupations():
        if nbar <= 0.0:
            continue
        p_nonzero = -math.expm1(-m * math.log1p(nbar))
        cells = _sparse_cells(p_nonzero, n_cells, rng)
        idx_parts.append(cells)
        cnt_parts.append(_truncated_multimode(float(nbar), m, cells.size, rng))
    if not idx_parts:
        cells = np.empty(0, dtype=np.int64)
        pairs = np.empty(0, dtype=np.int64)
    elif len(idx_parts) == 1:
        cells, pairs = idx_parts[0], cnt_parts[0]
    else:
        all_idx = np.concatenate(idx_parts)
        cells, inverse = np.unique(all_idx, return_inverse=True)
        pairs = np.bincount(inverse, weights=np.concatenate(cnt_parts)).astype(np.int64)
    phase = rng.random(cells.size)
    return CountFrame(n_cells, cfg.tau_coh, cells, pairs, phase, meta={"kind": "twin"})


def sample_coherent_counts(mean_per_cell: float, n_cells: int, rng: np.random.Generator,
                           tau_coh: float = 1.0) -> CountFrame:
    """Independent Poisson counts per cell: the shot-noise-limited reference beam.

    The total is Poisson and scattered uniformly over the cells, which is the
    same law as independent per-cell Poisson draws.
    """
    if not mean_per_cell >= 0:
        raise ValueError("mean_per_cell must be >= 0")
    total = rng.poisson(mean_per_cell * n_cells)
    hits = np.sort(rng.integers(0, n_cells, size=total))
    cells, counts = np.unique(hits, return_counts=True)
    phase = rng.random(cells.size)
    return CountFrame(n_cells, tau_coh, cells.astype(np.int64), counts.astype(np.int64), phase,
                      meta={"kind": "coherent"})


def spectral_v2(cfg: SourceConfig, omega):
    """Spectral occupation ``|v(Omega)|^2``; ``|u|^2`` is ``1 + |v|^2``."""
    omega = np.asarray(omega, dtype=float)
    w0 = cfg.bandwidth
    if cfg.spectral_profile == "flat":
        out = np.where(np.abs(omega) <= 0.5 * w0, cfg.nbar_peak, 0.0)
    else:
        out = cfg.nbar_peak * np.exp(-(omega ** 2) / (2.0 * w0 ** 2))
    return out if out.ndim else float(out)


def spectral_u2(cfg: SourceConfig, omega):
    return 1.0 + spectral_v2(cfg, omega)


def _band(cfg: SourceConfig):
    """Integration range in units of Omega_0."""
    if cfg.spectral_profile == "flat":
        return -0.5, 0.5
    return -np.inf, np.inf


def mean_flux(cfg: SourceConfig) -> float:
    """Mean photon flux per arm, ``M * integral |v|^2 dOmega`` in photons/s.

    The flat profile gives ``M * nbar_peak / tau_coh``.
    """
    if cfg.spectral_profile == "flat":
        return cfg.spatial_modes * cfg.nbar_peak / cfg.tau_coh
    return cfg.spatial_modes * cfg.nbar_peak * cfg.bandwidth * math.sqrt(2.0 * math.pi)


def excess_flux(cfg: SourceConfig) -> float:
    """``J4 = M * integral |v|^4 dOmega``: the normally ordered excess-noise rate."""
    if cfg.spectral_profile == "flat":
        return cfg.spatial_modes * cfg.nbar_peak ** 2 / cfg.tau_coh
    return cfg.spatial_modes * cfg.nbar_peak ** 2 * cfg.bandwidth * math.sqrt(math.pi)


def flux_by_quadrature(cfg: SourceConfig, power: int = 1) -> float:
    """Adaptive quadrature of ``M * integral |v|^(2*power) dOmega``; an independent check."""
    from scipy.integrate import quad

    lo, hi = _band(cfg)
    w0 = cfg.bandwidth
    val, _ = quad(lambda x: spectral_v2(cfg, x * w0) ** power, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
    return cfg.spatial_modes * val * w0
