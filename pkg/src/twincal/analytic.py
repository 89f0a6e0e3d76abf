"""Closed-form predictions for twin-beam photocurrents.

Everything here is computed from configuration alone; the Monte-Carlo
pipeline is checked against these numbers.

Conventions: ``I`` is the mean photon flux per arm and ``J4`` the
normally ordered excess rate ``M * integral |v|^4``; for a flat band
``J4 / I = nbar``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy import constants

from .detector import DetectorConfig, pulse_autocorr
from .errors import BalanceError
from .source import SourceConfig, excess_flux, flux_by_quadrature, mean_flux

Regime = Literal["I", "II", "III"]

OVERLAP_THRESHOLD = 0.1   # <I> tau_p below this: pulses do not overlap
GAIN_THRESHOLD = 1e-3     # nbar above this: high gain


def photon_energy(wavelength: float) -> float:
    return constants.h * constants.c / wavelength


def photons_to_watts(rate: float, wavelength: float) -> float:
    """Optical power carried by ``rate`` photons/s at ``wavelength`` metres."""
    return rate * photon_energy(wavelength)


def watts_to_photons(power: float, wavelength: float) -> float:
    return power / photon_energy(wavelength)


def _balanced(det1: DetectorConfig, det2: DetectorConfig) -> bool:
    return math.isclose(det1.gamma, det2.gamma, rel_tol=1e-9, abs_tol=1e-15)


@dataclass
class Prediction:
    """Predicted means and correlation functions for one configuration.

    The correlation methods return fluctuation correlations, i.e. the
    ``<i><i>`` background already removed.
    """

    src: SourceConfig
    det1: DetectorConfig
    det2: DetectorConfig
    flux: float
    j4: float
    mean_i1: float
    mean_i2: float
    integral_cross: float
    ff_ratio: float
    balanced: bool
    notes: list = field(default_factory=list)

    def auto11(self, tau):
        d = self.det1
        return d.eta * d.charge.second_moment * pulse_autocorr(d.pulse, tau) * (self.flux + d.eta * self.j4)

    def auto22(self, tau):
        d = self.det2
        return d.eta * d.charge.second_moment * pulse_autocorr(d.pulse, tau) * (self.flux + d.eta * self.j4)

    def cross12(self, tau):
        d1, d2 = self.det1, self.det2
        return d1.eta * d2.eta * d1.charge.mean * d2.charge.mean * pulse_autocorr(d1.pulse, tau) * (self.flux + self.j4)

    def _require_twomode(self):
        if not self.balanced:
            raise BalanceError("balanced assumption violated: eta1*<q1> != eta2*<q2>")
        if self.det1.charge.excess_ratio != 1.0 or self.det2.charge.excess_ratio != 1.0:
            raise BalanceError("two-mode formula assumes <q^2> = <q>^2")

    def snl(self, tau):
        """Shot-noise level ``2 <q>^2 eta <I> F(tau)`` of the difference current."""
        self._require_twomode()
        d = self.det1
        return 2.0 * d.charge.mean ** 2 * d.eta * self.flux * pulse_autocorr(d.pulse, tau)

    def diff_var(self, tau):
        self._require_twomode()
        return self.snl(tau) * (1.0 - self.det1.eta)

    @property
    def counting_sq(self) -> float:
        """``Var(N1 - N2) / <N> = 2 (1 - eta)`` for equal efficiencies."""
        if not math.isclose(self.det1.eta, self.det2.eta, rel_tol=1e-9, abs_tol=1e-15):
            raise BalanceError("balanced assumption violated: eta1 != eta2")
        return 2.0 * (1.0 - self.det1.eta)

    @property
    def twomode_integral_ratio(self) -> float:
        """``integral <di- di-> / <i1> = 2 <q> (1 - eta)``."""
        self._require_twomode()
        return 2.0 * self.det1.charge.mean * (1.0 - self.det1.eta)

    def to_dict(self, lags=None) -> dict:
        out = {
            "flux": self.flux,
            "j4": self.j4,
            "mean_i1": self.mean_i1,
            "mean_i2": self.mean_i2,
            "integral_cross": self.integral_cross,
            "ff_ratio": self.ff_ratio,
            "balanced": self.balanced,
            "notes": list(self.notes),
            "source": asdict(self.src),
            "detector1": asdict(self.det1),
            "detector2": asdict(self.det2),
        }
        for name in ("counting_sq", "twomode_integral_ratio"):
            try:
                out[name] = getattr(self, name)
            except BalanceError as exc:
                out[name] = None
                out["notes"].append(str(exc))
        if lags is not None:
            lags = np.asarray(lags, dtype=float)
            out["lags"] = lags.tolist()
            out["auto11"] = np.atleast_1d(self.auto11(lags)).tolist()
            out["auto22"] = np.atleast_1d(self.auto22(lags)).tolist()
            out["cross12"] = np.atleast_1d(self.cross12(lags)).tolist()
        return out


def predict(src: SourceConfig, det1: DetectorConfig, det2: DetectorConfig, quadrature: bool = True) -> Prediction:
    """Means, correlation functions, squeezing and feedforward predictions."""
    flux = mean_flux(src)
    j4 = flux_by_quadrature(src, 2) if quadrature else excess_flux(src)
    q1, q2 = det1.charge, det2.charge
    ff = 1.0 - det1.eta * det2.eta * q1.mean ** 2 * q2.mean ** 2 / (q1.second_moment * q2.second_moment)
    notes = []
    if det1.pulse != det2.pulse:
        notes.append("pulse shapes differ; cross12 uses detector 1's F(tau)")
    return Prediction(
        src=src, det1=det1, det2=det2, flux=flux, j4=j4,
        mean_i1=det1.gamma * flux,
        mean_i2=det2.gamma * flux,
        integral_cross=det1.eta * det2.eta * q1.mean * q2.mean * (flux + j4),
        ff_ratio=ff,
        balanced=_balanced(det1, det2),
        notes=notes,
    )


def diff_integral(src: SourceConfig, det1: DetectorConfig, det2: DetectorConfig) -> float:
    """``integral <di- di-> dtau`` for arbitrary (also unbalanced) detectors.

    Charges of distinct events are independent, so the excess term carries
    ``<q>^2`` rather than ``<q^2>``.
    """
    flux, j4 = mean_flux(src), excess_flux(src)
    e1, e2 = det1.eta, det2.eta
    a1, a2 = det1.charge.mean, det2.charge.mean
    shot = e1 * det1.charge.second_moment + e2 * det2.charge.second_moment - 2 * e1 * e2 * a1 * a2
    return flux * shot + j4 * (e1 * a1 - e2 * a2) ** 2


def auto_point_process(src: SourceConfig, det: DetectorConfig, tau):
    """Autocorrelation of the simulated current with per-event charge noise.

    Differs from :meth:`Prediction.auto11` only in the excess term, which
    uses ``<q>^2``; the two coincide for deterministic charge or ``nbar -> 0``.
    """
    flux, j4 = mean_flux(src), excess_flux(src)
    c = det.charge
    return pulse_autocorr(det.pulse, tau) * (det.eta * c.second_moment * flux + det.eta ** 2 * c.mean ** 2 * j4)


def _pgf(src: SourceConfig, s: float) -> float:
    """Probability generating function of the per-cell pair number."""
    occ = src.mode_occupations()
    return float(np.prod((1.0 + occ * (1.0 - s)) ** (-src.spatial_modes)))


def counting_coincidence_expected(src: SourceConfig, eta1: float, eta2: float) -> float:
    """Expected ``Nc / N2`` with at-most-one-click-per-cell counting."""
    p2 = 1.0 - _pgf(src, 1.0 - eta2)
    if p2 <= 0:
        return float("nan")
    pc = 1.0 - _pgf(src, 1.0 - eta1) - _pgf(src, 1.0 - eta2) + _pgf(src, (1.0 - eta1) * (1.0 - eta2))
    return pc / p2


@dataclass
class RegimeInfo:
    regime: Regime
    I_tau_p: float
    nbar: float


def regime_classify(src: SourceConfig, det: DetectorConfig,
                    overlap_threshold: float = OVERLAP_THRESHOLD,
                    gain_threshold: float = GAIN_THRESHOLD) -> RegimeInfo:
    """I: pulses do not overlap; II: overlap at low gain; III: high gain.

    The overlap boundary itself counts as regime I.
    """
    occupancy = mean_flux(src) * det.pulse.tau_p
    nbar = src.nbar_peak
    if occupancy <= overlap_threshold * (1 + 1e-12):
        regime = "I"
    elif nbar <= gain_threshold:
        regime = "II"
    else:
        regime = "III"
    return RegimeInfo(regime, occupancy, nbar)


def counting_difference_ratio(src: SourceConfig, eta1: float, eta2: float, window_cells: int = 1) -> float:
    """Expected ``Var(N1 - N2) / <N>`` for binomially thinned twin counts.

    ``<N>`` is the mean of the two arms. Cells are independent, so the ratio
    does not depend on the window length; for ``eta1 = eta2 = eta`` it is
    ``2 (1 - eta)``.
    """
    occ = src.mode_occupations()
    mean_n = src.spatial_modes * float(occ.sum()) * window_cells
    var_n = src.spatial_modes * float(np.sum(occ + occ ** 2)) * window_cells
    if mean_n <= 0 or eta1 + eta2 <= 0:
        return float("nan")
    var = (eta1 * (1 - eta1) + eta2 * (1 - eta2)) * mean_n + (eta1 - eta2) ** 2 * var_n
    return var / (0.5 * (eta1 + eta2) * mean_n)


def feedforward_ratio_expected(src: SourceConfig, det1: DetectorConfig, det2: DetectorConfig) -> float:
    """Zero-lag ``1 - c12^2 / (v1 v2)`` of the simulated currents, excess term included.

    Reduces to :attr:`Prediction.ff_ratio` as ``nbar -> 0``.
    """
    flux, j4 = mean_flux(src), excess_flux(src)
    c = det1.eta * det2.eta * det1.charge.mean * det2.charge.mean * (flux + j4)
    v1 = auto_point_process(src, det1, 0.0) / pulse_autocorr(det1.pulse, 0.0)
    v2 = auto_point_process(src, det2, 0.0) / pulse_autocorr(det2.pulse, 0.0)
    if v1 <= 0 or v2 <= 0:
        return float("nan")
    return 1.0 - c * c / (v1 * v2)
