"""Quantum-efficiency estimators.

Each estimator turns correlation or counting statistics into a
:class:`CalibrationReport`. The analog estimators return the analog
efficiency ``Gamma = eta * <q>`` (charge per incident photon); ``eta_hat``
is filled in when the mean charge is supplied. Out-of-range values are
flagged, never clamped.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .corr import CorrelationFunction, CountingStats, Estimate, combine
from .errors import EstimatorError

EstimatorId = Literal[
    "counting_coincidence", "klyshko_I", "integrated_I", "klyshko_II",
    "integrated_II", "twomode_analog", "twomode_counting", "feedforward",
]
ESTIMATORS = (
    "counting_coincidence", "klyshko_I", "integrated_I", "klyshko_II",
    "integrated_II", "twomode_analog", "twomode_counting", "feedforward",
)
# which efficiency each estimator recovers
TARGETS = {
    "counting_coincidence": "eta1",
    "klyshko_I": "eta2",
    "integrated_I": "eta2",
    "klyshko_II": "eta2",
    "integrated_II": "eta2",
    "twomode_analog": "eta_balanced",
    "twomode_counting": "eta_balanced",
    "feedforward": "eta_geometric",
}
# regimes where each estimator's derivation holds
VALID_REGIMES = {
    "counting_coincidence": ("I",),
    "klyshko_I": ("I",),
    "integrated_I": ("I",),
    "klyshko_II": ("I", "II"),
    "integrated_II": ("I", "II"),
    "twomode_analog": ("I", "II", "III"),
    "twomode_counting": ("I", "II", "III"),
    "feedforward": ("I", "II"),
}


@dataclass
class CalibrationReport:
    estimator: str
    target: str
    gamma_hat: float | None
    gamma_stderr: float | None
    eta_hat: float | None
    eta_stderr: float | None
    regime: str | None = None
    assumptions: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    inputs_digest: str = ""

    @property
    def stderr(self) -> float | None:
        return self.eta_stderr if self.eta_stderr is not None else self.gamma_stderr

    def to_dict(self) -> dict:
        return asdict(self)


def _digest(**inputs) -> str:
    def norm(v):
        if isinstance(v, Estimate):
            return [repr(float(v.value)), repr(float(v.stderr))]
        if isinstance(v, float):
            return repr(v)
        return v
    blob = json.dumps({k: norm(v) for k, v in sorted(inputs.items())}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _as_estimate(x) -> Estimate:
    return x if isinstance(x, Estimate) else Estimate(float(x), 0.0)


def _finish(report: CalibrationReport) -> CalibrationReport:
    eta, se = report.eta_hat, report.eta_stderr
    if eta is not None:
        slack = 5.0 * (se if se is not None and math.isfinite(se) else 0.0)
        if eta < 0.0 - slack or eta > 1.0 + slack:
            report.flags.append("eta_hat outside [0, 1] beyond 5 stderr")
    return report


def _analog_report(name: str, gamma: Estimate, q_mean: float | None, regime: str | None,
                   assumptions: list, digest: str, diagnostics: dict | None = None) -> CalibrationReport:
    eta = eta_se = None
    if q_mean is not None:
        eta = gamma.value / q_mean
        eta_se = gamma.stderr / q_mean
    return _finish(CalibrationReport(name, TARGETS[name], gamma.value, gamma.stderr, eta, eta_se,
                                     regime, assumptions, [], diagnostics or {}, digest))


def estimate_counting(stats: CountingStats, regime: str | None = "I") -> CalibrationReport:
    """``eta1 = Nc / N2`` with a binomial standard error."""
    if stats.n2 <= 0:
        raise EstimatorError("no counts on detector 2")
    eta = stats.nc / stats.n2
    se = math.sqrt(max(eta * (1.0 - eta), 0.0) / stats.n2)
    return _finish(CalibrationReport(
        "counting_coincidence", TARGETS["counting_coincidence"], None, None, eta, se, regime,
        ["at most one pair per cell", "no dark counts or dead time"], [],
        {"n1": stats.n1, "n2": stats.n2, "nc": stats.nc},
        _digest(n1=stats.n1, n2=stats.n2, nc=stats.nc)))


def _klyshko(name: str, cross: CorrelationFunction, auto: CorrelationFunction, q1_mean: float,
             q1_excess: float, regime: str | None, peak_window: float | None,
             q2_mean: float | None, extra: list) -> CalibrationReport:
    if cross.dt != auto.dt:
        raise ValueError("correlation functions are on different lag grids")
    if peak_window is None:
        num, den = cross.at_lag(0.0), auto.at_lag(0.0)
    else:
        num, den = cross.window_sum(peak_window), auto.window_sum(peak_window)
    if not den.value > 0:
        raise EstimatorError("autocorrelation at zero lag is not positive")
    gamma = combine(lambda c, a: q1_excess * q1_mean * c / a, num, den)
    assumptions = [f"detector-1 excess ratio {q1_excess:g}", "F(tau) cancels pointwise"] + extra
    digest = _digest(name=name, num=num, den=den, q1_mean=q1_mean, q1_excess=q1_excess)
    return _analog_report(name, gamma, q2_mean, regime, assumptions, digest,
                          {"ratio_at": "zero lag" if peak_window is None else f"|tau|<={peak_window:g}"})


def estimate_klyshko_I(cross: CorrelationFunction, auto: CorrelationFunction, q1_mean: float,
                       q1_excess: float, q2_mean: float | None = None, peak_window: float | None = None,
                       regime: str | None = "I") -> CalibrationReport:
    """``Gamma2 = (<q1^2>/<q1>^2) <q1> <i1 i2>(tau) / <i1 i1>(tau)``, at ``tau = 0`` by default."""
    return _klyshko("klyshko_I", cross, auto, q1_mean, q1_excess, regime, peak_window, q2_mean,
                    ["non-overlapping pulses"])


def estimate_klyshko_II(cross_fluct: CorrelationFunction, auto_fluct: CorrelationFunction, q1_mean: float,
                        q1_excess: float, q2_mean: float | None = None, peak_window: float | None = None,
                        regime: str | None = "II") -> CalibrationReport:
    """Klyshko ratio built from fluctuation correlations."""
    if not (cross_fluct.centered and auto_fluct.centered):
        raise ValueError("klyshko_II needs mean-subtracted correlations")
    return _klyshko("klyshko_II", cross_fluct, auto_fluct, q1_mean, q1_excess, regime, peak_window,
                    q2_mean, ["neglects J4 term (nbar << 1)"])


def _integrated(name: str, integral, mean_i1, q2_mean, regime, assumptions,
                background: float | None) -> CalibrationReport:
    integral = _as_estimate(integral)
    mean = _as_estimate(mean_i1)
    if not mean.value > 0:
        raise EstimatorError("mean current of detector 1 must be positive")
    if integral.loo is not None and mean.loo is not None:
        gamma = combine(lambda x, y: x / y, integral, mean)
    else:
        x, y = integral.value, mean.value
        gamma = Estimate(x / y, math.hypot(integral.stderr / y, x * mean.stderr / y ** 2))
    diagnostics = {}
    if background is not None and integral.value:
        diagnostics["background_to_signal"] = background / integral.value
    digest = _digest(name=name, integral=integral, mean=mean)
    return _analog_report(name, gamma, q2_mean, regime, assumptions, digest, diagnostics)


def estimate_integrated_I(cross_integral, mean_i1, q2_mean: float | None = None,
                          regime: str | None = "I") -> CalibrationReport:
    """``Gamma2 = integral <i1 i2> dtau / <i1>``; needs no charge statistics."""
    return _integrated("integrated_I", cross_integral, mean_i1, q2_mean, regime,
                       ["non-overlapping pulses", "integration window covers F(tau)"], None)


def estimate_integrated_II(cross_fluct_integral, mean_i1, q2_mean: float | None = None,
                           regime: str | None = "II", background: float | None = None) -> CalibrationReport:
    """``Gamma2 = integral <di1 di2> dtau / <i1>``.

    ``background`` is the subtracted ``<i1><i2>`` term integrated over the
    same window; its ratio to the retained signal is reported because a
    small relative error in it is amplified by that factor.
    """
    return _integrated("integrated_II", cross_fluct_integral, mean_i1, q2_mean, regime,
                       ["nbar << 1 (J4 term neglected)", "integration window covers F(tau)"], background)


def estimate_twomode_analog(diff_integral, mean_i1, q_mean: float, regime: str | None = None,
                            balanced: bool = True) -> CalibrationReport:
    """``eta = 1 - integral <di- di-> dtau / (2 <q> <i1>)``; valid at any gain."""
    if not q_mean > 0:
        raise EstimatorError("q_mean must be positive")
    diff = _as_estimate(diff_integral)
    mean = _as_estimate(mean_i1)
    if not mean.value > 0:
        raise EstimatorError("mean current of detector 1 must be positive")
    eta = combine(lambda d, m: 1.0 - d / (2.0 * q_mean * m), diff, mean)
    report = CalibrationReport(
        "twomode_analog", TARGETS["twomode_analog"], eta.value * q_mean, eta.stderr * q_mean,
        eta.value, eta.stderr, regime,
        ["balanced detectors (eta1<q1> = eta2<q2>)", "deterministic charge (<q^2> = <q>^2)",
         "conjugate detection areas"], [], {},
        _digest(name="twomode_analog", diff=diff, mean=mean, q_mean=q_mean))
    if not balanced:
        report.flags.append("balanced assumption violated")
    return _finish(report)


def estimate_twomode_counting(stats: CountingStats, regime: str | None = None,
                              balanced: bool = True) -> CalibrationReport:
    """``eta = 1 - Var(N-) / (2 <N>)``."""
    if stats.n_mean <= 0:
        raise EstimatorError("zero mean counts")
    ratio = stats.difference_ratio()
    eta = combine(lambda r: 1.0 - 0.5 * r, ratio)
    report = CalibrationReport(
        "twomode_counting", TARGETS["twomode_counting"], None, None, eta.value, eta.stderr, regime,
        ["eta1 = eta2"], [],
        {"var_n_minus": stats.n_minus_var, "mean_n": stats.n_mean, "n_windows": stats.n_windows,
         "ratio": ratio.value, "ratio_stderr": ratio.stderr},
        _digest(name="twomode_counting", var=stats.n_minus_var, mean=stats.n_mean, w=stats.n_windows))
    if not balanced:
        report.flags.append("balanced assumption violated")
    return _finish(report)


def estimate_feedforward(ff_ratio_measured, q1_mean: float, q1_excess: float, q2_mean: float,
                         q2_excess: float, balanced: bool = True, regime: str | None = None,
                         tol: float = 1e-9) -> CalibrationReport:
    """Invert ``ratio = 1 - eta1 eta2 / (x1 x2)`` for ``eta = sqrt(eta1 eta2)``.

    ``x1``, ``x2`` are the excess ratios ``<q^2>/<q>^2``.
    """
    ratio = _as_estimate(ff_ratio_measured)
    r = ratio.value
    if 1.0 - r < -tol - 3.0 * (ratio.stderr if math.isfinite(ratio.stderr) else 0.0):
        raise EstimatorError("suppression ratio above 1: no correlation to invert")
    k = q1_excess * q2_excess
    eta = combine(lambda v: np.sqrt(np.clip(1.0 - v, 0.0, None) * k), ratio)
    q = math.sqrt(q1_mean * q2_mean)
    report = CalibrationReport(
        "feedforward", TARGETS["feedforward"], eta.value * q, eta.stderr * q, eta.value, eta.stderr,
        regime, [f"charge excess ratios {q1_excess:g}, {q2_excess:g} known", "nbar << 1",
                 "balanced detectors" if balanced else "reports sqrt(eta1 eta2)"], [],
        {"ratio": r, "ratio_stderr": ratio.stderr},
        _digest(name="feedforward", ratio=ratio, q1=q1_mean, x1=q1_excess, q2=q2_mean, x2=q2_excess))
    return _finish(report)
