import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from twincal.detector import (RESOLUTION, ChargeModel, CurrentTrace, DetectorConfig, PulseShape, autocorr_tail,
                              check_timescales, integration_window, pulse_autocorr, sample_event_times,
                              synthesize_current, thin_counts)
from twincal.errors import ConfigError
from twincal.source import CountFrame, SourceConfig, mean_flux, sample_coherent_counts, sample_pair_counts

FAMILIES = ("rect", "exp_decay", "gaussian")


def rng(seed=0):
    return np.random.default_rng(seed)


def ones_frame(n):
    """n cells holding exactly one pair each."""
    return CountFrame(n, 1e-13, np.arange(n, dtype=np.int64), np.ones(n, dtype=np.int64), np.full(n, 0.5))


def test_config_validation():
    with pytest.raises(ConfigError, match="eta"):
        DetectorConfig(1.2)
    with pytest.raises(ConfigError, match="excess_ratio"):
        ChargeModel("gamma", 1.0, 0.5)
    with pytest.raises(ConfigError, match="excess_ratio"):
        ChargeModel("deterministic", 1.0, 2.0)
    with pytest.raises(ConfigError, match="tau_p"):
        PulseShape("rect", -1.0)
    with pytest.raises(ConfigError, match="dt"):
        DetectorConfig(0.5, pulse=PulseShape("rect", 1e-9), dt=1e-10)
    d = DetectorConfig(0.5, ChargeModel("gamma", 2.0, 1.5), PulseShape("rect", 1e-9))
    assert d.dt == pytest.approx(1e-9 / RESOLUTION)
    assert d.gamma == 1.0


def test_thinning_endpoints():
    fr = sample_pair_counts(SourceConfig(0.3, 1e-13), 20_000, rng(1))
    t = thin_counts(fr, 1.0, 1.0, rng(2))
    assert np.array_equal(t.detected_1, fr.pairs) and np.array_equal(t.detected_2, fr.pairs)
    t = thin_counts(fr, 0.0, 0.0, rng(2))
    assert t.detected_1.sum() == 0 and t.detected_2.sum() == 0
    with pytest.raises(ValueError):
        thin_counts(fr, 1.5, 0.5, rng())


def test_thinning_independent_arms():
    n = 1_000_000
    t = thin_counts(ones_frame(n), 0.6, 0.6, rng(3))
    both = np.mean((t.detected_1 == 1) & (t.detected_2 == 1))
    assert abs(both - 0.36) < 3 * math.sqrt(0.36 * 0.64 / n)


def test_thinning_moments_negative_binomial():
    n, eta, nbar, m = 1_000_000, 0.7, 0.4, 2
    fr = sample_pair_counts(SourceConfig(nbar, 1e-13, spatial_modes=m), n, rng(4))
    d = thin_counts(fr, eta, eta, rng(5))
    x = np.zeros(n)
    x[d.cell_index] = d.detected_1
    # a thinned negative binomial is negative binomial with nbar -> eta*nbar
    mean = m * eta * nbar
    var = m * eta * nbar * (1 + eta * nbar)
    assert abs(x.mean() - mean) < 3 * math.sqrt(var / n)
    assert x.var() == pytest.approx(var, rel=0.01)
    assert np.all(d.detected_1 <= d.pairs) and np.all(d.detected_2 <= d.pairs)


def test_event_times_support():
    empty = thin_counts(CountFrame(10, 1e-13, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)),
                        0.5, 0.5, rng())
    assert sample_event_times(empty, 1).size == 0
    fr = thin_counts(CountFrame(10, 1e-13, np.array([3]), np.array([1]), np.array([0.25])), 1.0, 1.0, rng())
    for r in (None, rng(9)):
        t = sample_event_times(fr, 1, rng=r)
        assert t.size == 1 and 3e-13 <= t[0] < 4e-13
    with pytest.raises(ValueError):
        sample_event_times(fr, 3)


def test_event_times_sorted_and_twin_simultaneous():
    fr = thin_counts(sample_pair_counts(SourceConfig(0.5, 1e-13), 10_000, rng(6)), 1.0, 1.0, rng(7))
    t1, t2 = sample_event_times(fr, 1), sample_event_times(fr, 2)
    assert np.all(np.diff(t1) >= 0)
    assert np.array_equal(t1, t2)
    t = sample_event_times(fr, 1, rng=rng(8))
    assert np.all(np.diff(t) >= 0)


def test_event_rate_matches_flux():
    cfg = SourceConfig(1e-3, 1e-13, spatial_modes=5, duration=5e-5)
    eta = 0.4
    fr = thin_counts(sample_pair_counts(cfg, None, rng(10)), eta, eta, rng(11))
    t = sample_event_times(fr, 1, rng=rng(12))
    expected = eta * mean_flux(cfg) * cfg.duration
    assert t.size > 9e5
    assert abs(t.size - expected) < 3 * math.sqrt(expected * (1 + eta * 1e-3))


def test_no_events_gives_zero_trace():
    d = DetectorConfig(0.5, pulse=PulseShape("rect", 1e-9))
    tr = synthesize_current(np.empty(0), d, 1e-7, rng())
    assert len(tr) == round(1e-7 / d.dt) and not tr.samples.any()


@pytest.mark.parametrize("kind", FAMILIES)
def test_single_pulse_deposits_its_charge(kind):
    d = DetectorConfig(1.0, ChargeModel("deterministic", 2.5), PulseShape(kind, 1e-9))
    tr = synthesize_current(np.array([3.3e-8]), d, 1e-7, rng())
    area = tr.samples.sum() * tr.dt
    tol = 2.5 * d.dt / d.pulse.tau_p  # one sample of edge discretisation
    assert area == pytest.approx(2.5, abs=tol)


def test_rejects_bad_inputs():
    d = DetectorConfig(1.0, pulse=PulseShape("rect", 1e-9))
    with pytest.raises(ValueError):
        synthesize_current(np.array([np.nan]), d, 1e-7, rng())
    coarse = DetectorConfig(1.0, pulse=PulseShape("rect", 1e-9))
    object.__setattr__(coarse, "dt", 1e-9 / 10)
    with pytest.raises(ValueError):
        synthesize_current(np.array([1e-8]), coarse, 1e-7, rng())


@pytest.mark.parametrize("kind", FAMILIES)
def test_charge_conservation(kind):
    tau_p = 1e-9
    d = DetectorConfig(1.0, ChargeModel("gamma", 1.0, 2.0), PulseShape(kind, tau_p))
    times = np.sort(rng(13).uniform(0, 1e-6, 2000))
    charges = d.charge.sample(times.size, rng(14))
    tr = synthesize_current(times, d, 1e-6, rng(14))
    total = tr.samples.sum() * tr.dt
    # pulses cut by the record end, plus zero-mean sampling error of at most dt/tau_p per pulse
    edge = np.sum(times > 1e-6 - 10 * tau_p) + np.sum(times < 10 * tau_p) * (kind == "gaussian")
    grid = 3 * math.sqrt(times.size) * charges.max() * d.dt / tau_p
    assert abs(total - charges.sum()) <= edge * charges.max() + grid


@pytest.mark.parametrize("kind", FAMILIES)
def test_mean_current_of_poisson_events(kind):
    rate, q0, T = 2e9, 1.5, 2e-5
    d = DetectorConfig(1.0, ChargeModel("deterministic", q0), PulseShape(kind, 5e-10))
    fr = sample_coherent_counts(rate * 1e-13, int(T / 1e-13), rng(15), 1e-13)
    fr.detected_1 = fr.pairs
    tr = synthesize_current(sample_event_times(fr, 1, rng=rng(16)), d, T, rng(17)).trim(10 * 5e-10)
    mean = tr.samples.mean()
    sd = q0 * math.sqrt(rate / tr.duration)
    assert abs(mean - q0 * rate) < 3 * sd


def test_charge_statistics():
    det = ChargeModel("deterministic", 2.0)
    q = det.sample(1000, rng())
    assert np.mean(q ** 2) / np.mean(q) ** 2 == 1.0
    g = ChargeModel("gamma", 2.0, 2.0)
    q = g.sample(1_000_000, rng(18))
    x = np.mean(q ** 2) / np.mean(q) ** 2
    assert x == pytest.approx(2.0, abs=0.02)


@pytest.mark.parametrize("kind", FAMILIES)
def test_pulse_autocorr_properties(kind):
    p = PulseShape(kind, 2e-9)
    tau = np.linspace(-20e-9, 20e-9, 101)
    assert np.array_equal(pulse_autocorr(p, tau), pulse_autocorr(p, -tau))
    area, _ = integrate.quad(lambda s: pulse_autocorr(p, s * 2e-9), -60, 60, points=[0.0], limit=200)
    assert area * 2e-9 == pytest.approx(1.0, abs=1e-9)
    # closed form agrees with the defining integral of f(t) f(t + tau)
    for t in (0.0, 0.7e-9, 3e-9):
        direct, _ = integrate.quad(lambda s: p.f(s) * p.f(s + t), -20e-9, 20e-9, points=[0.0, -t, 2e-9, 2e-9 - t],
                                   limit=400)
        assert direct == pytest.approx(pulse_autocorr(p, t), rel=1e-6, abs=1e-3 / 2e-9 * 1e-6)


def test_pulse_autocorr_examples():
    p = PulseShape("rect", 1e-9)
    assert pulse_autocorr(p, 0.0) == pytest.approx(1e9)
    assert pulse_autocorr(p, 1e-9) == 0.0


@pytest.mark.parametrize("kind", FAMILIES)
def test_integration_window(kind):
    p = PulseShape(kind, 1e-9)
    w = integration_window(p)
    assert w >= 5e-9
    assert autocorr_tail(p, w) <= 1e-3
    numeric, _ = integrate.quad(lambda s: pulse_autocorr(p, s * 1e-9), -w / 1e-9, w / 1e-9, points=[0.0])
    assert 1 - numeric <= 1e-3 + 1e-12


def test_timescale_warning():
    with pytest.warns(RuntimeWarning):
        assert check_timescales(1e-12, 1e-13) is not None
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_timescales(1e-11, 1e-13) is None


def test_trace_io(tmp_path):
    tr = CurrentTrace(np.arange(5.0), 0.5, 1.0)
    tr.to_csv(tmp_path / "t.csv")
    data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "time,current"
    assert np.array_equal(data[:, 1], tr.samples) and np.allclose(data[:, 0], tr.times)
    tr.to_npz(tmp_path / "t.npz")
    back = CurrentTrace.from_npz(tmp_path / "t.npz")
    assert np.array_equal(back.samples, tr.samples) and back.dt == tr.dt and back.t0 == tr.t0
    trimmed = tr.trim(0.5)
    assert len(trimmed) == 3 and trimmed.t0 == 1.5
    with pytest.raises(ValueError):
        tr.trim(2.0)
