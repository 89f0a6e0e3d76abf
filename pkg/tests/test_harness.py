import json
import math

import numpy as np
import pytest

from twincal.config import AnalysisConfig, dump_spec, load_spec, set_param, spec_from_dict, spec_to_dict
from twincal.errors import ConfigError
from twincal.harness import (SUMMARY_COLUMNS, classify, default_jobs, regime_warnings, replication_rngs, report,
                             result_dict, run, summary_csv, true_eta)

BASE = dict(
    source=dict(nbar_peak=1e-3, tau_coh=1e-13, spatial_modes=1, duration=2e-7),
    detector1=dict(eta=0.8, pulse=dict(kind="rect", tau_p=5e-10)),
    detector2=dict(eta=0.6, pulse=dict(kind="rect", tau_p=5e-10)),
    estimators=["integrated_II"],
    replications=3,
    master_seed=5,
)


def make(**kw):
    d = json.loads(json.dumps(BASE))
    d.update(kw)
    return spec_from_dict(d)


def test_config_round_trip(tmp_path):
    spec = make(sweep=dict(param="detector2.eta", values=[0.2, 0.4]),
                analysis=dict(window=2e-9, rel_tolerance=0.1))
    assert spec_from_dict(spec_to_dict(spec)) == spec
    for name in ("s.yaml", "s.json"):
        p = tmp_path / name
        if name.endswith("yaml"):
            dump_spec(spec, p)
        else:
            p.write_text(json.dumps(spec_to_dict(spec)))
        assert load_spec(p) == spec


@pytest.mark.parametrize("change, path", [
    (dict(detector1=dict(eta=1.5)), "detector1.eta"),
    (dict(detector1=dict(eta=0.5, colour="red")), "detector1.colour"),
    (dict(source=dict(nbar_peak=1e-3, tau_coh=-1.0)), "source.tau_coh"),
    (dict(estimators=["integrated_II", "magic"]), "estimators[1]"),
    (dict(replications=0), "replications"),
    (dict(schema_version=7), "schema_version"),
    (dict(analysis=dict(windw=1.0)), "analysis.windw"),
])
def test_config_errors_name_the_field(change, path):
    with pytest.raises(ConfigError) as exc:
        make(**change)
    assert exc.value.path == path


def test_missing_section_and_bad_files(tmp_path):
    d = dict(BASE)
    del d["detector2"]
    with pytest.raises(ConfigError, match="detector2"):
        spec_from_dict(d)
    with pytest.raises(ConfigError, match="cannot read"):
        load_spec(tmp_path / "nope.yaml")
    (tmp_path / "bad.yaml").write_text("source: [1, 2\n")
    with pytest.raises(ConfigError, match="parse error"):
        load_spec(tmp_path / "bad.yaml")


def test_set_param():
    spec = make()
    s = set_param(spec, "detector1.eta, detector2.eta", 0.3)
    assert s.detector1.eta == s.detector2.eta == 0.3 and spec.detector1.eta == 0.8
    s = set_param(spec, "detector1.pulse.tau_p", 1e-9)
    assert s.detector1.dt == pytest.approx(1e-9 / 20)
    with pytest.raises(ConfigError) as exc:
        set_param(spec, "detector1.gain", 2.0)
    assert exc.value.path == "detector1.gain"
    with pytest.raises(ConfigError, match="detector1.eta"):
        set_param(spec, "detector1.eta", 2.0)


def test_true_eta_targets():
    spec = make()
    assert true_eta(spec, "eta1") == 0.8 and true_eta(spec, "eta2") == 0.6
    assert true_eta(spec, "eta_geometric") == pytest.approx(math.sqrt(0.48))


def test_rng_streams_independent():
    # different streams per (point, rep) and per role; no linear correlation between them
    draws = np.array([[g.standard_normal(2000) for g in replication_rngs(1, p, r)]
                      for p in range(2) for r in range(5)]).reshape(-1, 2000)
    c = np.corrcoef(draws)
    off = c[~np.eye(c.shape[0], dtype=bool)]
    assert np.max(np.abs(off)) < 4.5 / math.sqrt(2000)
    again = replication_rngs(1, 1, 3)[2].standard_normal(5)
    assert np.array_equal(again, replication_rngs(1, 1, 3)[2].standard_normal(5))


def test_lossless_counting_single_replication():
    spec = make(detector1=dict(eta=1.0, pulse=dict(kind="rect", tau_p=5e-10)),
                detector2=dict(eta=1.0, pulse=dict(kind="rect", tau_p=5e-10)),
                source=dict(nbar_peak=1e-3, tau_coh=1e-13, duration=1e-6),
                estimators=["counting_coincidence", "twomode_counting"], replications=1)
    res = run(spec)
    counting, twomode = res.aggregates
    assert counting["eta_hat_mean"] == 1.0 and counting["eta_hat_spread"] == 0.0
    assert twomode["eta_hat_mean"] == 1.0
    assert counting["n_reps"] == counting["n_valid"] == 1


def test_empty_estimator_list(tmp_path):
    res = run(make(estimators=[]))
    assert summary_csv(res) == ",".join(SUMMARY_COLUMNS) + "\n"
    paths = report(res, tmp_path)
    assert paths["summary"].read_text().count("\n") == 1
    assert json.loads(paths["reports"].read_text())["passed"] is True


def test_regime_mismatch_is_reported():
    spec = make(estimators=["integrated_I", "twomode_analog"])
    assert classify(spec).regime == "II"
    warns = regime_warnings(spec)
    assert any("integrated_I assumes regime I" in w for w in warns)
    assert any("balanced assumption violated" in w for w in warns)
    d = result_dict(run(make(estimators=["integrated_I"], replications=1)))
    assert any("integrated_I" in w["message"] for w in d["diagnostics"]["warnings"])
    # the estimate is still produced
    assert d["points"][0]["replications"][0][0]["eta_hat"] is not None


def test_summary_identical_across_jobs(tmp_path):
    spec = make(sweep=dict(param="detector2.eta", values=[0.4, 0.7]), estimators=["integrated_II", "klyshko_II"])
    a, b = run(spec, jobs=1), run(spec, jobs=3)
    assert summary_csv(a) == summary_csv(b)
    da, db = result_dict(a), result_dict(b)
    assert da["points"] == db["points"] and da["spec_digest"] == db["spec_digest"]


def test_seed_changes_results():
    a, b = run(make()), run(make(master_seed=6))
    assert a.aggregates[0]["eta_hat_mean"] != b.aggregates[0]["eta_hat_mean"]


def test_aggregate_fields_consistent():
    res = run(make(replications=4))
    row = res.aggregates[0]
    eta = np.array([r[0]["eta_hat"] for r in res.reports[0]])
    assert row["eta_hat_mean"] == pytest.approx(eta.mean())
    assert row["stderr_of_mean"] == pytest.approx(eta.std(ddof=1) / 2)
    assert row["bias"] == pytest.approx(eta.mean() - 0.6)
    assert row["predicted"] == pytest.approx(0.6, rel=0.01)
    gate = max(row["stderr_of_mean"], row["stderr_block_mean"] / 2)
    assert row["pass"] == (abs(row["bias"]) <= 3 * gate)


def test_rel_tolerance_gate():
    res = run(make(analysis=dict(rel_tolerance=1e-9), replications=2))
    assert res.passed is False


def test_saved_correlations(tmp_path):
    res = run(make(replications=1, analysis=dict(save_correlations=True)))
    report(res, tmp_path)
    files = sorted(p.name for p in (tmp_path / "correlations").iterdir())
    assert "corr_cross12_p0_r0.csv" in files
    data = np.loadtxt(tmp_path / "correlations" / "corr_cross12_p0_r0.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 3 and np.allclose(data[:, 0], -data[::-1, 0])


def test_analysis_defaults():
    a = AnalysisConfig()
    assert a.background_subtraction and a.window is None and a.overlap_threshold == 0.1


@pytest.mark.slow
def test_asymptotic_unbiasedness():
    # 100 replications per estimator; relative bias must be below 1%
    balanced = dict(eta=0.8, pulse=dict(kind="rect", tau_p=5e-10))
    spec = spec_from_dict(dict(
        source=dict(nbar_peak=1e-3, tau_coh=1e-13, duration=2e-5), detector1=balanced, detector2=balanced,
        estimators=["integrated_II", "klyshko_II", "twomode_analog", "twomode_counting", "feedforward"],
        replications=100, master_seed=31))
    counting = spec_from_dict(dict(
        source=dict(nbar_peak=1e-7, tau_coh=1e-13, spatial_modes=10, duration=1e-3),
        detector1=dict(eta=0.8, pulse=dict(kind="rect", tau_p=1e-8)),
        detector2=dict(eta=0.6, pulse=dict(kind="rect", tau_p=1e-8)),
        estimators=["counting_coincidence"], replications=100, master_seed=32))
    for s in (spec, counting):
        for row in run(s, jobs=min(4, default_jobs())).aggregates:
            assert abs(row["rel_bias"]) < 0.01, row["estimator"]
            assert row["n_valid"] == 100
