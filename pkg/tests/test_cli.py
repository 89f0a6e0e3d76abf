import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from twincal.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, _parse_values, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = dict(
    source=dict(nbar_peak=1e-3, tau_coh=1e-13, spatial_modes=1, duration=2e-7),
    detector1=dict(eta=0.8, pulse=dict(kind="rect", tau_p=5e-10)),
    detector2=dict(eta=0.6, pulse=dict(kind="rect", tau_p=5e-10)),
    estimators=["integrated_II", "klyshko_II"],
    replications=2,
    master_seed=3,
)
# lossless detectors make the counting estimators exact, so the pass gate is deterministic
LOSSLESS = dict(detector1=dict(eta=1.0, pulse=dict(kind="rect", tau_p=5e-10)),
                detector2=dict(eta=1.0, pulse=dict(kind="rect", tau_p=5e-10)),
                estimators=["counting_coincidence", "twomode_counting"])


@pytest.fixture
def config(tmp_path):
    def write(**kw):
        d = dict(SMALL, output_dir=str(tmp_path / "out"))
        d.update(kw)
        p = tmp_path / "spec.yaml"
        p.write_text(yaml.safe_dump(d))
        return p
    return write


def test_calibrate_writes_outputs(config, tmp_path, capsys):
    assert main(["calibrate", "--config", str(config(**LOSSLESS))]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("point,param,sweep_value,estimator")
    assert (tmp_path / "out" / "summary.csv").read_text() == out
    data = json.loads((tmp_path / "out" / "reports.json").read_text())
    assert data["schema_version"] == 1 and len(data["points"][0]["replications"]) == 2


def test_estimator_override_and_json(config, tmp_path, capsys):
    code = main(["calibrate", "--config", str(config(**LOSSLESS)), "--estimators", "twomode_counting",
                 "--format", "json", "--out", str(tmp_path / "o2"), "--seed", "9"])
    assert code == EXIT_OK
    points = json.loads(capsys.readouterr().out)
    assert [row["estimator"] for row in points[0]["aggregate"]] == ["twomode_counting"]
    assert json.loads((tmp_path / "o2" / "reports.json").read_text())["spec"]["master_seed"] == 9


def test_sweep(config, tmp_path, capsys):
    code = main(["sweep", "--config", str(config()), "--param", "detector2.eta", "--values", "0.3,0.9", "-q"])
    assert code in (EXIT_OK, EXIT_ACCEPTANCE) and capsys.readouterr().out == ""
    rows = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2
    assert {r.split(",")[2] for r in rows[1:]} == {"0.29999999999999999", "0.90000000000000002"}


def test_config_errors_exit_2(config, tmp_path, capsys):
    assert main(["calibrate", "--config", str(config(replications=0))]) == EXIT_CONFIG
    assert "replications" in capsys.readouterr().err
    assert main(["calibrate", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["sweep", "--config", str(config()), "--param", "detector2.colour", "--values", "1"]) == EXIT_CONFIG
    assert main(["calibrate", "--config", str(config()), "--estimators", "nope"]) == EXIT_CONFIG
    assert main(["calibrate", "--config", str(config()), "--jobs", "0"]) == EXIT_CONFIG


def test_acceptance_failure_exit_3(config):
    # a tolerance no finite sample can meet
    assert main(["calibrate", "--config", str(config(analysis=dict(rel_tolerance=1e-12))), "-q"]) == EXIT_ACCEPTANCE


def test_simulate_outputs(config, tmp_path):
    code = main(["simulate", "--config", str(config()), "--traces-out", str(tmp_path / "tr"), "-q"])
    assert code == EXIT_OK
    names = {p.name for p in (tmp_path / "tr").iterdir()}
    assert {"trace_1.csv", "trace_2.csv", "corr_cross12.csv", "corr_auto11.csv", "corr_auto22.csv",
            "simulation.json"} <= names
    head = (tmp_path / "tr" / "corr_cross12.csv").read_text().splitlines()[0]
    assert head == "lag,value,stderr"
    info = json.loads((tmp_path / "tr" / "simulation.json").read_text())
    assert info["regime"] == "II" and info["reports"][0]["estimator"] == "integrated_II"


def test_predict(config, tmp_path, capsys):
    assert main(["predict", "--config", str(config()), "--format", "json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["regime"] == "II" and rows[0]["flux"] == pytest.approx(1e10)
    assert (tmp_path / "out" / "prediction.json").exists()
    assert main(["predict", "--config", str(config())]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0].startswith("sweep_value,regime,I_tau_p,flux")


def test_parse_values():
    assert _parse_values("1, 2.5,gaussian") == [1, 2.5, "gaussian"]


def test_sample_config_loads():
    from twincal.config import load_spec

    for p in CONFIGS.glob("*.yaml"):
        assert load_spec(p).estimators


def test_module_entry_point(config):
    proc = subprocess.run([sys.executable, "-m", "twincal", "predict", "--config", str(config()), "-q"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "twincal", "--version"], capture_output=True, text=True)
    assert proc.stdout.strip().endswith("0.1.0")


def test_global_flags_before_subcommand(config, tmp_path, capsys):
    code = main(["--seed", "4", "--format", "json", "calibrate", "--config", str(config(**LOSSLESS)),
                 "--out", str(tmp_path / "g")])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)[0]["aggregate"][0]["estimator"] == "counting_coincidence"
    assert json.loads((tmp_path / "g" / "reports.json").read_text())["spec"]["master_seed"] == 4
