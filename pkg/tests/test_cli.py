import json

import pytest

from hmortar.cli import main


def _run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_jinverse_exact_passes(capsys):
    code, out, _ = _run(capsys, ["diagnose", "jinverse", "--m", "64", "--h", "0.01",
                                 "--variant", "exact"])
    assert code == 0
    assert json.loads(out)["max_residual"] < 1e-12


def test_jinverse_printed_reports_failure(capsys):
    code, out, err = _run(capsys, ["diagnose", "jinverse", "--m", "64", "--h", "0.01"])
    assert code == 1
    assert json.loads(out)["passed"] is False
    assert json.loads(err)["error"] == "check_failed"


def test_datagen_deterministic(tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        code, _, _ = _run(capsys, ["datagen", "lorenz", "--t-final", "10", "--dt", "0.001",
                                   "--seed", "7", "--out", str(tmp_path / name)])
        assert code == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_train_missing_data(tmp_path, capsys):
    code, _, err = _run(capsys, ["train", "--data", str(tmp_path / "nope.csv"),
                                 "--checkpoint", str(tmp_path / "c.json")])
    assert code == 2
    rec = json.loads(err)
    assert rec["error"] == "missing_file" and "nope.csv" in rec["message"]


@pytest.mark.parametrize("argv", [["bogus"], ["diagnose", "nothing"], ["simulate", "--m", "x"]])
def test_usage_errors(capsys, argv):
    code, _, err = _run(capsys, argv)
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_malformed_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    code, _, err = _run(capsys, ["train", "--config", str(cfg), "--data", "x.csv",
                                 "--checkpoint", "c.json"])
    assert code == 2 and json.loads(err)["error"] == "bad_input"


def test_train_forecast_pipeline(tmp_path, capsys):
    data = tmp_path / "osc.csv"
    assert _run(capsys, ["datagen", "oscillator", "--t-final", "20", "--dt", "0.05",
                         "--damping", "0.4", "--out", str(data)])[0] == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_domains": 2, "m_cells": 4, "delta_t": 0.2, "batch_size": 4,
                               "probe_size": 4, "probe_interval": 1,
                               "model": {"kind": "transformer", "config": {"model_dim": 8}}}))
    ck = tmp_path / "c.json"
    code, out, _ = _run(capsys, ["train", "--config", str(cfg), "--data", str(data), "--z", "0.4",
                                 "--steps", "2", "--checkpoint", str(ck),
                                 "--metrics", str(tmp_path / "m.jsonl")])
    assert code == 0 and json.loads(out)["steps"] == 2
    code, out, _ = _run(capsys, ["forecast", "--checkpoint", str(ck), "--u0", "1", "--j0", "0",
                                 "--z", "0.4", "--n-domains", "10",
                                 "--out", str(tmp_path / "f.csv")])
    assert code == 0 and json.loads(out)["rows"] == 40


@pytest.mark.parametrize("check,extra", [
    ("sbp", ["--cases", "5"]),
    ("energy", ["--n-domains", "200"]),
    ("energy", ["--model", "dissipative", "--n-domains", "200"]),
    ("energy", ["--model", "pendulum", "--n-domains", "200"]),
    ("gradients", ["--model", "dissipative", "--n-list", "5,10"]),
])
def test_diagnose_checks(capsys, check, extra):
    code, out, _ = _run(capsys, ["diagnose", check] + extra)
    assert code == 0 and json.loads(out)["passed"]


def test_simulate_energy(capsys):
    code, out, _ = _run(capsys, ["simulate", "--model", "harmonic", "--n-domains", "50", "--energy"])
    assert code == 0 and abs(json.loads(out)["energy_total"]) < 1e-12


def test_stats_refuses_too_few_switches(tmp_path, capsys):
    data = tmp_path / "o.csv"
    _run(capsys, ["datagen", "oscillator", "--t-final", "2", "--dt", "0.1", "--out", str(data)])
    code, _, err = _run(capsys, ["stats", "switching", "--data", str(data)])
    assert code == 2 and json.loads(err)["error"] == "too_few_switches"


def test_stats_runs_on_lorenz(tmp_path, capsys):
    data = tmp_path / "l.csv"
    _run(capsys, ["datagen", "lorenz", "--t-final", "200", "--dt", "0.01", "--out", str(data)])
    code, out, _ = _run(capsys, ["stats", "switching", "--data", str(data)])
    assert code == 0
    rep = json.loads(out)
    assert rep["n_intervals"] > 10 and rep["rate"] > 0
