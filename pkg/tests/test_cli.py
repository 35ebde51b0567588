import json
import logging

import numpy as np
import pytest

from stealthlqg import cli
from stealthlqg.attacks import SinusoidAttack, export_attack_csv
from stealthlqg.io import read_csv
from stealthlqg.model import preset, preset_names

FAST = ["--preset", "1d-mean-revert", "--n-steps", "100"]


@pytest.fixture(autouse=True)
def _quiet():
    yield
    logging.getLogger().handlers.clear()


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_scenario_list(capsys):
    assert run("scenario", "list") == 0
    out = capsys.readouterr().out
    for name in preset_names():
        assert name in out


def test_solve_writes_gains(tmp_path):
    assert run("solve", *FAST, "--lambda", "0.3", "--strategy", "optimal-det,optimal-adaptive",
               "--out", tmp_path) == 0
    for f in ("R.csv", "agent.csv", "det_gains.csv", "det_attack.csv", "adaptive_gains.csv",
              "tau_gains.csv", "bound.json"):
        assert (tmp_path / f).exists(), f
    header, data = read_csv(tmp_path / "R.csv")
    assert header[:2] == ["t", "R_11"] and data.shape[0] == 101
    info = json.loads((tmp_path / "bound.json").read_text())
    assert info["T_below_bound"] is False and info["warnings"]
    assert (tmp_path / "R.csv").read_text().startswith("# config=")


def test_lambda_list_makes_subdirectories(tmp_path):
    assert run("solve", *FAST, "--lambda", "0.1,0.2", "--out", tmp_path) == 0
    assert (tmp_path / "lambda_0.1" / "det_attack.csv").exists()
    assert (tmp_path / "lambda_0.2" / "bound.json").exists()


def test_simulate(tmp_path):
    assert run("simulate", *FAST, "--lambda", "0.3", "--strategy", "zero,sinusoid", "--paths", 2,
               "--mean-paths", 20, "--out", tmp_path) == 0
    assert (tmp_path / "traj_zero_1.csv").exists() and (tmp_path / "mean_sinusoid.csv").exists()
    summary = json.loads((tmp_path / "simulate_summary.json").read_text())
    assert [r["strategy"] for r in summary["runs"]] == ["zero", "sinusoid"]


def test_evaluate_exact_only(tmp_path):
    assert run("evaluate", *FAST, "--lambda", "0.3", "--strategy", "optimal-det,gaussian",
               "--paths", 0, "--out", tmp_path) == 0
    res = json.loads((tmp_path / "evaluate.json").read_text())
    det, gauss = res["evaluations"]
    assert "exact" in det and "detectability_residual_sup" in det
    assert "exact" not in gauss and "monte_carlo" not in gauss
    header, data = read_csv(tmp_path / "sweep_optimal-det_exact.csv")
    assert data[0, header.index("lambda")] == 0.3


def test_evaluate_imported_attack(tmp_path):
    m = preset("1d-mean-revert", n_steps=100).model
    f = export_attack_csv(tmp_path / "atk.csv", SinusoidAttack().as_path(m.grid, 1, 1))
    assert run("evaluate", *FAST, "--strategy", "imported,sinusoid", "--attack-csv", f,
               "--paths", 30, "--out", tmp_path / "o") == 0
    a, b = json.loads((tmp_path / "o" / "evaluate.json").read_text())["evaluations"]
    assert a["exact"]["D"] == b["exact"]["D"]
    assert a["monte_carlo"]["D"] == b["monte_carlo"]["D"]
    assert a["detection"]["chi2_dof"] == 50


def test_multiround(tmp_path):
    assert run("multiround", *FAST, "--rounds", 2, "--out", tmp_path) == 0
    rounds = json.loads((tmp_path / "rounds.json").read_text())
    assert rounds["lambda"] == 0.5 and len(rounds["records"]) == 3
    _, data = read_csv(tmp_path / "rounds.csv")
    assert np.all(np.diff(data[:, 3]) > 0)


def test_multiround_divergence_exit_code(tmp_path):
    assert run("multiround", *FAST, "--lambda", "4", "--rounds", 2, "--out", tmp_path) == 1
    assert json.loads((tmp_path / "rounds.json").read_text())["failed_round"] == 1


def test_divergence_exit_code(tmp_path, capsys):
    assert run("solve", *FAST, "--lambda", "4", "--out", tmp_path) == 1
    diag = json.loads((tmp_path / "error.json").read_text())
    assert diag["error"] == "divergence" and diag["system"] == "det"
    assert 0 < diag["t"] < 0.5
    assert json.loads(capsys.readouterr().out) == diag


@pytest.mark.parametrize("argv,needle", [
    (["--lambda", "-1"], "nonnegative"),
    (["--strategy", "nope"], "unknown strategies"),
    (["--strategy", "imported"], "attack-csv"),
    (["--workers", "0"], "workers"),
])
def test_config_errors(tmp_path, argv, needle):
    assert run("evaluate", *FAST, *argv, "--out", tmp_path) == 2
    diag = json.loads((tmp_path / "error.json").read_text())
    assert diag["error"] == "config" and needle in diag["message"]


def test_invalid_model_lists_violations(tmp_path, capsys):
    d = preset("1d-mean-revert", n_steps=50).model.to_dict()
    d["Q"] = {"kind": "Constant", "value": [[-1.0]]}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": d}))
    assert run("solve", "--config", cfg, "--out", tmp_path) == 2
    diag = json.loads(capsys.readouterr().out)
    assert any("Q not positive semidefinite" in v for v in diag["violations"])


def test_unknown_preset_and_missing_model(tmp_path):
    assert run("solve", "--preset", "nope", "--out", tmp_path) == 2
    assert run("solve", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("solve", "--config", bad) == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "1d-mean-revert", "n_steps": 100, "lambda": [0.2],
                               "strategies": ["zero"], "mc": {"n_paths": 10, "base_seed": 5}}))
    assert run("evaluate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("evaluate", "--config", cfg, "--lambda", "0.1", "--out", tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "evaluate.json").read_text())["evaluations"][0]
    b = json.loads((tmp_path / "b" / "evaluate.json").read_text())["evaluations"][0]
    assert a["lambda"] == 0.2 and b["lambda"] == 0.1
    assert a["monte_carlo"]["n_paths"] == 10 and a["monte_carlo"]["base_seed"] == 5
