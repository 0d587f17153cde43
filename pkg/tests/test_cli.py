import json

import numpy as np
import pytest

from resiltrack import cli
from resiltrack.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_GAINS, EXIT_INTERNAL, EXIT_OK, analytic_checks, main
from resiltrack.config import DEFAULTS, ConfigError, load_config
from resiltrack.dynamics import CwParams

SHORT = {
    "mission": {"waypoints_m": [[0.0, 80.0], [0.0, 120.0]], "transfer_time_s": 5400.0, "initial_hold_s": 100.0},
    "reference": {"dt_s": 1.0},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def merged(**blocks):
    out = {k: dict(v) for k, v in SHORT.items()}
    for k, v in blocks.items():
        out.setdefault(k, {}).update(v)
    return out


def test_verify_passes(capsys):
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[-1].endswith("checks passed")
    n, m = out[-1].split()[0].split("/")
    assert n == m
    assert all(line.startswith("PASS ") for line in out[:-1])


def test_verify_detects_wrong_rate(tmp_path, capsys):
    path = write(tmp_path, {"params": {"omega_radps": 0.05}})
    assert main(["verify", "--config", path]) == EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out


def test_analytic_checks_structure():
    checks = analytic_checks(CwParams())
    assert {"name", "expected", "actual", "tolerance", "passed"} <= set(checks[0])
    assert all(c["passed"] for c in checks)


def test_analyze_default(tmp_path, capsys):
    assert main(["analyze", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    res = [t["resilient"] for t in rep["thrusters"]]
    assert res == [False, False, False, True, False]
    assert rep["thrusters"][3]["rho_max"] == pytest.approx(np.sqrt(2) - 1, abs=1e-9)
    assert rep["reference"]["rho_ref"] > 0
    assert json.loads(capsys.readouterr().out) == rep


def test_analyze_double_integrator(tmp_path, capsys):
    path = write(tmp_path, merged(params={"omega_radps": 0.0}))
    assert main(["analyze", "--config", path]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["thrusters"][3]["resilient"]


@pytest.mark.parametrize(
    "cfg",
    [
        {"scenario": {"tau_s": 0.25}},
        {"scenario": {"tau_s": -1.0}},
        {"bogus": {}},
        {"scenario": {"tau": 0.2}},
        {"disturbance": {"w_max": 2.0}},
        {"pareto": {"tau_grid_s": []}},
    ],
)
def test_bad_configs_exit_2(tmp_path, cfg, capsys):
    path = write(tmp_path, merged(**cfg) if "bogus" not in cfg else cfg)
    cmd = "pareto" if "pareto" in cfg else "simulate"
    assert main([cmd, "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_and_malformed_files(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == EXIT_CONFIG


def test_pareto_off_grid_tau_exit_2(tmp_path):
    path = write(tmp_path, merged(pareto={"tau_grid_s": [0.25], "wmax_grid": [0.01]}))
    assert main(["pareto", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_load_config_defaults_and_seed():
    cfg = load_config(None, seed=9)
    assert cfg["disturbance"]["seed"] == 9
    assert cfg["params"] == DEFAULTS["params"]
    with pytest.raises(ConfigError):
        load_config(None, seed=-1)


def test_simulate_outputs_byte_identical(tmp_path, capsys):
    path = write(tmp_path, SHORT)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", path, "--out", str(a), "--seed", "4"]) == EXIT_OK
    assert main(["simulate", "--config", path, "--out", str(b), "--seed", "4"]) == EXIT_OK
    for f in ("trace.csv", "metrics.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert "success=True" in capsys.readouterr().out
    m = json.loads((a / "metrics.json").read_text())
    assert m["success"] and m["max_pos_err_m"] < 1e-5


def test_simulate_failure_exit_1(tmp_path):
    path = write(tmp_path, merged(scenario={"x0_offset_m_mps": [0.0, 0.0, 500.0, 0.0]}))
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_FAIL


def test_simulate_infeasible_auto_gains_exit_3(tmp_path, capsys):
    path = write(tmp_path, merged(gains={"mode": "auto"}, disturbance={"lip_L_per_s": 1.0}))
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_GAINS
    assert "infeasible" in capsys.readouterr().err


def test_reference_command(tmp_path, capsys):
    path = write(tmp_path, SHORT)
    assert main(["reference", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["min_kos_dist_m"] >= 50.0
    d = np.loadtxt(tmp_path / "reference.csv", delimiter=",", skiprows=1)
    assert len(d) == info["samples"]


def test_reference_kos_violation_exit_1(tmp_path):
    cfg = {"mission": {"waypoints_m": [[0.0, 80.0], [-80.0, 0.0]], "transfer_time_s": 1500.0, "initial_hold_s": 0.0}}
    assert main(["reference", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_FAIL


def test_pareto_one_row(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("RESIL_THREADS", "1")
    path = write(tmp_path, merged(pareto={"tau_grid_s": [0.2], "wmax_grid": [0.01], "seeds_per_cell": 1}))
    assert main(["pareto", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "front.csv").read_text().splitlines()
    assert lines == ["tau,max_feasible_wmax", "0.2,0.01"]
    assert "max_feasible_wmax=0.01" in capsys.readouterr().out


def test_pareto_non_monotone_front_exit_4(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "pareto_sweep", lambda *a, **k: {"cells": [], "front": [(0.2, 0.1), (1.0, 0.5)]})
    path = write(tmp_path, merged(pareto={"tau_grid_s": [0.2, 1.0], "wmax_grid": [0.1, 0.5]}))
    assert main(["pareto", "--config", path, "--out", str(tmp_path)]) == EXIT_INTERNAL


def test_front_monotone_helper():
    assert cli.front_is_monotone([(0.2, 1.0), (1.0, 0.5), (2.0, 0.5)])
    assert not cli.front_is_monotone([(0.2, 0.1), (1.0, 0.5)])


def test_expm_oracle_matches_closed_form(params):
    from resiltrack.dynamics import cw_expm, cw_matrix

    E = cw_expm(params, 1234.5)
    assert np.max(np.abs(E - cli.expm_oracle(cw_matrix(params), 1234.5))) <= 1e-12


def test_unknown_command_exits_argparse():
    with pytest.raises(SystemExit):
        main(["launch"])
