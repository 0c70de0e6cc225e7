"""Config parsing, experiment runs, artifact schemas, and exit codes."""
import csv
import json

import numpy as np
import pytest

from defaultlab.acceptance import Metric
from defaultlab.cli import (
    ConfigError,
    RunReport,
    emit_report,
    main,
    parse_config,
)

MERTON = """
[grid]
T = 1.0
n_steps = 20

[market]
d = 1
sigma = 0.2
phi = 0.2
alpha = 1.0

[solver]
mode = "lsmc"
n_paths = 3000
seed = 7
"""

BOND_ODE = """
[grid]
T = 1.0
n_steps = 50

[market]
phi = 0.0

[default]
lambda = 0.3

[claim]
kind = "survival"
[claim.parameters]
g1 = 1.0
g2 = 0.0

[solver]
mode = "ode"
"""


def cfg_file(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ----------------------------------------------------------- config parsing
def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'T_end'"):
        parse_config({"grid": {"T": 1.0, "n_steps": 10, "T_end": 2.0}})


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match=r"unknown section \[gird\]"):
        parse_config({"gird": {"T": 1.0}})


def test_missing_grid_keys():
    with pytest.raises(ConfigError, match="missing key 'n_steps'"):
        parse_config({"grid": {"T": 1.0}})


def test_singular_volatility_is_config_error():
    with pytest.raises(ConfigError, match="singular volatility"):
        parse_config({"grid": {"T": 1.0, "n_steps": 10},
                      "market": {"sigma": 0.0}})


def test_bad_solver_mode():
    with pytest.raises(ConfigError, match="solver mode"):
        parse_config({"grid": {"T": 1.0, "n_steps": 10},
                      "solver": {"mode": "magic"}})


def test_bad_experiment_kind():
    with pytest.raises(ConfigError, match="experiment kind"):
        parse_config({"grid": {"T": 1.0, "n_steps": 10},
                      "experiment": {"kind": "frobnicate"}})


def test_piecewise_lambda_parses():
    cfg = parse_config({
        "grid": {"T": 1.0, "n_steps": 10},
        "default": {"lambda": [[0.0, 0.5], [0.2, 0.4]]},
    })
    assert cfg.intensity.lam(0.25) == pytest.approx(0.2)
    assert cfg.intensity.lam(0.75) == pytest.approx(0.4)


def test_jumps_parse_and_lengths_must_match():
    cfg = parse_config({
        "grid": {"T": 1.0, "n_steps": 10},
        "jumps": {"atoms": [1.0, -0.5], "weights": [0.3, 0.1], "zeta": [1.0, 2.0]},
    })
    assert cfg.levy.m == 2
    assert cfg.levy.rate(1, 0.0) == pytest.approx(0.2)
    with pytest.raises(ConfigError, match="equal length"):
        parse_config({"grid": {"T": 1.0, "n_steps": 10},
                      "jumps": {"atoms": [1.0], "weights": [0.3, 0.1]}})


def test_seed_override_wins():
    raw = {"grid": {"T": 1.0, "n_steps": 10}, "solver": {"seed": 3}}
    assert parse_config(raw).seed == 3
    assert parse_config(raw, seed_override=99).seed == 99


def test_claim_parameters_required():
    with pytest.raises(ConfigError, match="missing key 'c'"):
        parse_config({"grid": {"T": 1.0, "n_steps": 10},
                      "claim": {"kind": "constant"}})


# ----------------------------------------------------------- report emission
def test_empty_report_renders():
    rep = RunReport(kind="solve", seed=1)
    text = emit_report(rep, "text")
    assert text.splitlines() == ["solve: 0/0 metrics passed (0.0s, seed 1)"]


def test_single_failing_metric_has_exactly_one_fail():
    rep = RunReport(kind="solve", seed=1)
    rep.metrics = [
        Metric(name="good", value=0.0, passed=True, tol=1.0),
        Metric(name="bad", value=2.0, passed=False, tol=1.0),
    ]
    text = emit_report(rep, "text")
    assert text.count("FAIL") == 1
    assert text.count("PASS") == 1


def test_json_text_round_trip_values_agree():
    rep = RunReport(kind="solve", seed=4, seconds=1.25)
    rep.metrics = [Metric(name="y0", value=-0.02, passed=True, tol=0.003, se=1e-4)]
    parsed = json.loads(emit_report(rep, "json"))
    assert parsed == rep.as_dict()
    assert "y0 -0.02 ± 0.0001 [tol 0.003] PASS" in emit_report(rep, "text")


# ------------------------------------------------------------- exit codes
def test_solve_merton_writes_artifacts_and_passes(tmp_path):
    out = tmp_path / "run"
    code = main(["solve", "--config", cfg_file(tmp_path, MERTON),
                 "--out-dir", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["pass"] is True
    assert report["experiment"] == "solve"
    assert report["value"] == pytest.approx(-np.exp(-0.02), abs=1e-3)
    assert (out / "resolved_config.json").exists()
    rows = read_csv(out / "bsde.csv")
    assert rows[0] == ["t", "Y_mean", "Y_se", "Z_mean_1", "W_def_mean", "clamp_hits"]
    assert len(rows) == 22  # header + 21 nodes
    assert float(rows[1][1]) == pytest.approx(-0.02, abs=0.005)


def test_config_error_exit_2(tmp_path, capsys):
    bad = cfg_file(tmp_path, MERTON + "\nstray = 1\n")
    assert main(["solve", "--config", bad, "--out-dir", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["solve", "--out-dir", str(tmp_path / "o")]) == 2
    assert "required" in capsys.readouterr().err


def test_unknown_command_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_solver_failure_exit_1(tmp_path, capsys):
    # valid config, but the ode reduction cannot handle a price-dependent
    # claim: a solver-level error -> exit 1 with a tagged message
    text = """
[grid]
T = 1.0
n_steps = 10

[claim]
kind = "capped_call"
[claim.parameters]
strike = 1.0
cap = 2.0

[solver]
mode = "ode"
"""
    code = main(["solve", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(tmp_path / "o")])
    assert code == 1
    assert "solve:" in capsys.readouterr().err


def test_measurability_override_rejected():
    with pytest.raises(ConfigError, match="cannot be overridden"):
        parse_config({
            "grid": {"T": 1.0, "n_steps": 10},
            "claim": {"kind": "capped_call", "measurability": "G_T_tau",
                      "parameters": {"strike": 1.0, "cap": 2.0}},
        })


# ------------------------------------------------------------- experiments
def test_simulate_paths_schema(tmp_path):
    text = """
[grid]
T = 0.5
n_steps = 10

[market]
phi = 0.1

[jumps]
atoms = [1.0]
weights = [0.5]
zeta = [1.0]

[default]
lambda = 0.4

[solver]
n_paths = 500
seed = 2
"""
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(out)]) == 0
    rows = read_csv(out / "paths.csv")
    assert rows[0] == ["path_id", "t", "S_1", "H", "A", "Lambda", "M", "U"]
    assert len(rows) == 1 + 500 * 11
    # M = H - Lambda on every emitted row
    for row in rows[1:50]:
        h, lam, m = float(row[3]), float(row[5]), float(row[6])
        assert m == pytest.approx(h - lam, abs=1e-15)


def test_verify_enlargement_passes(tmp_path):
    text = """
[grid]
T = 1.0
n_steps = 20

[default]
lambda = 0.3

[solver]
n_paths = 4000
seed = 13
"""
    assert main(["verify-enlargement", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(tmp_path / "run")]) == 0


def test_indifference_ode_bond(tmp_path):
    out = tmp_path / "run"
    assert main(["indifference", "--config", cfg_file(tmp_path, BOND_ODE),
                 "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    target = float(np.log(1.0 + (np.e - 1.0) * np.exp(-0.3)))
    assert report["pi"] == pytest.approx(target, abs=1e-9)
    # report.json always carries the full key set
    for key in ("pi", "value", "theta_star", "violations"):
        assert key in report


def test_optimize_artifacts(tmp_path):
    text = """
[grid]
T = 1.0
n_steps = 20

[market]
phi = 0.2

[solver]
n_paths = 4000
seed = 5
"""
    out = tmp_path / "run"
    assert main(["optimize", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(out)]) == 0
    grid_rows = read_csv(out / "optimality.csv")
    assert grid_rows[0] == ["theta", "value", "se"]
    assert len(grid_rows) == 1 + 41  # the -1:0.05:1 grid
    r_rows = read_csv(out / "rprocess.csv")
    assert r_rows[0] == ["t", "mean_R", "se"]
    times = [float(r[0]) for r in r_rows[1:]]
    assert times == sorted(times) and len(set(times)) == len(times)
    report = json.loads((out / "report.json").read_text())
    assert report["theta_star"] == pytest.approx(0.2, abs=0.05)
    assert report["violations"] == {"dominance": 0, "constancy": 0}


def test_random_horizon_lsmc(tmp_path):
    text = """
[grid]
T = 1.0
n_steps = 20

[default]
lambda = 0.3

[claim]
kind = "default_indicator"

[solver]
n_paths = 4000
seed = 3
"""
    out = tmp_path / "run"
    assert main(["random-horizon", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    target = float(np.log(np.e + (1.0 - np.e) * np.exp(-0.3)))
    assert report["value"] == pytest.approx(-np.exp(target), abs=0.05)


def test_oracle_tree_csv(tmp_path):
    text = """
[grid]
T = 1.0
n_steps = 5

[market]
phi = 0.2

[jumps]
atoms = [1.0]
weights = [0.3]
zeta = [1.0]

[default]
lambda = 0.3

[claim]
kind = "survival"
[claim.parameters]
g1 = 0.5
g2 = 0.1

[solver]
mode = "tree"
"""
    out = tmp_path / "run"
    assert main(["oracle", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(out)]) == 0
    rows = read_csv(out / "tree.csv")
    assert rows[0] == ["node_id", "t", "state", "Y", "K", "W_1", "W_def", "residual"]
    assert rows[1][0] == "0" and float(rows[1][1]) == 0.0
    # terminal nodes carry values but no representation entries
    assert rows[-1][4] == "" and rows[-1][-1] == ""


def test_solve_rejects_stopped_claim(tmp_path, capsys):
    text = """
[grid]
T = 1.0
n_steps = 10

[default]
lambda = 0.3

[claim]
kind = "default_indicator"
"""
    assert main(["solve", "--config", cfg_file(tmp_path, text),
                 "--out-dir", str(tmp_path / "o")]) == 2
    assert "random-horizon" in capsys.readouterr().err


# -------------------------------------------------------- reproducibility
def test_same_config_same_seed_byte_identical(tmp_path):
    path = cfg_file(tmp_path, MERTON)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["solve", "--config", path, "--out-dir", str(out)]) == 0
        outs.append((out / "bsde.csv").read_bytes())
    assert outs[0] == outs[1]


def test_worker_count_does_not_change_csv(tmp_path):
    path = cfg_file(tmp_path, MERTON)
    blobs = []
    for workers, name in ((1, "w1"), (3, "w3")):
        out = tmp_path / name
        assert main(["solve", "--config", path, "--out-dir", str(out),
                     "--workers", str(workers)]) == 0
        blobs.append((out / "bsde.csv").read_bytes())
    assert blobs[0] == blobs[1]
