"""CLI tests: argument handling, exit codes, output artifacts, and the
run manifest."""

import csv
import json

import numpy as np
import pytest

from cardiodyn.cli import (
    EXIT_NOT_FOUND,
    EXIT_OK,
    EXIT_USAGE,
    main,
)


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


# -- exit codes ----------------------------------------------------------------


def test_unknown_model_is_not_found(tmp_path):
    assert run(tmp_path, "simulate", "hodgkin") == EXIT_NOT_FOUND


def test_unknown_parameter_is_usage_error(tmp_path):
    assert run(tmp_path, "simulate", "noble", "--set", "G_X=1") == EXIT_USAGE


def test_malformed_override_is_usage_error(tmp_path):
    assert run(tmp_path, "simulate", "noble", "--set", "G_L") == EXIT_USAGE
    assert run(tmp_path, "simulate", "noble",
               "--set", "G_L=abc") == EXIT_USAGE


def test_bad_ic_is_usage_error(tmp_path):
    assert run(tmp_path, "simulate", "noble", "--ic", "1,2") == EXIT_USAGE


def test_unknown_scenario_is_not_found(tmp_path):
    assert run(tmp_path, "cable", "no-such-scenario") == EXIT_NOT_FOUND


def test_missing_subcommand_is_usage_error():
    assert main([]) == EXIT_USAGE


def test_version_flag():
    assert main(["--version"]) == EXIT_OK


# -- simulate -------------------------------------------------------------------


def test_simulate_writes_artifacts_and_metrics(tmp_path, capsys):
    code = run(tmp_path, "simulate", "noble", "--set", "G_L=0.075",
               "--t-end", "4000")
    assert code == EXIT_OK
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert abs(metrics["T"] - 564.13) < 1.0
    assert metrics["verdict"] == "periodic"
    assert metrics["EAD_count"] == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["tool_version"]
    assert len(man["model_hash"]) == 64
    assert man["wall_time_s"] > 0
    assert str(tmp_path / "trajectory.csv") in man["outputs"]
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,V,h,m,n"


def test_simulate_converging_run_verdict(tmp_path):
    code = run(tmp_path, "simulate", "noble", "--set", "G_L=0.4",
               "--t-end", "3000")
    assert code == EXIT_OK
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    # one spontaneous spike, then rest at the stable equilibrium
    assert metrics["T"] is None


def test_simulate_stimulated_bernus(tmp_path):
    code = run(tmp_path, "simulate", "bernus", "--t-end", "500",
               "--stim-amplitude", "40")
    assert code == EXIT_OK
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["V_max"] > 0.0
    assert metrics["EAD_count"] == 0


# -- continue -------------------------------------------------------------------


def test_continue_eq_finds_hopf(tmp_path, capsys):
    code = run(tmp_path, "continue", "noble", "G_L", "0.0", "0.3", "--eq")
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "Hopf" in printed and "0.2008" in printed
    doc = json.loads((tmp_path / "equilibria.json").read_text())
    hopfs = [b for b in doc["bifurcations"] if b["kind"] == "Hopf"]
    assert len(hopfs) == 1
    assert abs(hopfs[0]["param_value"] - 0.200883) < 1e-3
    assert (tmp_path / "equilibria.csv").exists()


# -- cable ----------------------------------------------------------------------


def test_cable_config_file_decoupling(tmp_path):
    cfgfile = tmp_path / "cable.json"
    cfgfile.write_text(json.dumps({
        "model": "noble",
        "n_cells": 6,
        "diffusion": 0.0,
        "params": {"G_L": 0.075},
        "ic": [-79.04, 0.81, 0.045, 0.52],
        "t_span": [0.0, 300.0],
    }))
    code = run(tmp_path, "cable", "--config", str(cfgfile))
    assert code == EXIT_OK
    with open(tmp_path / "field.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "cell_0", "cell_1", "cell_2", "cell_3",
                       "cell_4", "cell_5"]
    body = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.ptp(body, axis=1).max() == 0.0  # decoupled cells identical
    side = json.loads((tmp_path / "field.json").read_text())
    assert side["failure_time"] is None
    assert len(side["probes"]) == 3


def test_cable_scenario_preset_runs(tmp_path):
    # shortened horizon just to exercise the preset path end to end
    code = run(tmp_path, "cable", "ead-1pct", "--t-end", "50")
    assert code == EXIT_OK
    side = json.loads((tmp_path / "field.json").read_text())
    assert side["config"]["scenario"] == "ead-1pct"
    assert side["config"]["n_cells"] == 128


# -- lyapunov -------------------------------------------------------------------


def test_lyapunov_command(tmp_path, capsys):
    code = run(tmp_path, "lyapunov", "noble", "--set", "G_L=0.4",
               "--horizon", "2000")
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "non-chaotic" in printed
    rows = (tmp_path / "lyapunov.csv").read_text().splitlines()
    assert rows[0] == "n,lambda1_running"
    assert len(rows) > 10


# -- modes ----------------------------------------------------------------------


def test_modes_scan_matches_equilibrium_stability(tmp_path, capsys):
    code = run(tmp_path, "modes", "noble", "--set", "G_L=0.075",
               "--kmax", "50")
    assert code == EXIT_OK
    with open(tmp_path / "modes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["k"] == "0"
    assert rows[0]["stability"] == "unstable"
    assert rows[-1]["stability"] == "stable"
    assert float(rows[0]["shift"]) == 0.0


# -- sweep ----------------------------------------------------------------------


def test_sweep_writes_metrics_rows(tmp_path):
    code = run(tmp_path, "sweep", "noble", "G_L", "0.07", "0.08",
               "--step", "0.01", "--t-end", "3000")
    assert code == EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["run_id"] == "G_L=0.07"
    assert all(r["EAD_count"] == "0" for r in rows)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["values"] == [0.07, 0.08]


def test_sweep_parallel_matches_serial(tmp_path):
    assert run(tmp_path, "sweep", "noble", "G_L", "0.07", "0.08",
               "--step", "0.01", "--t-end", "2000", "--workers", "2") \
        == EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["run_id"] for r in rows] == ["G_L=0.07", "G_L=0.08"]
