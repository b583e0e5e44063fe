import json
import math
import time
from importlib import resources

import numpy as np
import pytest

from pdpp.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NONCONVERGENCE, EXIT_OK, dumps, main, run_scenario


def _config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data, indent=2))
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -------------------------------------------------------------- validate ----

def test_default_validation_passes(capsys):
    code, out, _ = _run(capsys, "validate")
    report = json.loads(out)
    assert code == EXIT_OK and report["pass"]
    assert {r["check"] for r in report["results"]} >= {"biorthogonality", "key_identity", "semigroup",
                                                       "marginalization"}
    assert {r["N"] for r in report["results"]} == {1, 2, 3, 4}


def test_corrupted_constant_fails_key_identity(tmp_path, capsys):
    cfg = _config(tmp_path, {"test_hook": {"corrupt_c": 0.5}})
    code, out, _ = _run(capsys, "validate", "--config", cfg)
    report = json.loads(out)
    assert code == EXIT_FAIL
    failed = {r["check"] for r in report["results"] if not r["pass"]}
    assert "key_identity" in failed
    # every check still ran
    assert len(report["results"]) == 6 * 4


def test_empty_check_selection(tmp_path, capsys):
    code, out, _ = _run(capsys, "validate", "--config", _config(tmp_path, {"checks": []}))
    report = json.loads(out)
    assert code == EXIT_OK and report["note"] == "no checks run" and report["results"] == []


# --------------------------------------------------------- config errors ----

def test_bad_json_reports_line_and_column(tmp_path, capsys):
    cfg = _config(tmp_path, '{\n  "model": {"family": "brownian", "N": 2},\n  "x": [0, 1,]\n}')
    code, _, err = _run(capsys, "fredholm", "--config", cfg)
    assert code == EXIT_CONFIG
    assert f"{cfg}:3:" in err


def test_invalid_field_reports_line(tmp_path, capsys):
    cfg = _config(tmp_path, {"model": {"family": "brownian", "N": 2}, "x": [1.0, 0.0], "t": 1.0,
                             "thresholds": [0.0]})
    code, _, err = _run(capsys, "fredholm", "--config", cfg)
    assert code == EXIT_CONFIG and f"{cfg}:" in err and "x" in err


@pytest.mark.parametrize("command,data", [
    ("compare", {"scenario": "brownian-up-N3", "n_paths": 0}),
    ("compare", {"scenario": "no-such-scenario"}),
    ("simulate", {"model": {"family": "brownian", "N": 2}, "x": [0.0, 0.0], "times": [1.0],
                  "simulation": {"n_paths": 0}}),
    ("validate", {"checks": ["semigroup", "nonsense"]}),
    ("kernel", {"model": {"family": "martian", "N": 2}, "x": [0.0, 1.0], "t": 1.0, "grid": {"points": [0]}}),
])
def test_config_errors_exit_two(tmp_path, capsys, command, data):
    code, _, err = _run(capsys, command, "--config", _config(tmp_path, data))
    assert code == EXIT_CONFIG and err.startswith("config error:")


def test_flag_validation(capsys):
    assert _run(capsys, "validate", "--threads", "0")[0] == EXIT_CONFIG
    assert _run(capsys, "validate", "--seed", "-1")[0] == EXIT_CONFIG
    assert _run(capsys, "validate", "--tol", "0")[0] == EXIT_CONFIG


# ---------------------------------------------------------------- kernel ----

def _kernel_csv(tmp_path, capsys, data):
    cfg = _config(tmp_path, data)
    out = tmp_path / "k.csv"
    assert _run(capsys, "kernel", "--config", cfg, "--out", str(out))[0] == EXIT_OK
    return out.read_bytes()


def test_kernel_single_particle_is_heat_kernel(tmp_path, capsys):
    data = {"model": {"family": "brownian", "N": 1}, "x": [0.2], "t": 0.7,
            "grid": {"points": {"lo": -2.0, "hi": 2.0, "n": 9}}}
    lines = _kernel_csv(tmp_path, capsys, data).decode().splitlines()
    assert lines[0].startswith("# schema_version=1")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    _, y1, _, _, value = rows.T
    # one particle: the kernel is the heat kernel from x in the first argument, constant in the second
    want = np.exp(-(y1 - 0.2) ** 2 / (2 * 0.7)) / math.sqrt(2 * math.pi * 0.7)
    assert len(value) == 81
    assert np.allclose(value, want, rtol=0, atol=1e-12)


def test_kernel_csv_is_reproducible(tmp_path, capsys):
    data = {"model": {"family": "ou", "params": {"gamma": 0.6}, "N": 2}, "x": [-0.3, 0.4], "t": 0.5,
            "grid": {"points": [-1.0, 0.0, 0.5, 2.0]}}
    first = _kernel_csv(tmp_path, capsys, data)
    assert first == _kernel_csv(tmp_path, capsys, data)
    values = [ln.split(",")[-1] for ln in first.decode().splitlines()[2:]]
    assert all(float(v) == float(repr(float(v))) for v in values)


def test_kernel_grid_timing(tmp_path, capsys):
    data = {"model": {"family": "brownian", "N": 3}, "x": [-0.5, 0.0, 0.5], "t": 1.0,
            "grid": {"indices": [3], "points": {"lo": -3.0, "hi": 3.0, "n": 100}}}
    start = time.perf_counter()
    csv = _kernel_csv(tmp_path, capsys, data)
    assert time.perf_counter() - start < 10.0
    assert len(csv.decode().splitlines()) == 2 + 100 * 100


# -------------------------------------------------------------- fredholm ----

def test_fredholm_gaussian_cdf(tmp_path, capsys):
    cfg = _config(tmp_path, {"model": {"family": "brownian", "N": 1}, "x": [0.0], "t": 1.0,
                             "thresholds": [0.5]})
    code, out, _ = _run(capsys, "fredholm", "--config", cfg, "--tol", "1e-10")
    report = json.loads(out)
    assert code == EXIT_OK and report["schema_version"] == 1
    assert abs(report["value"] - 0.5 * math.erfc(-0.5 / math.sqrt(2))) < 1e-6
    assert report["trace"]


def test_fredholm_nonconvergence_exit_three(tmp_path, capsys):
    cfg = _config(tmp_path, {"model": {"family": "brownian", "N": 3}, "x": [-0.5, 0.0, 0.5], "t": 1.0,
                             "thresholds": [0.2, 0.8, 1.5]})
    code, out, _ = _run(capsys, "fredholm", "--config", cfg, "--tol", "1e-300")
    assert code == EXIT_NONCONVERGENCE
    assert json.loads(out)["trace"]


# -------------------------------------------------------------- simulate ----

def test_simulate_writes_csv(tmp_path, capsys):
    cfg = _config(tmp_path, {"model": {"family": "brownian", "N": 2}, "x": [0.0, 0.5], "times": [0.5],
                             "simulation": {"n_paths": 200}})
    out = tmp_path / "paths.csv"
    code, stdout, _ = _run(capsys, "simulate", "--config", cfg, "--out", str(out), "--seed", "3")
    summary = json.loads(stdout)
    assert code == EXIT_OK and summary["n_paths"] == 200
    assert (tmp_path / "paths.csv.json").exists()
    assert len(out.read_text().splitlines()) == 2 + 200 * 2


# --------------------------------------------------------------- compare ----

def test_compare_report_matches_schema(tmp_path, capsys):
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads(resources.files("pdpp").joinpath("schemas/compare_report.schema.json").read_text())
    cfg = _config(tmp_path, {"scenario": "brownian-up-N3", "n_paths": 2000})
    code, out, _ = _run(capsys, "compare", "--config", cfg, "--seed", "5")
    report = json.loads(out)
    jsonschema.validate(report, schema)
    assert code == (EXIT_OK if report["pass"] else EXIT_FAIL)


@pytest.mark.slow
def test_besq_scenario_passes():
    report = run_scenario("besq-thm15-N3", n_paths=100_000, seed=0)
    assert report["pass"], report


# --------------------------------------------------------------- output ----

def test_numbers_round_trip():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, math.pi):
        assert float(json.loads(dumps({"v": v}))["v"]) == v
    assert dumps({"v": 0.1}).count("0.10000000000000001") == 1
