from __future__ import annotations

import json
import math

import pytest
import yaml

from driftlab.harness import cli
from driftlab.harness.config import SUITES, ConfigError, config_from_dict, load_config, schema_json
from driftlab.harness.matrix import default_matrix, matrix_summary
from driftlab.harness.report import atomic_write, dumps, jsonable, load_report
from driftlab.norms_scaling import MixedNormSpec, parabolic_exponent
from driftlab.solver import SolverError


def small_config(**over) -> dict:
    data = {
        "grid": {"n": 2, "cells": 32, "L": 8.0},
        "coefficients": {"name": "identity"},
        "drift": {"name": "cellular-vortex", "params": {"amplitude": 1.0, "wavenumber": math.pi / 2}},
        "norm": {"l": "inf", "q": 2, "n": 2},
        "sources": [[0.0, 0.0], [0.5, 0.25]],
        "horizon": 0.3,
        "suites": ["conservation", "duality"],
        "output_dir": "run",
    }
    data.update(over)
    return data


@pytest.fixture
def cfg_file(tmp_path):
    def write(**over):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(small_config(**over)))
        return path
    return write


@pytest.mark.parametrize("bad", [
    {"grid": {"n": 2, "cells": 32}},
    {"norm": {"l": "inf", "q": 2, "n": 3}},
    {"sources": [[0.0]]},
    {"sources": [[0.0, 0.0]]},
    {"times": [0.1, 0.5]},
    {"suites": ["nope"]},
    {"tolerances": {"unknown": 1.0}},
    {"norm": {"l": "inf", "q": 0.5, "n": 2}},
])
def test_invalid_configs_raise(bad):
    with pytest.raises(ConfigError):
        config_from_dict(small_config(**bad))


def test_digest_ignores_output_location_and_workers():
    a = config_from_dict(small_config())
    b = config_from_dict(small_config(output_dir="elsewhere", workers=4))
    c = config_from_dict(small_config(seed=3))
    assert a.digest() == b.digest() != c.digest()
    assert a.norm == MixedNormSpec("inf", 2, 2)
    # suites are kept in canonical order
    assert config_from_dict(small_config(suites=["duality", "conservation"])).suites == ["conservation", "duality"]


def test_load_config_and_schema(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(small_config()))
    assert load_config(path).horizon == 0.3
    path.write_text("- not a mapping\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    schema = json.loads(schema_json())
    assert set(SUITES) <= set(schema["properties"]["suites"]["items"]["enum"])


def test_jsonable_and_atomic_write(tmp_path):
    obj = {"a": math.inf, "b": -math.inf, "c": math.nan, "d": (1, 2)}
    assert jsonable(obj) == {"a": "inf", "b": "-inf", "c": "nan", "d": [1, 2]}
    path = atomic_write(tmp_path / "x" / "o.json", dumps(obj))
    assert json.loads(path.read_text())["a"] == "inf"
    assert [p.name for p in path.parent.iterdir()] == ["o.json"]


def test_cli_run_is_deterministic(cfg_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path / "root"))
    cfg = cfg_file()
    assert cli.main(["suite", "run", "--config", str(cfg), "--no-figures", "--output-dir", "a"]) == 0
    assert cli.main(["suite", "run", "--config", str(cfg), "--no-figures", "--output-dir", "b"]) == 0
    ra, rb = (tmp_path / "root" / d / "report.json" for d in "ab")
    assert ra.read_bytes() == rb.read_bytes()
    report = load_report(ra.parent)
    for suite in report["suites"]:
        for check in suite["checks"]:
            assert "margin" in check
    # re-rendering from report.json keeps the exit code
    assert cli.main(["report", str(ra.parent), "--no-figures"]) == 0
    assert (ra.parent / "report.md").exists() and (ra.parent / "checks.csv").exists()


def test_cli_exit_code_for_failed_checks(cfg_file, tmp_path, monkeypatch):
    # a tolerance below round-off makes the skew check fail honestly
    monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
    cfg = cfg_file(suites=["conservation"], tolerances={"skew_residual": 1e-20})
    assert cli.main(["suite", "run", "--config", str(cfg), "--no-figures"]) == 1


def test_cli_exit_code_for_config_errors(cfg_file, tmp_path, capsys):
    assert cli.main(["suite", "run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert cli.main(["suite", "run", "--config", str(cfg_file()), "--set", "horizon=-1"]) == 2
    assert cli.main(["suite", "run", "--config", str(cfg_file()), "--set", "noequals"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_exit_code_for_numerical_breakdown(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))

    def broken(cfg):
        raise SolverError("non-finite state")

    monkeypatch.setattr(cli, "run_experiment", broken)
    assert cli.main(["suite", "run", "--config", str(cfg_file())]) == 3


def test_cli_solve_kernel_and_riccati(cfg_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
    cfg = str(cfg_file())
    assert cli.main(["solve", "--config", cfg, "--csv", "--horizon", "0.1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["mass"] - 1.0) <= 1e-13
    assert (tmp_path / "run" / "state.csv").exists()
    assert cli.main(["kernel", "--config", cfg, "--set", "times=[0.1, 0.2]"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["t"] for r in rows] == pytest.approx([0.1, 0.2])
    assert cli.main(["riccati", "--samples", "50"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["pointwise"]["violations"] == 0 and res["integral"]["violations"] == 0
    assert cli.main(["schema"]) == 0


def test_default_matrix_spans_the_exponent_range():
    rows = default_matrix()
    assert len(rows) == 12
    gammas = {round(parabolic_exponent(config_from_dict(d).norm).gamma, 12) for _, d in rows}
    assert gammas == {1.0, 1.25, 1.5}
    assert len({label for label, _ in rows}) == 12


def test_matrix_summary_takes_the_worst_exit_code():
    mk = lambda code: {"suites": [{"name": "cone", "status": "pass"}], "summary": {"exit_code": code}}  # noqa: E731
    assert matrix_summary([("a", mk(0), {}), ("b", mk(1), {})])["exit_code"] == 1
    assert matrix_summary([("a", mk(3), {}), ("b", mk(1), {})])["exit_code"] == 3
