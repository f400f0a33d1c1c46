import json
import subprocess
import sys

import pytest
import yaml

from lsqgap.cli import main
from lsqgap.harness import FIELDS, read_rows

TINY = {
    "distribution": {"kind": "sparse_dense"},
    "grid": {"d": [4, 9, 16], "n": [400]},
    "estimators": ["constrained_ls", "min_norm"],
    "replicates": 4,
    "seed": 5,
    "b_rule": {"sqrt_d_times": 1.0},
    "lambda_rule": {"fixed": 1.0},
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def test_verify(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("PASS")
    assert all(line.startswith("PASS") for line in out)


def test_verify_perturbed_fails(capsys):
    assert main(["verify", "--perturb"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_run_and_fit(config, tmp_path, capsys):
    out = tmp_path / "rows.csv"
    assert main(["run", str(config), "-o", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 6
    assert out.read_text().splitlines()[0] == ",".join(FIELDS)
    assert main(["fit", str(out), "-e", "constrained_ls"]) == 0
    assert capsys.readouterr().out.startswith("constrained_ls: slope=")


def test_run_json_to_stdout(config, capsys):
    assert main(["run", str(config), "-f", "json", "-j", "2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data) == 6 and data[0]["estimator"] == "constrained_ls"


def test_fit_insufficient(tmp_path, capsys):
    p = tmp_path / "one.csv"
    p.write_text(",".join(FIELDS) + "\n")
    assert main(["fit", str(p), "-e", "min_norm"]) == 2
    assert "need at least 3" in capsys.readouterr().err


def test_diagnose(config, capsys):
    assert main(["diagnose", str(config), "--moment-samples", "2000"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert len(reports) == 3
    assert {"d", "n", "multiplier_term", "effective_dimension"} <= set(reports[0])


@pytest.mark.parametrize("change", [{"replicates": 0}, {"grid": "nonsense"}, {"estimators": ["lasso"]}])
def test_bad_config_exit_code(tmp_path, capsys, change):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({**TINY, **change}))
    assert main(["run", str(p)]) == 2
    assert "lsqgap run:" in capsys.readouterr().err


def test_missing_file(capsys):
    assert main(["run", "/nonexistent/config.yaml"]) == 2


def test_console_module():
    out = subprocess.run([sys.executable, "-m", "lsqgap.cli", "verify"], capture_output=True, text=True)
    assert out.returncode == 0
