import json
import subprocess
import sys

import pytest

from envlab import CONVENTIONS_VERSION, __version__
from envlab.cli import main
from envlab.config import parse_config

SMALL = """\
experiment: morse_gap
grid: {n: 2, N: 16}
class:
  A: [[1.0, 0.0], [0.0, 1.0]]
  f:
    - {k: [1, 0, 0, 0], cos: 0.15}
    - {k: [0, 0, 1, 0], cos: 0.15}
probes:
  - [{k: [2, 0, 0, 0], cos: 0.05}]
epsilon: {eps0: 0.5, count: 4}
tolerances: {morse_gap: 0.1}
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    return path


def test_no_command_prints_catalog(capsys):
    assert main([]) == 0
    out = capsys.readouterr().out
    assert "6 experiments" in out
    for name in ("morse_gap", "eps_scaling", "ijk_table", "n3_remark", "htilde_scaling", "prop_bd"):
        assert name in out


def test_list_json(capsys):
    assert main(["list", "--json"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["conventions"] == CONVENTIONS_VERSION
    assert len(body["experiments"]) == 6
    assert all({"id", "description", "required_keys", "optional_keys"} <= set(e) for e in body["experiments"])


def test_version_flag():
    res = subprocess.run([sys.executable, "-m", "envlab.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert __version__ in res.stdout and CONVENTIONS_VERSION in res.stdout


def test_gate_only_run(tmp_path, capsys):
    assert main(["run", "--gate", "--out", str(tmp_path)]) == 0
    body = json.loads((tmp_path / "report.json").read_text())
    assert body["passed"] and len(body["gates"]) == 6
    assert capsys.readouterr().out.count(": pass") == 6


def test_run_writes_outputs(small, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small), "--out", str(out)]) == 0
    assert "experiment morse_gap: PASS" in capsys.readouterr().out
    digest = parse_config(SMALL).digest()
    body = json.loads((out / "report.json").read_text())
    assert body["config_hash"] == digest
    assert body["conventions"] == CONVENTIONS_VERSION
    assert body["gate"]["passed"]
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["threads"] == 1 and meta["runtime_seconds"] >= 0
    files = list((out / "tables").glob("*.csv")) + list((out / "plotdata").glob("*.dat"))
    assert files
    for f in files:
        first = f.read_text().splitlines()[0]
        assert f"config_hash={digest}" in first and f"conventions={CONVENTIONS_VERSION}" in first


def test_report_is_identical_across_thread_counts(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(small), "--out", str(a), "--threads", "1"]) == 0
    assert main(["run", "--config", str(small), "--out", str(b), "--threads", "3"]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    for f in (a / "tables").glob("*.csv"):
        assert f.read_bytes() == (b / "tables" / f.name).read_bytes()


def test_threads_from_environment(small, tmp_path, monkeypatch):
    monkeypatch.setenv("ENVLAB_THREADS", "2")
    assert main(["run", "--config", str(small), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "metadata.json").read_text())["threads"] == 2


def test_json_output(small, tmp_path, capsys):
    assert main(["run", "--config", str(small), "--out", str(tmp_path), "--json"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["experiment"] == "morse_gap"
    assert all(v["criterion"].startswith("C") for v in body["verdicts"])


def test_odd_resolution_is_a_config_error(small, tmp_path, capsys):
    small.write_text(SMALL.replace("N: 16", "N: 63"))
    assert main(["run", "--config", str(small), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "config error" in err and "grid invariant violated" in err and "N=63" in err


def test_unknown_key_is_reported_with_line(small, tmp_path, capsys):
    small.write_text(SMALL + "epsilon_count: 3\n")
    assert main(["run", "--config", str(small), "--out", str(tmp_path)]) == 1
    assert f"{small}:12: epsilon_count: unknown key" in capsys.readouterr().err


def test_missing_config_and_file(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path)]) == 1
    assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1
    err = capsys.readouterr().err
    assert "--config" in err and "nope.yaml" in err


def test_solver_failure_leaves_partial_report(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(SMALL.replace("morse_gap", "prop_bd").replace("[0.0, 1.0]]", "[0.0, -0.3]]").split("probes:")[0])
    out = tmp_path / "bad"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 1
    assert "solver error" in capsys.readouterr().err
    body = json.loads((out / "report.json").read_text())
    assert body["failure"]["stage"] == "run"
    assert body["failure"]["error"]
    assert (out / "metadata.json").exists()


def test_failed_verdict_exits_two(small, tmp_path):
    small.write_text(SMALL.replace("morse_gap: 0.1", "morse_gap: 1.0e-9"))
    assert main(["run", "--config", str(small), "--out", str(tmp_path)]) == 2
    body = json.loads((tmp_path / "report.json").read_text())
    assert any(not v["passed"] for v in body["verdicts"])
