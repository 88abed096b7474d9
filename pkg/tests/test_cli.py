import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import SMALL_CONFIGS
from rbmlab.paths import TimeGrid, sample_brownian
from rbmlab.skorohod import reflect_values


def _csv(path):
    rows = path.read_text().splitlines()
    return rows[0].split(","), [r.split(",") for r in rows[1:]]


def test_check_s_reports_false(cli):
    code, out = cli("check-s", {"n": 4, "a": -1.0})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["completely_s"] is False
    header, _ = _csv(out / "metrics.csv")
    assert header == ["metric", "n", "a", "t", "value", "stderr"]


def test_check_s_explicit_matrix(cli):
    code, out = cli("check-s", {"R": [[1, -2], [0, 1]]})
    assert code == 0
    assert json.loads((out / "report.json").read_text())["completely_s"] is True


def test_simulate_n1_equals_reflect_1d(cli):
    code, out = cli("simulate", {"n": 1, "steps": 100, "seed": 4})
    assert code == 0
    header, rows = _csv(out / "solution.csv")
    assert header == ["t", "i", "X", "L"]
    X = np.array([float(r[2]) for r in rows])
    L = np.array([float(r[3]) for r in rows])
    W = sample_brownian(TimeGrid(1.0, 100), 1, 0.0, 1.0, 4).values
    x, l = reflect_values(W)
    assert np.array_equal(X, x[0]) and np.array_equal(L, l[0])


def test_mv_solve_defaults_match_folded_mean(cli):
    code, out = cli("mv-solve", {"a": 0.0})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert abs(rep["lambda_T"] - math.sqrt(2 / math.pi)) <= 3 * rep["lambda_T_stderr"]
    header, rows = _csv(out / "lambda.csv")
    assert header == ["t", "lambda"] and len(rows) == 10_001


def test_jackson_map(cli):
    code, out = cli("jackson-map", SMALL_CONFIGS["jackson-map"])
    assert code == 0
    header, rows = _csv(out / "matrix.csv")
    assert header == ["i", "j", "P", "rho", "R"]
    cell = {(int(r[0]), int(r[1])): r for r in rows}
    assert float(cell[(0, 1)][3]) == pytest.approx(-2 * 0.1)


def test_manifest_contents(cli):
    code, out = cli("simulate", SMALL_CONFIGS["simulate"])
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seeds"]["noise_seed"] == 3
    files = {a["file"] for a in man["artifacts"]}
    assert files == {"metrics.csv", "report.json", "solution.csv"}
    assert len(man["config_hash"]) == 64 and "numpy" in man["versions"]


def test_unknown_key_exits_2(cli):
    code, _ = cli("simulate", {"n": 2, "colour": "red"})
    assert code == 2


def test_invalid_values_exit_2(cli):
    assert cli("simulate", {"n": 2, "sigma": -1})[0] == 2
    assert cli("mv-solve", {"a": -1.5})[0] == 2
    assert cli("coupling-sweep", {"a": 0.2})[0] == 2
    assert cli("coupling-sweep", {"a": 0.8, "rho": {"half_width": 0.3}})[0] == 2


def test_mismatched_experiment_exits_2(cli):
    assert cli("simulate", {"experiment": "check-s", "n": 2})[0] == 2


def test_unreadable_config_exits_2(tmp_path):
    from rbmlab.cli import main
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_solver_failure_exits_3(cli):
    code, out = cli("simulate", {"n": 3, "a": 1.5, "solver": "contraction", "steps": 10})
    assert code == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "solver_failure"
    assert man["diagnostics"]["error"] == "ContractionNotApplicable"


def test_stability_failure_exits_3(cli):
    code, _ = cli("simulate", {"n": 3, "a": 2.0, "steps": 10, "epsilon": 0.1})
    assert code == 3


def test_nonconvergence_exits_3(cli):
    code, out = cli("mv-solve", {"a": -0.5, "steps": 20, "ensemble": 50, "tol": 1e-300})
    assert code == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["diagnostics"]["residual"] > 0


def test_run_takes_experiment_from_config(cli):
    code, out = cli("run", dict(SMALL_CONFIGS["check-s"], experiment="check-s"))
    assert code == 0 and (out / "report.json").exists()


@pytest.mark.parametrize("command", sorted(SMALL_CONFIGS))
def test_every_subcommand_runs(cli, command):
    code, out = cli(command, SMALL_CONFIGS[command])
    assert code == 0
    assert (out / "metrics.csv").exists() and (out / "manifest.json").exists()


def test_thread_count_does_not_change_output(cli):
    data = SMALL_CONFIGS["chaos-sweep"]
    _, one = cli("chaos-sweep", data, out="t1", threads=1)
    _, many = cli("chaos-sweep", data, out="t8", threads=8)
    for name in ("metrics.csv", "report.json"):
        assert (one / name).read_bytes() == (many / name).read_bytes()


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 3, "a": 0.5}))
    res = subprocess.run([sys.executable, "-m", "rbmlab", "check-s", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads((tmp_path / "o" / "report.json").read_text())["completely_s"] is True
