import json

import pytest

from rbmlab.cli import main

# Small configs, one per subcommand, shared by the CLI and determinism tests.
SMALL_CONFIGS = {
    "check-s": {"n": 4, "a": -1.0},
    "simulate": {"n": 8, "a": 0.5, "steps": 200, "seed": 3,
                 "mu0": {"kind": "exponential", "value": 2.0}},
    "mv-solve": {"a": 0.5, "steps": 200, "ensemble": 2000, "seed": 1},
    "penalty-sweep": {"n": 4, "a": 0.5, "epsilon_list": [0.2, 0.1], "replications": 4,
                      "ensemble": 50},
    "chaos-sweep": {"a": 0.5, "n_list": [4, 16], "replications": 12, "steps": 50,
                    "ensemble": 1000},
    "coupling-sweep": {"a": 0.2, "n_list": [4, 16], "quench_n": [8], "replications": 10,
                       "steps": 50, "ensemble": 1000,
                       "rho": {"family": "uniform", "half_width": 0.3, "eps_rho": 0.1}},
    "bounds-audit": {"replications": 10, "steps": 50},
    "jackson-map": {"routing": [[0, 0.5, 0.2], [0.1, 0, 0.3], [0.4, 0.4, 0]]},
}


def write_config(tmp_path, name, data):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(data))
    return str(path)


def run_cli(tmp_path, command, data, out="out", threads=1):
    cfg = write_config(tmp_path, f"cfg-{command}-{out}", data)
    out_dir = tmp_path / out
    code = main([command, "--config", cfg, "--out", str(out_dir), "--threads", str(threads)])
    return code, out_dir


@pytest.fixture
def cli(tmp_path):
    def _run(command, data, out="out", threads=1):
        return run_cli(tmp_path, command, data, out, threads)
    return _run


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
