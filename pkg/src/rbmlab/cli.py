"""Command-line runner: ``rbmlab <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pydantic
import scipy

from . import __version__
from . import experiments as ex
from .config import EXPERIMENTS, Config
from .environment import reflection_to_routing, routing_to_reflection
from .paths import TimeGrid, fmt
from .srbm import ReflectionSpec, SolverError, StabilityError, is_completely_s, spectral_radius_abs

log = logging.getLogger("rbmlab")

DEFAULT_STEPS = {"simulate": 1000, "mv-solve": 10_000, "chaos-sweep": 200,
                 "coupling-sweep": 200, "bounds-audit": 200}


class ConfigError(ValueError):
    pass


def _clean(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def metrics_csv(rows) -> str:
    lines = ["metric,n,a,t,value,stderr"]
    lines += [f"{r.metric},{r.n},{fmt(r.a)},{fmt(r.t)},{fmt(r.value)},{fmt(r.stderr)}"
              for r in rows]
    return "\n".join(lines) + "\n"


def matrix_csv(named: dict[str, np.ndarray]) -> str:
    names = list(named)
    n = named[names[0]].shape[0]
    lines = ["i,j," + ",".join(names)]
    for i in range(n):
        for j in range(n):
            lines.append(f"{i},{j}," + ",".join(fmt(named[k][i, j]) for k in names))
    return "\n".join(lines) + "\n"


def execute(cfg: Config, pool=None) -> tuple[dict[str, str], dict]:
    """Run one experiment; returns ``(artifacts, report)`` with artifact texts by filename."""
    e = cfg.experiment
    mu0 = cfg.mu0.law()
    steps = cfg.steps or DEFAULT_STEPS.get(e, 1000)
    tol = cfg.tol
    arts: dict[str, str] = {}

    if e == "check-s":
        out = ex.check_s(cfg.n, cfg.a, cfg.R)
    elif e == "simulate":
        out, sol = ex.simulate(cfg.n, cfg.a, TimeGrid(cfg.T, steps), mu0, cfg.seed, cfg.b,
                               cfg.sigma, cfg.solver, cfg.epsilon or 0.1, tol or 1e-10,
                               cfg.rho.model_dump() if cfg.rho else None)
        arts["solution.csv"] = sol.to_csv()
    elif e == "mv-solve":
        out, mv = ex.mv_solve(cfg.a, TimeGrid(cfg.T, steps), mu0, cfg.seed, cfg.b, cfg.sigma,
                              cfg.ensemble or 10_000, tol or 1e-6, cfg.damping, cfg.epsilon)
        arts["lambda.csv"] = mv.to_csv()
    elif e == "penalty-sweep":
        out = ex.penalty_sweep(cfg.n or 16, cfg.a, cfg.epsilon_list or (0.1, 0.03, 0.01),
                               cfg.replications or 100, cfg.T, mu0, cfg.seed, cfg.b, cfg.sigma,
                               tol or 1e-10, cfg.ensemble, pool=pool)
    elif e == "chaos-sweep":
        out = ex.chaos_sweep(cfg.a, cfg.n_list or (8, 64, 512), cfg.replications or 200, cfg.T,
                             steps, mu0, cfg.seed, cfg.b, cfg.sigma, cfg.ensemble or 20_000,
                             tol or 1e-10, cfg.pair_budget, cfg.solver, cfg.epsilon or 0.1,
                             pool=pool)
    elif e == "coupling-sweep":
        r = cfg.rho
        out = ex.coupling_sweep(cfg.a, r.half_width, r.eps_rho, r.family,
                                cfg.n_list or (8, 64, 512), cfg.replications or 100, cfg.T,
                                steps, mu0, cfg.seed, r.env_seed, cfg.b, cfg.sigma,
                                cfg.quench_n, cfg.ensemble or 20_000, tol or 1e-10, pool=pool)
    elif e == "bounds-audit":
        out = ex.bounds_audit(cfg.replications or 100, cfg.a_list or (-0.9, -0.5, 0.0, 0.5, 2.0),
                              cfg.seed, cfg.T, steps, cfg.epsilon or 0.1, tol or 1e-10, pool=pool)
    elif e == "jackson-map":
        if cfg.routing is not None:
            P = np.asarray(cfg.routing, dtype=float)
            rho = routing_to_reflection(P)
        else:
            rho = np.asarray(cfg.reflection, dtype=float)
            P = reflection_to_routing(rho)
        spec = ReflectionSpec.from_rho(rho)
        arts["matrix.csv"] = matrix_csv({"P": P, "rho": rho, "R": spec.matrix()})
        out = ex.Outcome()
        rate = spectral_radius_abs(spec)
        cs = is_completely_s(spec) if spec.n <= 20 else None
        out.add("spectral_radius_abs", spec.n, float("nan"), 0.0, rate)
        out.report = {"n": spec.n, "spectral_radius_abs": rate, "completely_s": cs,
                      "contraction_available": rate < 1}
    else:  # pragma: no cover - the schema rejects unknown names
        raise ConfigError(f"unknown experiment {e!r}")

    arts["metrics.csv"] = metrics_csv(out.rows)
    arts["report.json"] = dump_json(out.report)
    return arts, out.report


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def manifest(cfg: Config, arts: dict[str, str], status: str, diagnostics=None) -> dict:
    return {
        "experiment": cfg.experiment,
        "status": status,
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.digest(),
        "seeds": {"noise_seed": cfg.seed, "env_seed": cfg.rho.env_seed if cfg.rho else None},
        "versions": {"rbmlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "pydantic": pydantic.VERSION, "python": platform.python_version()},
        "artifacts": [{"file": k, "sha256": _sha(v), "rows": v.count("\n") - 1}
                      for k, v in sorted(arts.items())],
        "diagnostics": diagnostics,
    }


def write_artifacts(out_dir: str, arts: dict[str, str]):
    os.makedirs(out_dir, exist_ok=True)
    for name, text in arts.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbmlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("run",) + EXPERIMENTS,
                   help="experiment to run; 'run' takes it from the config")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    p.add_argument("--verbose", action="store_true")
    return p


def _load(path: str, command: str) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if command != "run":
        if data.setdefault("experiment", command) != command:
            raise ConfigError(f"config names experiment {data['experiment']!r}, "
                              f"command line says {command!r}")
    try:
        return Config.model_validate(data)
    except pydantic.ValidationError as err:
        raise ConfigError(str(err)) from err


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args.config, args.command)
    except ConfigError as err:
        print(f"rbmlab: invalid config: {err}", file=sys.stderr)
        return 2
    out_dir = args.out or cfg.out_dir or "."
    if args.threads < 1:
        print("rbmlab: --threads must be >= 1", file=sys.stderr)
        return 2
    log.info("running %s (config %s)", cfg.experiment, cfg.digest()[:12])

    pool = ThreadPoolExecutor(args.threads) if args.threads > 1 else None
    try:
        arts, _ = execute(cfg, pool)
    except (SolverError, StabilityError) as err:
        write_artifacts(out_dir, {"manifest.json": dump_json(
            manifest(cfg, {}, "solver_failure",
                     {"error": type(err).__name__, "message": str(err),
                      "residual": getattr(err, "residual", None)}))})
        print(f"rbmlab: solver failure: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"rbmlab: invalid config: {err}", file=sys.stderr)
        return 2
    finally:
        if pool is not None:
            pool.shutdown()
    arts["manifest.json"] = dump_json(manifest(cfg, arts, "ok"))
    write_artifacts(out_dir, arts)
    log.info("wrote %d artifacts to %s", len(arts), out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
