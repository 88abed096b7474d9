"""Batch experiments: the sweeps behind each CLI subcommand.

Every function here is deterministic given its seeds.  Replications can be
fanned out through ``pool`` (anything with an order-preserving ``map``);
results are always reduced in replication order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import (coupled_run, quenched_replicates, sample_environment)
from .laws import InitialLaw
from .mckean_vlasov import analytic_rbm_marginal, solve_nlr, solve_nlr_penalized
from .paths import TimeGrid, derive_seed, sample_brownian, stream
from .srbm import (DEFAULT_TOL, ReflectionSpec, check_stability, is_completely_s,
                   penalty_euler, simulate_particle_system, solve_srbm_contraction,
                   solve_srbm_penalty, spectral_radius_abs)
from .stats import chaos_gap, pathwise_bound_check, second_moment_trend

MV_SEED_INDEX = 1_000_003
TAG_SCENARIO = 3


@dataclass
class Row:
    """One line of the flat metrics table ``metric,n,a,t,value,stderr``."""

    metric: str
    n: int
    a: float
    t: float
    value: float
    stderr: float = float("nan")


@dataclass
class Outcome:
    rows: list[Row] = field(default_factory=list)
    report: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def add(self, *args, **kw):
        self.rows.append(Row(*args, **kw))


def _map(fn, items, pool):
    items = list(items)
    return list(pool.map(fn, items)) if pool is not None else [fn(i) for i in items]


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


# -- check-s ----------------------------------------------------------------

def check_s(n: int | None = None, a: float | None = None, R=None) -> Outcome:
    spec = ReflectionSpec.explicit(R) if R is not None else ReflectionSpec(n, a=a)
    out = Outcome()
    ok = is_completely_s(spec, method="lp") if spec.n <= 20 else is_completely_s(spec)
    rate = spectral_radius_abs(spec)
    a_val = spec.a if spec.a is not None else float("nan")
    out.add("completely_s", spec.n, a_val, 0.0, float(ok))
    out.add("spectral_radius_abs", spec.n, a_val, 0.0, rate)
    out.report = {"completely_s": bool(ok), "spectral_radius_abs": rate,
                  "contraction_available": rate < 1, "reflection": spec.describe()}
    return out


# -- simulate ---------------------------------------------------------------

def simulate(n: int, a: float, grid: TimeGrid, mu0: InitialLaw, seed: int, b: float = 0.0,
             sigma: float = 1.0, solver: str = "auto", epsilon: float = 0.1,
             tol: float = DEFAULT_TOL, rho: dict | None = None) -> tuple[Outcome, object]:
    if rho is not None and n >= 2:
        env = sample_environment(n, a, rho.get("eps_rho", 0.1), rho.get("family", "uniform"),
                                 rho.get("env_seed", 0), rho.get("half_width", 0.0))
        spec = env.spec()
    else:
        spec = ReflectionSpec(n, a=a)
    sol = simulate_particle_system(n, spec, mu0, grid, solver, seed, b, sigma, epsilon, tol)
    out = Outcome()
    T = grid.T
    out.add("lambda_n", n, a, T, float(sol.L[:, -1].mean()))
    out.add("min_X", n, a, T, sol.min_X)
    out.add("max_complementarity_residual", n, a, T, sol.max_complementarity_residual)
    out.report = sol.summary()
    return out, sol


# -- mv-solve ---------------------------------------------------------------

def mv_solve(a: float, grid: TimeGrid, mu0: InitialLaw, seed: int, b: float = 0.0,
             sigma: float = 1.0, m: int = 10_000, tol: float = 1e-6,
             damping: float | None = None, epsilon: float | None = None):
    if epsilon is None:
        mv = solve_nlr(a, b, sigma, mu0, grid, m, tol, damping, seed)
    else:
        mv = solve_nlr_penalized(a, b, sigma, mu0, grid, m, epsilon, seed, store_paths=False)
    out = Outcome()
    out.add("lambda", 1, a, grid.T, float(mv.lam[-1]), mv.lambda_stderr())
    out.report = mv.summary()
    if a == 0 and b == 0 and mu0.kind == "point" and mu0.value == 0:
        out.report["folded_normal_mean"] = analytic_rbm_marginal(grid.T, sigma).mean
    return out, mv


# -- penalty-sweep ----------------------------------------------------------

def penalty_grids(T: float, eps_list) -> tuple[int, dict]:
    """Fine step count and, per eps, the coarsest divisor grid with dt <= eps^2/10."""
    need = {eps: 10 * T / eps**2 for eps in eps_list}
    fine = math.ceil(max(need.values()) * (1 - 1e-12))
    steps = {}
    for eps, lo in need.items():
        steps[eps] = min(d for d in range(1, fine + 1) if fine % d == 0 and d >= lo * (1 - 1e-12))
    return fine, steps


def _penalty_batch(seeds, n, spec, grid_f, steps, eps_list, mu0, b, sigma, tol):
    """Particle-1 sup gaps between penalty and contraction runs for a batch of seeds."""
    Ws = [sample_brownian(grid_f, n, b, sigma, s) for s in seeds]
    x0 = np.stack([mu0.sample(s, n) for s in seeds], axis=1)  # (n, B)
    gaps = {eps: [] for eps in eps_list}
    for eps in eps_list:
        f = grid_f.M // steps[eps]
        coarse = [W.coarsen(f) for W in Ws]
        grid = coarse[0].grid
        check_stability(grid.dt, eps, grid.T)
        dW = np.stack([np.diff(W.values, axis=1) for W in coarse], axis=2)  # (n, M, B)
        Y, _ = penalty_euler(x0, np.ascontiguousarray(dW.transpose(1, 0, 2)), eps,
                             grid.dt, spec.interaction)
        for j, W in enumerate(coarse):
            X = solve_srbm_contraction(W.values + x0[:, j, None], spec, tol, grid=grid).X
            gaps[eps].append(float(np.max(np.abs(Y[:, 0, j] - X[0]))))
        del Y, dW
    return gaps


def penalty_sweep(n: int = 16, a: float = 0.5, eps_list=(0.1, 0.03, 0.01),
                  replications: int = 100, T: float = 1.0, mu0: InitialLaw | None = None,
                  seed: int = 0, b: float = 0.0, sigma: float = 1.0, tol: float = DEFAULT_TOL,
                  mv_ensemble: int | None = None, batch: int = 10, pool=None) -> Outcome:
    """Gap between penalized and reflected dynamics as eps shrinks, on shared noise.

    Particle system: each replication draws noise on the finest grid and
    coarsens it to every eps grid.  MV pair: the penalized ensemble is
    compared member-by-member with the reflected one built from the same
    seed on the same grid.
    """
    mu0 = mu0 or InitialLaw.point(0.0)
    eps_list = sorted(eps_list, reverse=True)
    spec = ReflectionSpec(n, a=a)
    fine, steps = penalty_grids(T, eps_list)
    grid_f = TimeGrid(T, fine)
    seeds = [derive_seed(seed, j) for j in range(replications)]
    batches = [seeds[i:i + batch] for i in range(0, replications, batch)]
    results = _map(lambda s: _penalty_batch(s, n, spec, grid_f, steps, eps_list, mu0, b,
                                            sigma, tol), batches, pool)
    out = Outcome()
    m = mv_ensemble or replications
    table = []
    for eps in eps_list:
        g = [v for r in results for v in r[eps]]
        mean, se = _mean_se(g)
        out.add(f"particle_gap@eps={eps:g}", n, a, T, mean, se)
        grid = TimeGrid(T, steps[eps])
        mv = solve_nlr(a, b, sigma, mu0, grid, m, seed=seed)
        mvp = solve_nlr_penalized(a, b, sigma, mu0, grid, m, eps, seed, store_paths=True)
        Xr, _ = mv.paths()
        Yp, _ = mvp.paths()
        mg, mse = _mean_se(np.max(np.abs(Yp - Xr), axis=1))
        lam_gap = float(np.max(np.abs(mvp.lam - mv.lam)))
        out.add(f"mv_gap@eps={eps:g}", m, a, T, mg, mse)
        out.add(f"mv_lambda_gap@eps={eps:g}", m, a, T, lam_gap)
        table.append({"epsilon": eps, "steps": steps[eps], "particle_gap": mean,
                      "particle_gap_stderr": se, "mv_gap": mg, "mv_gap_stderr": mse,
                      "mv_lambda_gap": lam_gap})
    out.report = {"n": n, "a": a, "replications": replications, "mv_ensemble": m,
                  "fine_steps": fine, "sweep": table}
    return out


# -- chaos-sweep ------------------------------------------------------------

def _is_folded_case(a, b, mu0) -> bool:
    return a == 0 and b == 0 and mu0.kind == "point" and mu0.value == 0


def chaos_sweep(a: float, n_list=(8, 64, 512), replications: int = 200, T: float = 1.0,
                steps: int = 200, mu0: InitialLaw | None = None, seed: int = 0,
                b: float = 0.0, sigma: float = 1.0, mv_ensemble: int = 20_000,
                tol: float = DEFAULT_TOL, pair_budget: int = 8, solver: str = "auto",
                epsilon: float = 0.1, pool=None) -> Outcome:
    """Particle systems of growing size against the McKean-Vlasov limit.

    Replication j of every n uses the same seed, so particles shared between
    sizes see identical noise.  For a = 0 from the origin the limit law is
    the folded normal, represented by its quantiles at ``(k + 1/2) / m``.
    """
    mu0 = mu0 or InitialLaw.point(0.0)
    grid = TimeGrid(T, steps)
    out = Outcome()
    if _is_folded_case(a, b, mu0):
        law = analytic_rbm_marginal(T, sigma)
        q = law.quantile((np.arange(mv_ensemble) + 0.5) / mv_ensemble)
        reference, lam_ref, lam_se = (q, q), law.mean, 0.0
        target = "folded_normal"
    else:
        mv = solve_nlr(a, b, sigma, mu0, grid, mv_ensemble, seed=derive_seed(seed, MV_SEED_INDEX))
        reference = mv.marginal(T)
        lam_ref, lam_se = float(mv.lam[-1]), mv.lambda_stderr()
        target = "mv_ensemble"
    out.add("lambda_limit", mv_ensemble, a, T, lam_ref, lam_se)

    seeds = [derive_seed(seed, j) for j in range(replications)]
    reports, l1 = [], {}
    for n in n_list:
        sols = _map(lambda s: simulate_particle_system(n, a, mu0, grid, solver, s, b, sigma,
                                                       epsilon, tol), seeds, pool)
        rep = chaos_gap(sols, None, T, pair_budget, reference=reference)
        lam_n, lam_n_se = _mean_se([s.L[:, -1].mean() for s in sols])
        l1[n] = [s.L[0, -1] for s in sols]
        out.add("w1_x", n, a, T, rep.w1_x, rep.w1_x_stderr)
        out.add("w1_l", n, a, T, rep.w1_l, rep.w1_l_stderr)
        out.add("max_corr", n, a, T, rep.max_corr)
        out.add("lambda_n", n, a, T, lam_n, lam_n_se)
        reports.append(dict(rep.as_dict(), lambda_n=lam_n, lambda_n_stderr=lam_n_se,
                            solver=sols[0].solver))
    trend = second_moment_trend(l1)
    for n, m2, se in zip(trend.ns, trend.second_moments, trend.stderrs):
        out.add("L1_second_moment", n, a, T, m2, se)
    out.report = {"a": a, "target": target, "lambda_limit": lam_ref, "sweep": reports,
                  "second_moment_increasing": trend.increasing}
    return out


# -- coupling-sweep ---------------------------------------------------------

def coupling_sweep(a: float = 0.2, half_width: float = 0.3, eps_rho: float = 0.1,
                   family: str = "uniform", n_list=(8, 64, 512), replications: int = 100,
                   T: float = 1.0, steps: int = 200, mu0: InitialLaw | None = None,
                   seed: int = 0, env_seed: int = 0, b: float = 0.0, sigma: float = 1.0,
                   quench_n=None, mv_ensemble: int = 20_000, tol: float = DEFAULT_TOL,
                   pool=None) -> Outcome:
    """Random vs mean reflection on shared drivers, plus quenched/annealed lambda.

    Replication j draws its environment from ``derive_seed(env_seed, j)`` and
    its noise from ``derive_seed(seed, j)``, so the random-reflection runs are
    annealed samples.  Quenched runs keep replication 0's environment.
    """
    mu0 = mu0 or InitialLaw.point(0.0)
    grid = TimeGrid(T, steps)
    quench_n = list(n_list) if quench_n is None else list(quench_n)
    out = Outcome()
    mv = solve_nlr(a, b, sigma, mu0, grid, mv_ensemble, seed=derive_seed(seed, MV_SEED_INDEX))
    lam_mv, lam_mv_se = float(mv.lam[-1]), mv.lambda_stderr()
    out.add("lambda_mv", mv_ensemble, a, T, lam_mv, lam_mv_se)
    table = []

    def run(n, j):
        env = sample_environment(n, a, eps_rho, family, derive_seed(env_seed, j), half_width)
        return coupled_run(env, grid, mu0, b, sigma, derive_seed(seed, j), tol)

    for n in sorted(set(n_list) | set(quench_n)):
        res = _map(lambda j: run(n, j), range(replications), pool)
        dL, dL_se = _mean_se([r.max_dL for r in res])
        dX, dX_se = _mean_se([r.max_dX for r in res])
        ann, ann_se = _mean_se([r.hat.L[:, -1].mean() for r in res])
        row = {"n": n, "max_dL": dL, "max_dL_stderr": dL_se, "max_dX": dX,
               "max_dX_stderr": dX_se, "annealed_lambda": ann, "annealed_lambda_stderr": ann_se}
        out.add("coupling_max_dL", n, a, T, dL, dL_se)
        out.add("coupling_max_dX", n, a, T, dX, dX_se)
        out.add("annealed_lambda", n, a, T, ann, ann_se)
        if n in quench_n:
            env = sample_environment(n, a, eps_rho, family, derive_seed(env_seed, 0), half_width)
            qs = quenched_replicates(env, replications, seed, grid, mu0, b, sigma, tol, pool)
            q, q_se = _mean_se([s.L[:, -1].mean() for s in qs])
            out.add("quenched_lambda", n, a, T, q, q_se)
            row.update(quenched_lambda=q, quenched_lambda_stderr=q_se)
        table.append(row)
    out.report = {"a": a, "half_width": half_width, "eps_rho": eps_rho, "family": family,
                  "lambda_mv": lam_mv, "lambda_mv_stderr": lam_mv_se, "sweep": table}
    return out


# -- bounds-audit -----------------------------------------------------------

def _scenario(j: int, seed: int, a_list, T: float, steps: int, epsilon: float):
    g = stream(seed, j, TAG_SCENARIO)
    a = float(a_list[j % len(a_list)])
    n = int(g.integers(2, 33))
    kind = ("point", "uniform", "exponential")[int(g.integers(0, 3))]
    value = {"point": 0.0 if g.random() < 0.5 else float(g.uniform(0, 1)),
             "uniform": float(g.uniform(0.1, 2.0)),
             "exponential": float(g.uniform(0.5, 4.0))}[kind]
    b = float(g.uniform(-1, 1))
    sigma = float(g.uniform(0.5, 2.0))
    penalty = abs(a) >= 1
    M = max(steps, math.ceil(10 * T / epsilon**2)) if penalty else steps
    return dict(j=j, a=a, n=n, mu0=InitialLaw(kind, value), b=b, sigma=sigma, steps=M,
                seed=derive_seed(seed, j), penalty=penalty)


def _audit_one(sc, T, epsilon, tol):
    grid = TimeGrid(T, sc["steps"])
    spec = ReflectionSpec(sc["n"], a=sc["a"])
    W = sample_brownian(grid, sc["n"], sc["b"], sc["sigma"], sc["seed"])
    x0 = sc["mu0"].sample(sc["seed"], sc["n"])
    if sc["penalty"]:
        sol = solve_srbm_penalty(x0, W, spec, epsilon)
    else:
        sol = solve_srbm_contraction(W.values + x0[:, None], spec, tol, grid=grid)
    return pathwise_bound_check(sol, W), sol


def bounds_audit(scenarios: int = 100, a_list=(-0.9, -0.5, 0.0, 0.5, 2.0), seed: int = 0,
                 T: float = 1.0, steps: int = 200, epsilon: float = 0.1,
                 tol: float = DEFAULT_TOL, pool=None) -> Outcome:
    """Randomized audit of the pathwise local-time bounds."""
    scs = [_scenario(j, seed, a_list, T, steps, epsilon) for j in range(scenarios)]
    res = _map(lambda sc: _audit_one(sc, T, epsilon, tol), scs, pool)
    out = Outcome()
    table = []
    worst_exact = 0.0
    for sc, (rep, sol) in zip(scs, res):
        for name in rep.applicable:
            out.add(f"violation_{name}@scenario={sc['j']}", sc["n"], sc["a"], T,
                    rep.violations[name])
        if rep.exact:
            worst_exact = max(worst_exact, rep.max_violation)
        table.append({"scenario": sc["j"], "a": sc["a"], "n": sc["n"], "solver": sol.solver,
                      "exact": rep.exact, "b": sc["b"], "sigma": sc["sigma"],
                      "mu0": sc["mu0"].describe(), "steps": sc["steps"],
                      "violations": rep.violations})
    out.report = {"scenarios": scenarios, "tol": tol, "max_exact_violation": worst_exact,
                  "threshold": 10 * tol, "passed": worst_exact <= 10 * tol, "table": table}
    return out
