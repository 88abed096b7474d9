"""Empirical measures, 1-Wasserstein distances and chaos/bound diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .mckean_vlasov import MvSolution
from .paths import BrownianEnsemble, modulus_values
from .srbm import SrbmSolution


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    t: float
    x: np.ndarray
    l: np.ndarray

    def __len__(self):
        return len(self.x)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.l.tolist()))


def empirical_measure(sol, t: float) -> EmpiricalMeasure:
    """Atoms ``(X_i(t), L_i(t))`` of a particle system or an MV ensemble."""
    if isinstance(sol, MvSolution):
        x, l = sol.marginal(t)
        return EmpiricalMeasure(float(t), np.array(x), np.array(l))
    k = sol.grid.index(t)
    return EmpiricalMeasure(float(t), sol.X[:, k].copy(), sol.L[:, k].copy())


def mean_boundary(sol, t: float) -> float:
    return float(np.mean(empirical_measure(sol, t).l))


def wasserstein1_1d(u: Sequence[float], v: Sequence[float]) -> float:
    """Exact W1 between the empirical measures of two samples on the line.

    Equal sizes use the sorted matching; unequal sizes integrate the gap
    between the two empirical distribution functions.
    """
    u = np.sort(np.asarray(u, dtype=float).ravel())
    v = np.sort(np.asarray(v, dtype=float).ravel())
    if u.size == 0 or v.size == 0:
        raise ValueError("W1 needs nonempty samples")
    if u.size == v.size:
        return float(np.mean(np.abs(u - v)))
    pts = np.concatenate([u, v])
    pts.sort(kind="mergesort")
    Fu = np.searchsorted(u, pts[:-1], side="right") / u.size
    Fv = np.searchsorted(v, pts[:-1], side="right") / v.size
    return float(np.sum(np.abs(Fu - Fv) * np.diff(pts)))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = x - x.mean()
    y = y - y.mean()
    den = math.sqrt(float(x @ x) * float(y @ y))
    return float(x @ y / den) if den > 0 else 0.0


def pair_offsets(n: int, budget: int) -> list[int]:
    """Distinct index offsets in ``1..n//2``, evenly spread, at most ``budget``."""
    top = n // 2
    if top < 1 or budget < 1:
        return []
    if budget >= top:
        return list(range(1, top + 1))
    return sorted({int(round(v)) for v in np.linspace(1, top, budget)})


def pair_correlations(X: np.ndarray, budget: int = 8) -> dict[int, float]:
    """Pearson correlation of ``(X_i, X_{i+k})`` for sampled offsets ``k``.

    ``X`` has shape (replications, n).  Particles are exchangeable, so every
    pair ``(i, i + k mod n)`` of every replication is pooled into one sample.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    return {k: _pearson(X.ravel(), np.roll(X, -k, axis=1).ravel())
            for k in pair_offsets(n, budget)}


@dataclass(frozen=True)
class ChaosReport:
    n: int
    replications: int
    t: float
    w1_x: float
    w1_x_stderr: float
    w1_l: float
    w1_l_stderr: float
    max_corr: float

    def as_dict(self) -> dict:
        return asdict(self)


def _mean_se(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def chaos_gap(sols, mv: MvSolution | None, t: float | None = None, pair_budget: int = 8,
              reference: tuple[np.ndarray, np.ndarray] | None = None) -> ChaosReport:
    """Distance of ``mu^n_t`` from the limit law plus a pair-dependence proxy.

    ``sols`` is one particle-system run or a list of independent replications.
    W1 values are computed per replication and averaged.  The limit law comes
    from ``mv`` or from an explicit ``reference = (x_sample, l_sample)``.
    """
    if isinstance(sols, SrbmSolution):
        sols = [sols]
    sols = list(sols)
    grid = sols[0].grid
    t = grid.T if t is None else t
    k = grid.index(t)
    if reference is None:
        if mv.grid != grid:
            raise ValueError("particle system and MV solution use different grids")
        ref_x, ref_l = mv.marginal(t)
    else:
        ref_x, ref_l = reference
    ref_x, ref_l = np.sort(ref_x), np.sort(ref_l)
    wx = [wasserstein1_1d(s.X[:, k], ref_x) for s in sols]
    wl = [wasserstein1_1d(s.L[:, k], ref_l) for s in sols]
    corr = pair_correlations(np.vstack([s.X[:, k] for s in sols]), pair_budget)
    mx, sx = _mean_se(wx)
    ml, sl = _mean_se(wl)
    return ChaosReport(sols[0].n, len(sols), float(t), mx, sx, ml, sl,
                       max((abs(c) for c in corr.values()), default=float("nan")))


@dataclass(frozen=True)
class BoundReport:
    a: float
    applicable: tuple
    violations: dict
    exact: bool

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)


def pathwise_bound_check(sol: SrbmSolution, W: BrownianEnsemble,
                         deltas: Sequence[int] = (1, 10)) -> BoundReport:
    """Audit the pathwise local-time bounds on a homogeneous-a solution.

    Violations are ``max(lhs - rhs, 0)`` over particles and grid times; for
    the modulus bounds ``deltas`` are window lengths in grid steps.  ``exact``
    is False for penalty runs, whose bounds only hold approximately.
    """
    if sol.spec is None or sol.spec.kind != "homogeneous":
        raise ValueError("bound audit needs a homogeneous reflection")
    a = sol.spec.a
    Wv, L = W.values, sol.L
    if Wv.shape != L.shape:
        raise ValueError("noise and solution shapes differ")
    W_sup = np.maximum.accumulate(np.abs(Wv), axis=1)
    viol: dict[str, float] = {}
    deltas = [d for d in deltas if d <= sol.grid.M]

    def record(name, lhs, rhs):
        viol[name] = max(viol.get(name, 0.0), float(np.max(np.maximum(lhs - rhs, 0.0))))

    if a >= 0:
        record("r1", L, np.maximum.accumulate(np.maximum(-Wv, 0.0), axis=1))
        for d in deltas:
            record("r02", modulus_values(L, d), modulus_values(Wv, d))
    else:
        ca = 1.0 / (1.0 - abs(a))
        mean_W_sup = W_sup.mean(axis=0)
        record("r2", L.mean(axis=0), ca * mean_W_sup)
        record("x1", L, W_sup + 2 * abs(a) * ca * mean_W_sup)
        for d in deltas:
            wW = modulus_values(Wv, d)
            record("x2", modulus_values(L, d), wW + 2 * abs(a) * ca * wW.mean())
    return BoundReport(a, tuple(sorted(viol)), viol, sol.solver == "contraction")


@dataclass(frozen=True)
class MomentTrend:
    ns: tuple
    second_moments: tuple
    stderrs: tuple
    increasing: bool


def second_moment_trend(samples_by_n: dict[int, Sequence[float]], z: float = 3.0) -> MomentTrend:
    """Empirical ``E[L_1(T)^2]`` across n and whether it climbs beyond ``z`` stderr."""
    ns = sorted(samples_by_n)
    m2, se = [], []
    for n in ns:
        sq = np.asarray(samples_by_n[n], dtype=float) ** 2
        mu, s = _mean_se(sq)
        m2.append(mu)
        se.append(s)
    increasing = any(m2[j + 1] - m2[0] > z * math.hypot(se[j + 1], se[0])
                     for j in range(len(ns) - 1))
    return MomentTrend(tuple(ns), tuple(m2), tuple(se), increasing)
