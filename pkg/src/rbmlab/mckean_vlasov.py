"""The nonlinear reflected BM and its penalized counterpart.

``solve_nlr`` finds the deterministic curve ``lambda`` with
``lambda(t) = E Lbar(t)`` by Picard iteration over one frozen Monte Carlo
ensemble.  Given ``lambda``, each member solves a 1D Skorohod problem with
driver ``X0 + W + a * lambda``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .laws import InitialLaw
from .paths import (TAG_INITIAL, NoiseStream, Path, TimeGrid, brownian_increments,
                    brownian_values, fmt, stream, write_text)
from .skorohod import reflect_values
from .srbm import NonConvergence, check_stability, penalty_euler

CHUNK = 2048
MATERIALIZE_LIMIT = 25_000_000
EULER_BLOCK = 2000


def default_damping(a: float) -> float:
    if a < 0:
        return 0.5
    if a < 1:
        return 1.0
    return 1.0 / (1.0 + a)


class FrozenEnsemble:
    """Drivers ``X0_m + W_m`` for members ``0..m-1``, chunked by ``CHUNK``.

    Small ensembles are kept in memory; large ones are regenerated from their
    counter-based streams on every pass, which yields identical values.
    """

    def __init__(self, m: int, grid: TimeGrid, b: float, sigma: float,
                 mu0: InitialLaw, seed: int):
        if m < 1:
            raise ValueError(f"ensemble size must be >= 1, got {m}")
        if not sigma > 0:
            raise ValueError(f"volatility sigma must be positive, got {sigma}")
        self.m, self.grid, self.b, self.sigma, self.mu0, self.seed = m, grid, b, sigma, mu0, seed
        self.x0 = mu0.sample(seed, m)
        self._cache = None
        if m * (grid.M + 1) <= MATERIALIZE_LIMIT:
            self._cache = [self._make(lo, hi) for lo, hi in self.bounds()]

    @property
    def stored(self) -> bool:
        return self._cache is not None

    def bounds(self):
        return [(lo, min(lo + CHUNK, self.m)) for lo in range(0, self.m, CHUNK)]

    def _make(self, lo: int, hi: int) -> np.ndarray:
        z = NoiseStream(self.seed, range(lo, hi)).draw(self.grid.M)
        Z = brownian_values(self.grid.dt, z, self.b, self.sigma)
        Z += self.x0[lo:hi, None]
        return Z

    def chunks(self):
        for j, (lo, hi) in enumerate(self.bounds()):
            yield lo, hi, (self._cache[j] if self._cache is not None else self._make(lo, hi))


@dataclass(frozen=True, eq=False)
class MvSolution:
    grid: TimeGrid
    lam: np.ndarray = field(repr=False)
    a: float
    b: float
    sigma: float
    mu0: InitialLaw
    m: int
    seed: int
    picard_iterations: int
    picard_residual: float
    history: tuple = ()
    damping: float | None = None
    method: str = "picard"
    epsilon: float | None = None
    X_T: np.ndarray = field(default=None, repr=False)
    L_T: np.ndarray = field(default=None, repr=False)
    _source: FrozenEnsemble | None = field(default=None, repr=False)
    _paths: tuple | None = field(default=None, repr=False)

    @property
    def approximate(self) -> bool:
        return self.method == "penalty"

    @property
    def lambda_path(self) -> Path:
        return Path(self.grid, self.lam)

    @property
    def has_paths(self) -> bool:
        return self._paths is not None or self._source is not None

    def paths(self) -> tuple[np.ndarray, np.ndarray]:
        """Full ensemble ``(Xbar, Lbar)``, each of shape (m, M + 1)."""
        if self._paths is not None:
            return self._paths
        if self._source is None:
            raise ValueError("ensemble paths were not stored for this solution")
        X = np.empty((self.m, self.grid.M + 1))
        L = np.empty_like(X)
        for lo, hi, Z in self._source.chunks():
            X[lo:hi], L[lo:hi] = reflect_values(Z + self.a * self.lam)
        return X, L

    def marginal(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Ensemble values ``(Xbar(t), Lbar(t))`` at grid time ``t``."""
        k = self.grid.index(t)
        if k == self.grid.M:
            return self.X_T, self.L_T
        if self._paths is not None:
            return self._paths[0][:, k].copy(), self._paths[1][:, k].copy()
        if self._source is None:
            raise ValueError("only the terminal marginal was stored for this solution")
        x = np.empty(self.m)
        l = np.empty(self.m)
        shift = self.a * self.lam[: k + 1]
        for lo, hi, Z in self._source.chunks():
            xs, ls = reflect_values(Z[:, : k + 1] + shift)
            x[lo:hi], l[lo:hi] = xs[:, -1], ls[:, -1]
        return x, l

    def lambda_stderr(self, t: float | None = None) -> float:
        """Monte Carlo standard error of the ensemble mean of ``Lbar(t)``."""
        _, l = self.marginal(self.grid.T if t is None else t)
        if self.m < 2:
            return float("nan")
        return float(np.std(l, ddof=1) / math.sqrt(self.m))

    def to_csv(self, dest=None) -> str | None:
        lines = ["t,lambda"] + [f"{fmt(t)},{fmt(v)}" for t, v in zip(self.grid.times, self.lam)]
        return write_text("\n".join(lines) + "\n", dest)

    def summary(self) -> dict:
        return {
            "method": self.method,
            "approximate": self.approximate,
            "a": self.a, "b": self.b, "sigma": self.sigma,
            "mu0": self.mu0.describe(),
            "ensemble": self.m,
            "seed": int(self.seed),
            "T": self.grid.T, "steps": self.grid.M,
            "epsilon": self.epsilon,
            "damping": self.damping,
            "picard_iterations": self.picard_iterations,
            "picard_residual": self.picard_residual,
            "lambda_T": float(self.lam[-1]),
            "lambda_T_stderr": self.lambda_stderr(),
        }

    def to_json(self, dest=None) -> str | None:
        return write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", dest)


def _picard_map(source: FrozenEnsemble, a: float, lam: np.ndarray):
    """Ensemble mean of the boundary paths for a given curve, plus terminal values."""
    total = np.zeros(source.grid.M + 1)
    x_T = np.empty(source.m)
    l_T = np.empty(source.m)
    shift = a * lam
    for lo, hi, Z in source.chunks():
        X, L = reflect_values(Z + shift)
        total += L.sum(axis=0)
        x_T[lo:hi], l_T[lo:hi] = X[:, -1], L[:, -1]
    return total / source.m, x_T, l_T


def solve_nlr(a: float, b: float = 0.0, sigma: float = 1.0, mu0: InitialLaw | None = None,
              grid: TimeGrid | None = None, m: int = 10_000, tol: float = 1e-6,
              damping: float | None = None, seed: int = 0, max_iter: int = 200,
              lambda0=None) -> MvSolution:
    """Picard iteration for the nonlinear reflected BM.

    Stops once the undamped map moves the curve by at most ``tol`` in
    sup-norm; the returned curve is the last iterate and the ensemble is the
    one it generates, so ``|lambda - mean Lbar| <= tol`` at return.
    """
    if not a > -1:
        raise ValueError(f"a={a} <= -1: the nonlinear RBM breaks down in finite time")
    mu0 = mu0 or InitialLaw.point(0.0)
    grid = grid or TimeGrid(1.0, 1000)
    theta = default_damping(a) if damping is None else float(damping)
    if not 0 < theta <= 1:
        raise ValueError(f"damping must lie in (0, 1], got {theta}")
    source = FrozenEnsemble(m, grid, b, sigma, mu0, seed)

    lam = np.zeros(grid.M + 1) if lambda0 is None else np.array(lambda0, dtype=float)
    if lam.shape != (grid.M + 1,):
        raise ValueError("initial curve does not match the grid")
    history = []
    for it in range(1, max_iter + 1):
        phi, x_T, l_T = _picard_map(source, a, lam)
        resid = float(np.max(np.abs(phi - lam)))
        history.append(resid)
        if resid <= tol:
            break
        lam = (1 - theta) * lam + theta * phi
    else:
        raise NonConvergence(f"Picard iteration did not reach tol={tol:.3g} in {max_iter} "
                             f"steps (residual {history[-1]:.3g})", history[-1], max_iter)
    lam.flags.writeable = False
    return MvSolution(grid, lam, float(a), float(b), float(sigma), mu0, m, seed, it, resid,
                      tuple(history), theta, "picard", None, x_T, l_T, source)


def solve_nlr_penalized(a: float, b: float = 0.0, sigma: float = 1.0,
                        mu0: InitialLaw | None = None, grid: TimeGrid | None = None,
                        m: int = 10_000, eps: float = 0.05, seed: int = 0,
                        store_paths: bool | None = None) -> MvSolution:
    """Euler scheme for the penalized McKean-Vlasov equation.

    The expectation of the penalty is replaced by the ensemble mean, updated
    synchronously after each step.  Noise is consumed in time blocks, so the
    horizon can be long without holding all increments in memory.
    """
    mu0 = mu0 or InitialLaw.point(0.0)
    grid = grid or TimeGrid(1.0, 1000)
    check_stability(grid.dt, eps, grid.T)
    if store_paths is None:
        store_paths = m * (grid.M + 1) <= MATERIALIZE_LIMIT
    noise = NoiseStream(seed, range(m))
    y = mu0.sample(seed, m)
    if np.any(y < 0):
        raise ValueError("initial law produced negative values")
    lam = np.zeros(grid.M + 1)
    lam_state = np.zeros(m)
    if store_paths:
        Ys = np.empty((grid.M + 1, m))
        Ls = np.empty((grid.M + 1, m))
        Ys[0], Ls[0] = y, 0.0

    def couple(pdt):
        return a * pdt.mean(axis=0)

    k = 0
    while k < grid.M:
        width = min(EULER_BLOCK, grid.M - k)
        dW = brownian_increments(grid.dt, noise.draw(width), b, sigma).T
        Yb, Lb = penalty_euler(y, np.ascontiguousarray(dW), eps, grid.dt, couple)
        Lb += lam_state
        lam[k + 1: k + width + 1] = Lb[1:].mean(axis=1)
        if store_paths:
            Ys[k + 1: k + width + 1] = Yb[1:]
            Ls[k + 1: k + width + 1] = Lb[1:]
        y, lam_state = Yb[-1].copy(), Lb[-1].copy()
        k += width
    lam.flags.writeable = False
    paths = (np.ascontiguousarray(Ys.T), np.ascontiguousarray(Ls.T)) if store_paths else None
    return MvSolution(grid, lam, float(a), float(b), float(sigma), mu0, m, seed, 0, 0.0,
                      (), None, "penalty", float(eps), y, lam_state, None, paths)


@dataclass(frozen=True)
class FoldedNormal:
    """Law of ``|N(0, scale**2)|``; a point mass at 0 when ``scale == 0``."""

    scale: float

    @property
    def mean(self) -> float:
        return self.scale * math.sqrt(2 / math.pi)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.scale == 0:
            return (x >= 0).astype(float)
        return np.where(x < 0, 0.0, 2 * norm.cdf(x / self.scale) - 1)

    def quantile(self, p):
        return self.scale * norm.ppf((1 + np.asarray(p, dtype=float)) / 2)

    def sample(self, seed: int, count: int) -> np.ndarray:
        g = stream(seed, 0, TAG_INITIAL + 16)
        return np.abs(g.standard_normal(count)) * self.scale


def analytic_rbm_marginal(t: float, sigma: float, b: float = 0.0) -> FoldedNormal:
    """Closed-form law of reflected BM from 0 at time ``t`` (driftless case only).

    Both ``X(t)`` and ``L(t)`` follow this law when ``a = 0``.
    """
    if b != 0:
        raise ValueError("closed form is only available for zero drift")
    if t < 0 or not sigma > 0:
        raise ValueError("need t >= 0 and sigma > 0")
    return FoldedNormal(sigma * math.sqrt(t))
