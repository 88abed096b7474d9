"""Reflection matrices and path solvers for reflected BM in the orthant.

Two solvers are provided:

* ``solve_srbm_contraction`` iterates the Harrison-Reiman map
  ``L -> sup_{s<=t} [-(z + A L)]^+`` to its fixed point.  It is exact on the
  grid and needs ``rho(|A|) < 1``.
* ``solve_srbm_penalty`` runs an explicit Euler scheme for the penalized
  SDE, where reflection is replaced by the inward drift ``penalty_fn``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .laws import InitialLaw
from .paths import BrownianEnsemble, Path, TimeGrid, fmt, sample_brownian, write_text
from .skorohod import complementarity_values, reflect_values

DEFAULT_TOL = 1e-10
MAX_ITER_CAP = 10_000
S_MARGIN = 1e-9
S_ENUM_MAX_N = 20
AUTO_CONTRACTION_BELOW = 0.999


class SolverError(RuntimeError):
    """Base class for solver failures."""


class ContractionNotApplicable(SolverError):
    pass


class NonConvergence(SolverError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StabilityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReflectionSpec:
    """Reflection matrix ``R = I + A`` with unit diagonal.

    Homogeneous specs carry only ``a`` (off-diagonals ``a / (n - 1)``); explicit
    specs carry the full matrix.
    """

    n: int
    a: float | None = None
    R: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")
        if (self.a is None) == (self.R is None):
            raise ValueError("give exactly one of a (homogeneous) or R (explicit)")
        if self.R is not None:
            R = np.array(self.R, dtype=float)
            if R.ndim != 2 or R.shape[0] != R.shape[1]:
                raise ValueError(f"reflection matrix must be square, got shape {R.shape}")
            if R.shape[0] != self.n:
                raise ValueError(f"matrix is {R.shape[0]}x{R.shape[0]} but n={self.n}")
            if not np.all(np.isfinite(R)):
                raise ValueError("reflection matrix has non-finite entries")
            if not np.array_equal(np.diag(R), np.ones(self.n)):
                raise ValueError("reflection matrix must have unit diagonal")
            R.flags.writeable = False
            object.__setattr__(self, "R", R)
        else:
            object.__setattr__(self, "a", float(self.a))

    @classmethod
    def explicit(cls, R) -> "ReflectionSpec":
        R = np.asarray(R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"reflection matrix must be square, got shape {R.shape}")
        return cls(R.shape[0], R=R)

    @classmethod
    def from_rho(cls, rho) -> "ReflectionSpec":
        """Explicit spec with off-diagonals ``rho_ij / (n - 1)``."""
        rho = np.asarray(rho, dtype=float)
        n = rho.shape[0]
        R = rho / max(n - 1, 1)
        np.fill_diagonal(R, 1.0)
        return cls(n, R=R)

    @property
    def kind(self) -> str:
        return "homogeneous" if self.a is not None else "explicit"

    @property
    def coupling(self) -> float:
        """Off-diagonal entry of a homogeneous spec."""
        return self.a / (self.n - 1) if self.n > 1 else 0.0

    def matrix(self) -> np.ndarray:
        if self.R is not None:
            return self.R.copy()
        R = np.full((self.n, self.n), self.coupling)
        np.fill_diagonal(R, 1.0)
        return R

    def offdiag(self) -> np.ndarray:
        A = self.matrix()
        np.fill_diagonal(A, 0.0)
        return A

    def interaction(self, v: np.ndarray) -> np.ndarray:
        """``A v`` along axis 0 (the particle axis)."""
        if self.R is None:
            if self.n == 1 or self.a == 0:
                return np.zeros_like(v)
            return self.coupling * (v.sum(axis=0) - v)
        return np.tensordot(self.offdiag(), v, axes=(1, 0))

    def describe(self) -> dict:
        if self.R is None:
            return {"kind": "homogeneous", "n": self.n, "a": self.a}
        return {"kind": "explicit", "n": self.n}


def homogeneous_matrix(n: int, a: float) -> ReflectionSpec:
    if n < 2:
        raise ValueError(f"homogeneous reflection needs n >= 2, got {n}")
    return ReflectionSpec(n, a=a)


_margin_cache: dict[tuple, float] = {}


def s_margin(block: np.ndarray) -> float:
    """Largest m with ``block @ x >= m`` for some ``0 <= x <= 1``."""
    block = np.ascontiguousarray(block, dtype=float)
    key = (block.shape, block.tobytes())
    if key in _margin_cache:
        return _margin_cache[key]
    k = block.shape[0]
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-block, np.ones((k, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k),
                  bounds=[(0.0, 1.0)] * k + [(None, None)], method="highs")
    if res.status != 0:
        raise SolverError(f"margin LP failed: {res.message}")
    _margin_cache[key] = float(-res.fun)
    return _margin_cache[key]


def _completely_s_lp(R: np.ndarray) -> bool:
    n = R.shape[0]
    if n > S_ENUM_MAX_N:
        raise ValueError(f"subset enumeration is capped at n <= {S_ENUM_MAX_N}")
    # Largest subsets first: failures in the mean-field case show up at J = [n].
    for size in range(n, 0, -1):
        for J in itertools.combinations(range(n), size):
            if s_margin(R[np.ix_(J, J)]) <= S_MARGIN:
                return False
    return True


def is_completely_s(spec, method: str = "auto") -> bool:
    """Decide the completely-S property.

    ``method="lp"`` enumerates principal submatrices and solves a margin LP
    for each.  ``"auto"`` uses the closed criterion ``a > -1`` for homogeneous
    specs (cross-checked by enumeration when n <= 6) and the LP otherwise.
    """
    if not isinstance(spec, ReflectionSpec):
        spec = ReflectionSpec.explicit(spec)
    if method not in ("auto", "lp", "closed"):
        raise ValueError(f"unknown method {method!r}")
    if spec.kind == "homogeneous" and method != "lp" and spec.n >= 2:
        closed = spec.a > -1
        if method == "auto" and spec.n <= 6 and _completely_s_lp(spec.matrix()) != closed:
            raise SolverError(f"LP and closed criterion disagree for n={spec.n}, a={spec.a}")
        return closed
    if method == "closed":
        raise ValueError("closed criterion only exists for homogeneous specs")
    return _completely_s_lp(spec.matrix())


def spectral_radius_abs(spec, rtol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Spectral radius of ``|A|``, ``A = R - I``.

    Homogeneous specs return ``|a|`` (constant row sums).  Otherwise shifted
    power iteration on ``|A| + I`` with Collatz-Wielandt bounds.
    """
    if not isinstance(spec, ReflectionSpec):
        spec = ReflectionSpec.explicit(spec)
    if spec.kind == "homogeneous":
        return abs(spec.a) if spec.n > 1 else 0.0
    B = np.abs(spec.offdiag())
    if not B.any():
        return 0.0
    x = np.ones(spec.n)
    for _ in range(max_iter):
        y = B @ x + x
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= rtol * hi:
            return float(0.5 * (lo + hi) - 1.0)
        x = y / y.max()
        if x.min() <= 0:
            break
    return float(np.max(np.abs(np.linalg.eigvals(B))))


def default_max_iter(rate: float, tol: float) -> int:
    if rate <= 0:
        return 10
    return int(min(MAX_ITER_CAP, max(10, 10 * math.ceil(math.log(tol) / math.log(rate)))))


@dataclass(frozen=True, eq=False)
class SrbmSolution:
    grid: TimeGrid
    X: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    solver: str
    iterations: int
    fixed_point_residual: float | None
    max_complementarity_residual: float
    min_X: float
    spec: ReflectionSpec | None = None
    epsilon: float | None = None
    approximate: bool = False
    gaps: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X.flags.writeable = False
        self.L.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def X_path(self, i: int) -> Path:
        return Path(self.grid, self.X[i])

    def L_path(self, i: int) -> Path:
        return Path(self.grid, self.L[i])

    def to_csv(self, dest=None) -> str | None:
        """Long format ``t,i,X,L``."""
        t = self.grid.times
        lines = ["t,i,X,L"]
        for i in range(self.n):
            lines += [f"{fmt(tk)},{i},{fmt(x)},{fmt(l)}"
                      for tk, x, l in zip(t, self.X[i], self.L[i])]
        return write_text("\n".join(lines) + "\n", dest)

    def summary(self) -> dict:
        out = {
            "solver": self.solver,
            "epsilon": self.epsilon,
            "approximate": self.approximate,
            "n": self.n,
            "T": self.grid.T,
            "steps": self.grid.M,
            "iterations": self.iterations,
            "fixed_point_residual": self.fixed_point_residual,
            "max_complementarity_residual": self.max_complementarity_residual,
            "min_X": self.min_X,
        }
        if self.spec is not None:
            out["reflection"] = self.spec.describe()
        out.update(self.meta)
        return out

    def to_json(self, dest=None) -> str | None:
        return write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", dest)


def _driver_array(z, grid: TimeGrid | None) -> tuple[np.ndarray, TimeGrid]:
    if isinstance(z, BrownianEnsemble):
        return np.array(z.values), z.grid
    if isinstance(z, np.ndarray) and z.ndim == 2:
        if grid is None:
            raise ValueError("pass grid= together with a raw driver array")
        if z.shape[1] != grid.M + 1:
            raise ValueError("driver array does not match the grid")
        return np.asarray(z, dtype=float), grid
    paths = list(z)
    if not paths:
        raise ValueError("empty driver")
    g = paths[0].grid
    if any(p.grid != g for p in paths):
        raise ValueError("driver paths live on different grids")
    return np.vstack([p.values for p in paths]), g


def solve_srbm_contraction(z, spec: ReflectionSpec, tol: float = DEFAULT_TOL,
                           max_iter: int | None = None, grid: TimeGrid | None = None,
                           meta: dict | None = None) -> SrbmSolution:
    """Fixed point of the Harrison-Reiman map for driver ``z`` (n paths)."""
    Z, grid = _driver_array(z, grid)
    if Z.shape[0] != spec.n:
        raise ValueError(f"driver has {Z.shape[0]} components, reflection has n={spec.n}")
    if np.any(Z[:, 0] < 0):
        raise ValueError("driver must start in the orthant")
    rate = spectral_radius_abs(spec)
    if rate >= 1:
        raise ContractionNotApplicable(
            f"spectral radius of |A| is {rate:.6g} >= 1; the contraction map is not "
            "available, use solve_srbm_penalty (solver='penalty') instead")
    if max_iter is None:
        max_iter = default_max_iter(rate, tol)

    L = np.zeros_like(Z)
    gaps: list[float] = []
    for it in range(1, max_iter + 1):
        X, L_new = reflect_values(Z + spec.interaction(L))
        gap = float(np.max(np.abs(L_new - L)))
        gaps.append(gap)
        L = L_new
        if gap <= tol:
            break
    else:
        raise NonConvergence(f"no convergence after {max_iter} iterations "
                             f"(last change {gaps[-1]:.3g} > tol {tol:.3g})",
                             gaps[-1], max_iter)

    # X comes from the last driver, so complementarity and X >= 0 hold exactly;
    # X - (z + R L) is bounded by rho(|A|) * gap.
    resid = complementarity_values(X, L)
    return SrbmSolution(grid, X, L, "contraction", it, gaps[-1],
                        float(np.max(np.abs(resid))), float(X.min()), spec,
                        gaps=tuple(gaps), meta=dict(meta or {}))


def penalty_fn(x, eps: float):
    """Inward penalty: ``1/eps`` below ``-eps``, ``-x/eps**2`` on ``(-eps, 0)``, 0 above."""
    if not eps > 0:
        raise ValueError(f"penalty width eps must be positive, got {eps}")
    p = np.clip(-np.asarray(x, dtype=float) / eps**2, 0.0, 1.0 / eps)
    return float(p) if np.ndim(p) == 0 else p


def check_stability(dt: float, eps: float, T: float | None = None):
    if not eps > 0:
        raise ValueError(f"penalty width eps must be positive, got {eps}")
    limit = eps**2 / 10
    if dt > limit * (1 + 1e-12):
        hint = f"; use at least {math.ceil(T / limit)} steps" if T else ""
        raise StabilityError(f"dt={dt:.3g} exceeds eps^2/10={limit:.3g}{hint}")


def penalty_euler(y0: np.ndarray, dW: np.ndarray, eps: float, dt: float,
                  couple: Callable[[np.ndarray], np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Explicit Euler for ``dY = dW + p(Y) dt + couple(p(Y)) dt``.

    ``dW`` is time-major with shape (M, *state_shape).  Returns time-major
    ``(Y, Lambda)`` of shape (M + 1, *state_shape).
    """
    M = dW.shape[0]
    Y = np.empty((M + 1,) + y0.shape)
    Lam = np.empty_like(Y)
    Y[0] = y0
    Lam[0] = 0.0
    inv_eps, inv_eps2 = 1.0 / eps, 1.0 / eps**2
    p = np.empty(y0.shape)
    for k in range(M):
        np.multiply(Y[k], -inv_eps2, out=p)
        np.clip(p, 0.0, inv_eps, out=p)
        pdt = p * dt
        Y[k + 1] = Y[k] + dW[k] + pdt + couple(pdt)
        Lam[k + 1] = Lam[k] + pdt
    return Y, Lam


def solve_srbm_penalty(X0, W: BrownianEnsemble, spec: ReflectionSpec, eps: float,
                       meta: dict | None = None) -> SrbmSolution:
    """Penalized system driven by ``W`` from initial state ``X0``."""
    x0 = np.broadcast_to(np.asarray(X0, dtype=float), (W.n,)).copy()
    if np.any(x0 < 0):
        raise ValueError("initial state must be nonnegative")
    if W.n != spec.n:
        raise ValueError(f"noise has {W.n} components, reflection has n={spec.n}")
    check_stability(W.grid.dt, eps, W.grid.T)
    Y, Lam = penalty_euler(x0, W.increments.T, eps, W.grid.dt, spec.interaction)
    X, L = np.ascontiguousarray(Y.T), np.ascontiguousarray(Lam.T)
    resid = complementarity_values(X, L)
    return SrbmSolution(W.grid, X, L, "penalty", W.grid.M, None,
                        float(np.max(np.abs(resid))), float(X.min()), spec,
                        epsilon=float(eps), approximate=True, meta=dict(meta or {}))


def simulate_particle_system(n: int, spec, x0_law: InitialLaw, grid: TimeGrid,
                             solver: str = "auto", seed: int = 0, b: float = 0.0,
                             sigma: float = 1.0, epsilon: float = 0.1,
                             tol: float = DEFAULT_TOL) -> SrbmSolution:
    """One run of the n-particle system on driver ``X0 + W``.

    ``spec`` is a ReflectionSpec or the homogeneous parameter ``a``.
    ``solver="auto"`` uses the contraction when rho(|A|) < 0.999 and the
    penalty scheme (flagged approximate) otherwise.
    """
    if not isinstance(spec, ReflectionSpec):
        spec = ReflectionSpec(n, a=float(spec))
    if spec.n != n:
        raise ValueError(f"reflection has n={spec.n}, expected {n}")
    if solver not in ("auto", "contraction", "penalty"):
        raise ValueError(f"unknown solver {solver!r}")
    if solver == "auto":
        solver = "contraction" if spectral_radius_abs(spec) < AUTO_CONTRACTION_BELOW else "penalty"
    W = sample_brownian(grid, n, b, sigma, seed)
    x0 = x0_law.sample(seed, n)
    if np.any(x0 < 0):
        raise ValueError("initial law produced negative values")
    meta = {"seed": int(seed), "b": float(b), "sigma": float(sigma), "mu0": x0_law.describe()}
    if solver == "contraction":
        return solve_srbm_contraction(W.values + x0[:, None], spec, tol, grid=grid, meta=meta)
    return solve_srbm_penalty(x0, W, spec, epsilon, meta=meta)
