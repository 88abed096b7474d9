"""Random reflection coefficients and the coupled random/deterministic runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .laws import InitialLaw
from .paths import TAG_ENVIRONMENT, TimeGrid, derive_seed, sample_brownian, stream, write_text
from .srbm import DEFAULT_TOL, ReflectionSpec, SrbmSolution, solve_srbm_contraction

FAMILIES = ("uniform", "two-point", "truncated-gaussian")
INLINE_MATRIX_MAX_N = 64


@dataclass(frozen=True, eq=False)
class EnvironmentDraw:
    n: int
    rho: np.ndarray = field(repr=False)
    eps_rho: float
    a: float
    half_width: float
    family: str
    env_seed: int

    def __post_init__(self):
        self.rho.flags.writeable = False

    def spec(self) -> ReflectionSpec:
        """Reflection for this draw; a constant draw gives the homogeneous spec."""
        off = self.rho[~np.eye(self.n, dtype=bool)]
        if np.all(off == off[0]):
            return ReflectionSpec(self.n, a=float(off[0]))
        return ReflectionSpec.from_rho(self.rho)

    def max_abs(self) -> float:
        off = ~np.eye(self.n, dtype=bool)
        return float(np.max(np.abs(self.rho[off]))) if self.n > 1 else 0.0

    def summary(self) -> dict:
        out = {"n": self.n, "family": self.family, "a": self.a, "half_width": self.half_width,
               "eps_rho": self.eps_rho, "env_seed": int(self.env_seed)}
        if self.n <= INLINE_MATRIX_MAX_N:
            out["rho"] = self.rho.tolist()
        return out

    def to_json(self, dest=None) -> str | None:
        return write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", dest)

    @classmethod
    def from_json(cls, text: str) -> "EnvironmentDraw":
        d = json.loads(text)
        draw = sample_environment(d["n"], d["a"], d["eps_rho"], d["family"],
                                  d["env_seed"], d["half_width"])
        if "rho" in d and not np.array_equal(np.asarray(d["rho"]), draw.rho):
            raise ValueError("stored matrix does not match its regenerated draw")
        return draw


def _row_values(g: np.random.Generator, family: str, a: float, h: float, k: int) -> np.ndarray:
    if h == 0:
        return np.full(k, a)
    if family == "uniform":
        return g.uniform(a - h, a + h, size=k)
    if family == "two-point":
        return np.where(g.random(k) < 0.5, a - h, a + h)
    # Gaussian with sd h/2 truncated symmetrically to [a-h, a+h]; the mean stays a.
    out = np.empty(k)
    filled = 0
    while filled < k:
        z = g.standard_normal(2 * (k - filled) + 8)
        z = z[np.abs(z) <= 2.0][: k - filled]
        out[filled: filled + len(z)] = a + 0.5 * h * z
        filled += len(z)
    return out


def sample_environment(n: int, a: float, eps_rho: float = 0.1, family: str = "uniform",
                       env_seed: int = 0, half_width: float = 0.0) -> EnvironmentDraw:
    """Draw i.i.d. coefficients with mean ``a`` and support ``[a - h, a + h]``.

    Row i comes from its own stream keyed by ``(env_seed, i)``.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    if n < 2:
        raise ValueError(f"environment needs n >= 2, got {n}")
    if not 0 < eps_rho < 1:
        raise ValueError(f"margin eps_rho must lie in (0, 1), got {eps_rho}")
    if half_width < 0:
        raise ValueError("half_width must be nonnegative")
    bound = 1 - eps_rho
    if a - half_width < -bound - 1e-12 or a + half_width > bound + 1e-12:
        raise ValueError(f"support [{a - half_width}, {a + half_width}] leaves "
                         f"[-{bound}, {bound}]")
    rho = np.zeros((n, n))
    for i in range(n):
        g = stream(env_seed, i, TAG_ENVIRONMENT)
        row = np.clip(_row_values(g, family, a, half_width, n - 1), -bound, bound)
        rho[i, :i] = row[:i]
        rho[i, i + 1:] = row[i:]
    return EnvironmentDraw(n, rho, float(eps_rho), float(a), float(half_width), family,
                           int(env_seed))


@dataclass(frozen=True, eq=False)
class CouplingResult:
    hat: SrbmSolution
    det: SrbmSolution
    dX: np.ndarray = field(repr=False)
    dL: np.ndarray = field(repr=False)

    @property
    def max_dX(self) -> float:
        return float(self.dX.max())

    @property
    def max_dL(self) -> float:
        return float(self.dL.max())

    def report(self) -> dict:
        return {"max_dX": self.max_dX, "max_dL": self.max_dL,
                "dX": self.dX.tolist(), "dL": self.dL.tolist()}


def coupled_run(env: EnvironmentDraw, grid: TimeGrid, mu0: InitialLaw | None = None,
                b: float = 0.0, sigma: float = 1.0, noise_seed: int = 0,
                tol: float = DEFAULT_TOL) -> CouplingResult:
    """Random-reflection system and its mean-coefficient twin on one driver.

    ``dX[i]`` and ``dL[i]`` are the sup-norms over the grid of the particle-i
    differences.
    """
    mu0 = mu0 or InitialLaw.point(0.0)
    W = sample_brownian(grid, env.n, b, sigma, noise_seed)
    z = W.values + mu0.sample(noise_seed, env.n)[:, None]
    meta = {"noise_seed": int(noise_seed), "env_seed": int(env.env_seed)}
    hat = solve_srbm_contraction(z, env.spec(), tol, grid=grid, meta=meta)
    det = solve_srbm_contraction(z, ReflectionSpec(env.n, a=env.a), tol, grid=grid, meta=meta)
    dX = np.max(np.abs(hat.X - det.X), axis=1)
    dL = np.max(np.abs(hat.L - det.L), axis=1)
    return CouplingResult(hat, det, dX, dL)


def _solve(env: EnvironmentDraw, grid, mu0, b, sigma, noise_seed, tol) -> SrbmSolution:
    W = sample_brownian(grid, env.n, b, sigma, noise_seed)
    z = W.values + mu0.sample(noise_seed, env.n)[:, None]
    return solve_srbm_contraction(z, env.spec(), tol, grid=grid,
                                  meta={"noise_seed": int(noise_seed),
                                        "env_seed": int(env.env_seed)})


def quenched_replicates(env: EnvironmentDraw, r: int, noise_seed: int, grid: TimeGrid,
                        mu0: InitialLaw | None = None, b: float = 0.0, sigma: float = 1.0,
                        tol: float = DEFAULT_TOL, pool=None) -> list[SrbmSolution]:
    """One fixed environment, ``r`` independent noise draws."""
    if r < 1:
        raise ValueError("need at least one replicate")
    mu0 = mu0 or InitialLaw.point(0.0)

    def one(j):
        return _solve(env, grid, mu0, b, sigma, derive_seed(noise_seed, j), tol)
    return _map(one, range(r), pool)


def annealed_replicates(r: int, n: int, a: float, env_seed: int, noise_seed: int,
                        grid: TimeGrid, eps_rho: float = 0.1, family: str = "uniform",
                        half_width: float = 0.0, mu0: InitialLaw | None = None,
                        b: float = 0.0, sigma: float = 1.0, tol: float = DEFAULT_TOL,
                        pool=None) -> list[SrbmSolution]:
    """``r`` independent (environment, noise) pairs."""
    if r < 1:
        raise ValueError("need at least one replicate")
    mu0 = mu0 or InitialLaw.point(0.0)

    def one(j):
        env = sample_environment(n, a, eps_rho, family, derive_seed(env_seed, j), half_width)
        return _solve(env, grid, mu0, b, sigma, derive_seed(noise_seed, j), tol)
    return _map(one, range(r), pool)


def _map(fn, items, pool):
    items = list(items)
    if pool is None:
        return [fn(j) for j in items]
    return list(pool.map(fn, items))


def routing_to_reflection(P) -> np.ndarray:
    """``rho_ij = -(n - 1) P_ji`` for a substochastic routing matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("routing matrix must be square")
    n = P.shape[0]
    if n < 2:
        raise ValueError("routing needs at least two stations")
    if np.any(P < 0) or np.any(np.diag(P) != 0):
        raise ValueError("routing matrix needs nonnegative entries and zero diagonal")
    if np.any(P.sum(axis=1) > 1 + 1e-12):
        raise ValueError("routing matrix rows must sum to at most 1")
    rho = -(n - 1) * P.T
    np.fill_diagonal(rho, 0.0)
    return rho + 0.0


def reflection_to_routing(rho) -> np.ndarray:
    """Inverse of ``routing_to_reflection``; needs nonpositive coefficients."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("coefficient matrix must be square")
    n = rho.shape[0]
    if n < 2:
        raise ValueError("routing needs at least two stations")
    off = ~np.eye(n, dtype=bool)
    if np.any(rho[off] > 0):
        raise ValueError("positive coefficients have no routing interpretation")
    P = -rho.T / (n - 1)
    np.fill_diagonal(P, 0.0)
    if np.any(P.sum(axis=1) > 1 + 1e-12):
        raise ValueError("coefficients imply routing rows summing above 1")
    return P + 0.0
