"""Time grids, sampled paths and Brownian ensembles.

All randomness in the package is drawn from counter-based Philox streams
keyed by ``(seed, particle)``; within a stream the j-th draw always belongs
to step j.  Growing an ensemble in ``n`` or extending a horizon therefore
never perturbs paths that were already generated.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Stream tags occupy the top word of the Philox counter, so streams with
# different tags are 2**192 draws apart and never overlap.
TAG_NOISE = 0
TAG_INITIAL = 1
TAG_ENVIRONMENT = 2

_UINT64 = (1 << 64) - 1


def _as_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return int(seed) & _UINT64


def stream(seed: int, index: int, tag: int = TAG_NOISE) -> np.random.Generator:
    """Generator for the counter-based stream keyed by ``(seed, index, tag)``."""
    key = np.array([_as_seed(seed), int(index) & _UINT64], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(base: int, index: int) -> int:
    """Seed for replicate ``index``; replicate 0 reuses ``base`` unchanged."""
    if index == 0:
        return _as_seed(base)
    ss = np.random.SeedSequence(entropy=_as_seed(base), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class NoiseStream:
    """Sequential standard normals for a block of particles.

    Each particle owns one Philox stream; ``draw(k)`` returns the next ``k``
    steps for every particle, so a long horizon can be consumed block by
    block with output identical to a single full-length draw.
    """

    def __init__(self, seed: int, particles: Iterable[int], tag: int = TAG_NOISE):
        self.seed = _as_seed(seed)
        self.particles = list(particles)
        self._gens = [stream(self.seed, i, tag) for i in self.particles]

    def draw(self, k: int) -> np.ndarray:
        out = np.empty((len(self._gens), k))
        for row, g in enumerate(self._gens):
            g.standard_normal(out=out[row])
        return out


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"step count M must be an integer >= 1, got {self.M}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M", int(self.M))

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.M + 1) * self.dt
        t[-1] = self.T
        return t

    def index(self, t: float) -> int:
        """Grid index of time ``t``; rejects off-grid or out-of-range times."""
        k = round(t / self.dt)
        if not 0 <= k <= self.M or abs(k * self.dt - t) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"t={t} is not a point of the grid (T={self.T}, M={self.M})")
        return int(k)

    def steps(self, delta: float) -> int:
        """Number of grid steps spanned by ``delta`` (must be a multiple of dt)."""
        d = round(delta / self.dt)
        if abs(d * self.dt - delta) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"delta={delta} is not a multiple of dt={self.dt}")
        return int(d)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.M * factor)


def make_grid(T: float, M: int) -> TimeGrid:
    return TimeGrid(T, M)


@dataclass(frozen=True, eq=False)
class Path:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.M + 1,):
            raise ValueError(f"path needs {self.grid.M + 1} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]

    def at(self, t: float) -> float:
        return float(self.values[self.grid.index(t)])

    def to_csv(self, dest=None) -> str | None:
        """Write ``t,value`` rows with 17 significant digits."""
        rows = ["t,value"]
        rows += [f"{fmt(t)},{fmt(v)}" for t, v in zip(self.grid.times, self.values)]
        return write_text("\n".join(rows) + "\n", dest)


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_text(text: str, dest=None) -> str | None:
    if dest is None:
        return text
    if isinstance(dest, io.TextIOBase):
        dest.write(text)
        return None
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return None


@dataclass(frozen=True, eq=False)
class BrownianEnsemble:
    """``n`` independent (b, sigma)-Brownian paths started at 0."""

    grid: TimeGrid
    n: int
    b: float
    sigma: float
    seed: int
    values: np.ndarray = field(repr=False)
    first_particle: int = 0

    def __post_init__(self):
        self.values.flags.writeable = False

    @property
    def paths(self) -> list[Path]:
        return [Path(self.grid, row) for row in self.values]

    def path(self, i: int) -> Path:
        return Path(self.grid, self.values[i])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def coarsen(self, factor: int) -> "BrownianEnsemble":
        """Same paths observed on every ``factor``-th grid point."""
        if self.grid.M % factor:
            raise ValueError(f"factor {factor} does not divide M={self.grid.M}")
        grid = TimeGrid(self.grid.T, self.grid.M // factor)
        return BrownianEnsemble(grid, self.n, self.b, self.sigma, self.seed,
                                self.values[:, ::factor].copy(), self.first_particle)


def brownian_increments(dt: float, normals: np.ndarray, b: float, sigma: float) -> np.ndarray:
    """Map standard normals to (b, sigma)-BM increments over steps of length ``dt``."""
    return b * dt + (sigma * math.sqrt(dt)) * normals


def brownian_values(dt: float, normals: np.ndarray, b: float, sigma: float) -> np.ndarray:
    """Paths started at 0 from an (n, k) block of standard normals; shape (n, k + 1)."""
    n, k = normals.shape
    out = np.zeros((n, k + 1))
    np.cumsum(normals * (sigma * math.sqrt(dt)), axis=1, out=out[:, 1:])
    if b:
        out[:, 1:] += b * (np.arange(1, k + 1) * dt)
    return out


def sample_brownian(grid: TimeGrid, n: int, b: float, sigma: float, seed: int,
                    first_particle: int = 0) -> BrownianEnsemble:
    """Particles ``first_particle .. first_particle + n - 1`` of the seed's ensemble."""
    if not sigma > 0:
        raise ValueError(f"volatility sigma must be positive, got {sigma}")
    if n < 1:
        raise ValueError(f"particle count must be >= 1, got {n}")
    z = NoiseStream(seed, range(first_particle, first_particle + n)).draw(grid.M)
    values = brownian_values(grid.dt, z, b, sigma)
    return BrownianEnsemble(grid, n, float(b), float(sigma), _as_seed(seed), values,
                            first_particle)


def sup_norm(f: Path, t: float | None = None) -> float:
    """``max |f(t_k)|`` over grid points up to ``t`` (default: the horizon)."""
    k = f.grid.M if t is None else f.grid.index(t)
    return float(np.max(np.abs(f.values[: k + 1])))


def modulus_values(values: np.ndarray, d: int) -> np.ndarray:
    """Modulus of continuity over windows of ``d`` steps along the last axis."""
    values = np.asarray(values, dtype=float)
    K = values.shape[-1]
    if d <= 0:
        return np.zeros(values.shape[:-1])
    width = min(d + 1, K)
    win = np.lib.stride_tricks.sliding_window_view(values, width, axis=-1)
    return (win.max(axis=-1) - win.min(axis=-1)).max(axis=-1)


def modulus(f: Path, t: float, delta: float) -> float:
    """``max |f(t_j) - f(t_k)|`` over grid pairs within ``delta``, both ``<= t``."""
    k = f.grid.index(t)
    if not 0 < delta:
        raise ValueError(f"delta must be positive, got {delta}")
    if delta > t + 1e-12 * max(f.grid.T, 1.0):
        raise ValueError(f"delta={delta} exceeds t={t}")
    d = f.grid.steps(delta)
    return float(modulus_values(f.values[: k + 1], d))


def mean_all(v: Sequence[float]) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("mean of an empty vector")
    return float(v.mean())


def mean_exclude(v: Sequence[float], i: int) -> float:
    """Average over all entries except index ``i``."""
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        raise ValueError("mean_exclude needs at least two entries")
    if not -v.size <= i < v.size:
        raise IndexError(f"index {i} out of range for length {v.size}")
    return float((v.sum() - v[i]) / (v.size - 1))
