"""Initial-condition laws on [0, inf).

Draws are keyed per particle (stream tag ``TAG_INITIAL``), so the initial
value of particle i does not depend on how many particles are sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import TAG_INITIAL, stream


@dataclass(frozen=True)
class InitialLaw:
    """Point mass ``delta_c``, ``uniform[0, u]`` or ``exponential(rate)``."""

    kind: str = "point"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("point", "uniform", "exponential"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind == "point" and self.value < 0:
            raise ValueError("point mass must sit in [0, inf)")
        if self.kind in ("uniform", "exponential") and not self.value > 0:
            raise ValueError(f"{self.kind} parameter must be positive")

    @classmethod
    def point(cls, c: float = 0.0) -> "InitialLaw":
        return cls("point", float(c))

    @classmethod
    def uniform(cls, u: float) -> "InitialLaw":
        return cls("uniform", float(u))

    @classmethod
    def exponential(cls, rate: float) -> "InitialLaw":
        return cls("exponential", float(rate))

    def sample(self, seed: int, count: int, first: int = 0) -> np.ndarray:
        if self.kind == "point":
            return np.full(count, self.value)
        out = np.empty(count)
        for j in range(count):
            g = stream(seed, first + j, TAG_INITIAL)
            if self.kind == "uniform":
                out[j] = g.uniform(0.0, self.value)
            else:
                out[j] = g.exponential(1.0 / self.value)
        return out

    def mean(self) -> float:
        if self.kind == "point":
            return self.value
        if self.kind == "uniform":
            return self.value / 2
        return 1.0 / self.value

    def describe(self) -> dict:
        return {"kind": self.kind, "value": self.value}
