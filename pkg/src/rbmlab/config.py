"""Experiment configuration schema (JSON)."""

from __future__ import annotations

import hashlib
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .laws import InitialLaw

EXPERIMENTS = ("check-s", "simulate", "mv-solve", "penalty-sweep", "chaos-sweep",
               "coupling-sweep", "bounds-audit", "jackson-map")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RhoConfig(_Strict):
    family: Literal["uniform", "two-point", "truncated-gaussian"] = "uniform"
    half_width: float = Field(0.0, ge=0)
    eps_rho: float = Field(0.1, gt=0, lt=1)
    env_seed: int = Field(0, ge=0)


class Mu0Config(_Strict):
    kind: Literal["point", "uniform", "exponential"] = "point"
    value: float = 0.0

    def law(self) -> InitialLaw:
        return InitialLaw(self.kind, self.value)


class Config(_Strict):
    experiment: Literal[EXPERIMENTS]
    n: Optional[int] = Field(None, ge=1)
    n_list: Optional[list[int]] = None
    a: float = 0.0
    a_list: Optional[list[float]] = None
    rho: Optional[RhoConfig] = None
    b: float = 0.0
    sigma: float = Field(1.0, gt=0)
    T: float = Field(1.0, gt=0)
    steps: Optional[int] = Field(None, ge=1)
    ensemble: Optional[int] = Field(None, ge=1)
    replications: Optional[int] = Field(None, ge=1)
    epsilon: Optional[float] = Field(None, gt=0)
    epsilon_list: Optional[list[float]] = None
    tol: Optional[float] = Field(None, gt=0)
    damping: Optional[float] = Field(None, gt=0, le=1)
    seed: int = Field(0, ge=0)
    out_dir: Optional[str] = None
    mu0: Mu0Config = Mu0Config()
    solver: Literal["auto", "contraction", "penalty"] = "auto"
    quench_n: Optional[list[int]] = None
    pair_budget: int = Field(8, ge=1)
    R: Optional[list[list[float]]] = None
    routing: Optional[list[list[float]]] = None
    reflection: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        e = self.experiment
        if e == "check-s" and self.n is None and self.R is None:
            raise ValueError("check-s needs n (with a) or an explicit matrix R")
        if e == "simulate" and self.n is None:
            raise ValueError("simulate needs n")
        if e == "jackson-map" and (self.routing is None) == (self.reflection is None):
            raise ValueError("jackson-map needs exactly one of routing or reflection")
        if e == "coupling-sweep" and self.rho is None:
            raise ValueError("coupling-sweep needs a rho block")
        for name in ("n_list", "quench_n"):
            v = getattr(self, name)
            if v is not None and (not v or min(v) < 1):
                raise ValueError(f"{name} must be a nonempty list of positive integers")
        if self.epsilon_list is not None and (not self.epsilon_list or min(self.epsilon_list) <= 0):
            raise ValueError("epsilon_list must hold positive values")
        return self

    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return Config.model_validate(data)
