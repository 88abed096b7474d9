"""One-dimensional Skorohod map on a grid and the boundary-property residual."""

from __future__ import annotations

import numpy as np

from .paths import Path


def reflect_values(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Running-max reflection along the last axis; returns ``(x, ell)``.

    ``ell[k] = max_{j<=k} max(-w[j], 0)`` and ``x = w + ell``.  At every index
    where ``ell`` increases, ``x`` is exactly 0 in floating point.
    """
    w = np.asarray(w, dtype=float)
    ell = np.maximum.accumulate(np.maximum(-w, 0.0), axis=-1)
    return w + ell, ell


def reflect_1d(w: Path) -> tuple[Path, Path]:
    if w.values[0] < 0:
        raise ValueError(f"reflection needs w(0) >= 0, got {w.values[0]}")
    x, ell = reflect_values(w.values)
    return Path(w.grid, x), Path(w.grid, ell)


def complementarity_values(x: np.ndarray, ell: np.ndarray, rule: str = "right") -> np.ndarray:
    """Stieltjes sums of ``x d ell`` along the last axis.

    ``rule="right"`` evaluates x at the end of each step, so the sum vanishes
    exactly when ell only grows at grid points where x = 0.  ``rule="left"``
    uses the start of each step.
    """
    dl = np.diff(ell, axis=-1)
    if rule == "right":
        xs = x[..., 1:]
    elif rule == "left":
        xs = x[..., :-1]
    else:
        raise ValueError(f"rule must be 'right' or 'left', got {rule!r}")
    return np.sum(xs * dl, axis=-1)


def complementarity_residual(x: Path, ell: Path, rule: str = "right") -> float:
    if x.grid != ell.grid:
        raise ValueError("x and ell live on different grids")
    if np.any(np.diff(ell.values) < 0):
        raise ValueError("ell must be nondecreasing")
    return float(complementarity_values(x.values, ell.values, rule))
