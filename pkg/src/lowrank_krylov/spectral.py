"""Chebyshev ellipse estimation from the preconditioned block spectra."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .exceptions import ConfigError, FactorizationError

__all__ = ["EllipseParams", "estimate_ellipse", "corner_blocks"]


@dataclass(frozen=True)
class EllipseParams:
    """Ellipse with center ``d`` and foci ``d ± c`` on the real axis."""

    d: float
    c: float
    lambda_min: float = float("nan")
    lambda_max: float = float("nan")
    source: str = "user-supplied"
    seconds: float = 0.0

    def __post_init__(self):
        if not self.d > 0:
            raise ConfigError(f"ellipse center must be positive, got d={self.d}")
        if not 0 <= self.c < self.d:
            raise ConfigError(f"ellipse must satisfy 0 <= c < d, got d={self.d}, c={self.c}")

    @classmethod
    def from_extremes(cls, lam_min: float, lam_max: float, source: str = "user-supplied",
                      inflation: float = 1.0, seconds: float = 0.0) -> "EllipseParams":
        d = 0.5 * (lam_min + lam_max)
        c = inflation * (lam_max - d)
        return cls(d, c, lam_min, lam_max, source, seconds)


def corner_blocks(prob) -> np.ndarray:
    """Columns where every parameter offset sits at the min or max of its range."""
    mask = np.ones(prob.m, dtype=bool)
    for d in prob.D:
        mask &= (d == d.min()) | (d == d.max())
    idx = np.flatnonzero(mask)
    # one representative per distinct offset combination
    keys = {}
    for i in idx:
        keys.setdefault(tuple(float(d[i]) for d in prob.D), int(i))
    return np.array(sorted(keys.values()), dtype=int)


def _block_moduli(prob, lu_piv, i: int) -> np.ndarray:
    Ai = prob.block_matrix(i).toarray()
    return np.abs(sla.eigvals(sla.lu_solve(lu_piv, Ai)))


def estimate_ellipse(prob, precond, corner_only: bool = True, inflation: float = 1.0,
                     max_dim: int = 2000, blocks: Optional[np.ndarray] = None) -> EllipseParams:
    """Extreme eigenvalue moduli of ``P^{-1} A_i`` and the resulting ellipse.

    With ``corner_only`` only the ``2^K`` parameter corners are examined,
    otherwise every block.  ``inflation`` scales ``c`` to guard against an
    ellipse that under-covers the spectrum (1.0 keeps the plain estimate).
    """
    if prob.M > max_dim:
        raise ConfigError(
            f"dense eigenvalue estimation capped at M <= {max_dim}, problem has M = {prob.M}; "
            "estimate on a coarser problem"
        )
    t0 = time.perf_counter()
    P = precond.matrix.toarray()
    lu_piv = sla.lu_factor(P, check_finite=True)
    if np.any(np.abs(np.diag(lu_piv[0])) == 0):
        raise FactorizationError(f"{precond.kind} preconditioner is singular")
    if blocks is None:
        blocks = corner_blocks(prob) if corner_only else np.arange(prob.m)
    lo, hi = np.inf, 0.0
    for i in blocks:
        mod = _block_moduli(prob, lu_piv, int(i))
        if mod.min() == 0.0:
            raise FactorizationError(f"block {int(i)} is singular")
        lo = min(lo, float(mod.min()))
        hi = max(hi, float(mod.max()))
    source = "corner-blocks" if corner_only else "all-blocks"
    return EllipseParams.from_extremes(lo, hi, source, inflation, time.perf_counter() - t0)
