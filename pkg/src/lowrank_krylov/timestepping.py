"""One-step theta scheme for the time-dependent matrix equation.

With time-derivative matrices ``At_f`` (scaled by the fluid density of each
sample) and ``At_s``, step ``i`` solves

    F^i(X^i) = (1/dt) At_f X^i (rho_f I + D_rho) + (1/dt) At_s X^i + theta F(X^i)
             = (1/dt) At_f X^{i-1} (rho_f I + D_rho) + (1/dt) At_s X^{i-1}
               - (1 - theta) F(X^{i-1}) + theta B^i + (1 - theta) B^{i-1}.

The step operator ``F^i`` does not depend on ``i``; it is assembled once as a
:class:`MatrixEquationProblem` whose first matrix absorbs ``At_s / dt`` and
whose last term carries ``At_f`` with the diagonal ``rho_f + D_rho``.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .equation import MatrixEquationProblem, apply_F, build_preconditioner, relative_residual
from .exceptions import ConfigError, SolverFailure
from .lowrank import NO_TRUNCATION, LowRankMatrix, TruncationConfig, lr_add, truncate
from .solvers import ConvergenceRecord, SolverConfig, solve

__all__ = ["TimeProblem", "build_step_operator", "step_rhs", "run_theta_scheme", "with_rhs"]


@dataclass
class TimeProblem:
    """Data of a theta-scheme run.

    ``dirichlet_series`` holds ``steps + 1`` vectors ``b^0..b^s``; the
    right-hand side of step ``i`` is ``b^i ⊗ 1``.  ``fluid_index`` selects the
    diagonal of ``base`` that holds the density offsets and ``rho_f_ref`` is
    the reference density those offsets are measured from.
    """

    base: MatrixEquationProblem
    At_f: sp.spmatrix
    At_s: sp.spmatrix
    rho_f_ref: float
    theta: float
    dt: float
    steps: int
    dirichlet_series: Sequence[np.ndarray]
    X0: Optional[LowRankMatrix] = None
    fluid_index: int = -1

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.dt > 0:
            raise ConfigError(f"time step must be positive, got dt={self.dt}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError(f"steps must be a positive integer, got {self.steps}")
        if len(self.dirichlet_series) != self.steps + 1:
            raise ConfigError(
                f"need {self.steps + 1} Dirichlet vectors for {self.steps} steps, got {len(self.dirichlet_series)}"
            )
        M = self.base.M
        self.At_f = sp.csc_matrix(self.At_f, dtype=float)
        self.At_s = sp.csc_matrix(self.At_s, dtype=float)
        for name, a in (("At_f", self.At_f), ("At_s", self.At_s)):
            if a.shape != (M, M):
                raise ConfigError(f"{name} has shape {a.shape}, expected {(M, M)}")
        self.dirichlet_series = [np.asarray(b, dtype=float).ravel() for b in self.dirichlet_series]
        for i, b in enumerate(self.dirichlet_series):
            if b.size != M:
                raise ConfigError(f"Dirichlet vector {i} has length {b.size}, expected {M}")
        if not -self.base.K <= self.fluid_index < self.base.K:
            raise ConfigError(f"fluid_index {self.fluid_index} out of range for K={self.base.K}")
        if self.X0 is None:
            self.X0 = LowRankMatrix.zeros(M, self.base.m)

    def rhs_matrix(self, i: int) -> LowRankMatrix:
        return LowRankMatrix.outer(self.dirichlet_series[i], np.ones(self.base.m))

    def density_diagonal(self) -> np.ndarray:
        return self.rho_f_ref + self.base.D[self.fluid_index]


def with_rhs(prob: MatrixEquationProblem, B: LowRankMatrix) -> MatrixEquationProblem:
    """Shallow copy of ``prob`` with a new right-hand side (operators shared)."""
    if B.shape != (prob.M, prob.m):
        raise ConfigError(f"right-hand side has shape {B.shape}, expected {(prob.M, prob.m)}")
    out = copy.copy(prob)
    out.B = B
    out._fro_B = B.norm()
    return out


def _time_terms(tp: TimeProblem, weight: float):
    """Matrix list, diagonals and scales of ``weight * F`` plus the two time terms."""
    base = tp.base
    A0 = tp.At_s / tp.dt
    A, D, scale = [], [], []
    if weight != 0.0:
        A0 = A0 + weight * base.A[0]
        for a, d, s in zip(base.A[1:], base.D, base.scale):
            A.append(a)
            D.append(d)
            scale.append(weight * s)
    A.append(tp.At_f)
    D.append(tp.density_diagonal())
    scale.append(1.0 / tp.dt)
    return [A0] + A, D, scale


def build_step_operator(tp: TimeProblem) -> MatrixEquationProblem:
    """The time-independent step operator ``F^i`` as a matrix-equation problem."""
    A, D, scale = _time_terms(tp, tp.theta)
    return MatrixEquationProblem(A, D, tp.rhs_matrix(0), scale)


def _explicit_operator(tp: TimeProblem) -> MatrixEquationProblem:
    A, D, scale = _time_terms(tp, -(1.0 - tp.theta))
    return MatrixEquationProblem(A, D, tp.rhs_matrix(0), scale)


def step_rhs(tp: TimeProblem, X_prev: LowRankMatrix, i: int,
             cfg: TruncationConfig = NO_TRUNCATION, explicit: Optional[MatrixEquationProblem] = None) -> LowRankMatrix:
    """Right-hand side ``B^i(X^{i-1})`` of step ``i`` (``1 <= i <= steps``)."""
    if not 1 <= i <= tp.steps:
        raise ConfigError(f"step index {i} outside 1..{tp.steps}")
    explicit = explicit or _explicit_operator(tp)
    out, _ = apply_F(explicit, X_prev, cfg)
    b = tp.theta * tp.dirichlet_series[i] + (1.0 - tp.theta) * tp.dirichlet_series[i - 1]
    out = lr_add(out, LowRankMatrix.outer(b, np.ones(tp.base.m)))
    return truncate(out, cfg)[0]


def run_theta_scheme(tp: TimeProblem, solver_cfg: SolverConfig, precond=None,
                     callback=None) -> tuple[LowRankMatrix, list]:
    """Advance ``tp.steps`` steps, each solved with ``solver_cfg``.

    Each step starts from the previous solution.  The step operator and the
    preconditioner (mean-based on the step operator unless given) are built
    once.  ``callback(i, X, record)`` runs after every step.  Returns the final
    iterate and one :class:`ConvergenceRecord` per step; a non-lucky
    breakdown raises :class:`SolverFailure` carrying the step index.
    """
    step_op = build_step_operator(tp)
    explicit = _explicit_operator(tp)
    if precond is None:
        precond = build_preconditioner(step_op, "mean-T")
        precond.kind = "mean-T-time"
    X = tp.X0
    records = []
    for i in range(1, tp.steps + 1):
        t0 = time.perf_counter()
        rhs = step_rhs(tp, X, i, solver_cfg.truncation, explicit)
        prob_i = with_rhs(step_op, rhs)
        try:
            X, rec = solve(prob_i, precond, solver_cfg, X)
        except (ConfigError, SolverFailure) as exc:
            raise SolverFailure(f"step {i}: {exc}", index=i) from exc
        if rec.breakdown not in (None, "lucky"):
            raise SolverFailure(f"step {i}: {solver_cfg.method} broke down ({rec.breakdown})", index=i)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
        if callback:
            callback(i, X, rec)
    return X, records
