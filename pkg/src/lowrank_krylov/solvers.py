"""Truncated low-rank solvers for ``F(X) = B`` and the per-block reference.

All four methods share the driver :func:`solve`, which chains restart cycles
(``floor(l / d)`` cycles of ``d`` iterations each) and assembles a
:class:`ConvergenceRecord`.  Iterates are :class:`LowRankMatrix` values and
every addition is followed by the configured truncation.

Iteration numbering
-------------------
Rows of the record and ``callback(k, X)`` count applied updates: ``k = 0`` is
the start matrix.  ChebyshevT applies ``l + 1`` updates per cycle (the
``R_0 / d`` update before the loop plus ``l`` loop steps); the ``step``
column gives the loop index with ``0`` for the pre-loop update.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from . import classical
from .classical import GivensLSQ, chebyshev_coefficients
from .equation import (
    MatrixEquationProblem,
    Preconditioner,
    apply_F,
    apply_precond,
    block_residuals,
    relative_residual,
    residual,
)
from .exceptions import ConfigError, SolverFailure
from .lowrank import LowRankMatrix, TruncationConfig, lr_add, lr_inner, truncate
from .spectral import EllipseParams

__all__ = [
    "SolverConfig",
    "IterationRow",
    "ConvergenceRecord",
    "solve",
    "gmrest",
    "gmrestr",
    "chebyshevt",
    "bicgstabt",
    "chebyshev_coefficients",
    "BlockwiseConfig",
    "BlockwiseResult",
    "reference_blockwise_solve",
]

log = logging.getLogger(__name__)

METHODS = ("gmrest", "gmrestr", "chebyshevt", "bicgstabt")
# relative residual below which a start matrix counts as already converged
CONVERGED_FLOOR = 1e-13


@dataclass
class SolverConfig:
    """Settings of one truncated solve.

    Parameters
    ----------
    method : {"gmrest", "gmrestr", "chebyshevt", "bicgstabt"}
    iterations : int
        Total iteration budget ``l``.
    restart_divisor : int, optional
        Iterations per cycle ``d``; ``floor(l / d)`` cycles are run.  ``None``
        means a single cycle of ``l`` iterations.  Plain ``gmrest`` ignores it.
    truncation : TruncationConfig
    ellipse : EllipseParams, optional
        Required by ChebyshevT, which needs ``0 < c < d``.
    record_history : bool
        Form intermediate iterates and record their untruncated relative
        residuals.  GMREST otherwise only builds the final iterate.
    tol : float, optional
        Early exit on the relative residual (off by default).
    truncate_s : bool
        Truncate ``S = R - alpha V`` in Bi-CGstab.
    """

    method: str = "gmrestr"
    iterations: int = 18
    restart_divisor: Optional[int] = 6
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    ellipse: Optional[EllipseParams] = None
    record_history: bool = True
    tol: Optional[float] = None
    truncate_s: bool = False
    breakdown_tol: float = 1e-14

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations}")
        if self.restart_divisor is not None:
            if self.restart_divisor < 1:
                raise ConfigError("restart divisor must be positive")
            if self.restart_divisor > self.iterations:
                raise ConfigError(
                    f"restart divisor {self.restart_divisor} exceeds iterations {self.iterations}"
                )
        if self.method == "chebyshevt":
            if self.ellipse is None:
                raise ConfigError("chebyshevt needs ellipse parameters (d, c); pass them or estimate them")
            if self.ellipse.c == 0.0:
                raise ConfigError("chebyshevt needs c > 0; the degenerate ellipse c = 0 is not supported")

    def cycles(self) -> tuple[int, int]:
        """``(number of cycles, iterations per cycle)``."""
        if self.method == "gmrest" or self.restart_divisor is None:
            return 1, self.iterations
        return self.iterations // self.restart_divisor, self.restart_divisor


@dataclass
class IterationRow:
    iteration: int
    cycle: int
    step: int
    relres: float
    estimate: float
    rank_before: int
    rank_after: int
    seconds: float


@dataclass
class ConvergenceRecord:
    method: str
    rows: list = field(default_factory=list)
    final_relres: float = float("nan")
    breakdown: Optional[str] = None
    breakdown_iteration: Optional[int] = None
    converged: bool = False
    coefficients: list = field(default_factory=list)
    truncations: int = 0
    seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration if self.rows else 0

    def relres_history(self) -> np.ndarray:
        return np.array([r.relres for r in self.rows])


class _Tracker:
    """Truncation with bookkeeping of counts and peak pre-truncation rank."""

    def __init__(self, cfg: TruncationConfig):
        self.cfg = cfg
        self.count = 0
        self.peak = 0

    def __call__(self, a: LowRankMatrix) -> LowRankMatrix:
        self.peak = max(self.peak, a.rank)
        if not self.cfg.active:
            return a
        self.count += 1
        return truncate(a, self.cfg)[0]

    def F(self, prob, X) -> LowRankMatrix:
        out, n = apply_F(prob, X, self.cfg)
        self.count += n
        return out

    def residual(self, prob, X) -> LowRankMatrix:
        # T(B - T(F(X)))
        return self(lr_add(prob.B, -self.F(prob, X)))

    def reset_peak(self):
        self.peak = 0


class _Run:
    """Shared state of one solve: record, callback, timing, iteration counter."""

    def __init__(self, prob, precond, cfg: SolverConfig, callback):
        self.prob = prob
        self.P = precond
        self.cfg = cfg
        self.tr = _Tracker(cfg.truncation)
        self.callback = callback
        self.record = ConvergenceRecord(cfg.method)
        self.k = 0
        self.t0 = time.perf_counter()

    def relres(self, X) -> float:
        return relative_residual(self.prob, X)

    def emit(self, X, cycle, step, estimate=float("nan"), extra=None) -> float:
        self.k += 1
        rel = self.relres(X) if self.cfg.record_history else float("nan")
        self.record.rows.append(IterationRow(
            self.k, cycle, step, rel, estimate, self.tr.peak, X.rank, time.perf_counter() - self.t0,
        ))
        self.tr.reset_peak()
        if self.callback:
            self.callback(self.k, X, extra or {})
        return rel

    def reached_tol(self, rel) -> bool:
        return self.cfg.tol is not None and rel <= self.cfg.tol


def _scratch(cfg: TruncationConfig, k: int) -> TruncationConfig:
    if cfg.mode != "simulator":
        return cfg
    return cfg.fresh(seed=[0 if cfg.seed is None else cfg.seed, 1, k])


def _sum_consecutive(tr: _Tracker, X, basis, y):
    for v, c in zip(basis, y):
        X = tr(lr_add(X, c * v))
    return X


def _gmrest_cycle(run: _Run, X, l, cycle):
    prob, P, tr = run.prob, run.P, run.tr
    Rh = apply_precond(P, tr.residual(prob, X))
    beta = Rh.norm()
    if beta == 0.0:
        return X, True
    V = [Rh / beta]
    H = np.zeros((l + 1, l))
    lsq = GivensLSQ(beta, l)
    y = np.zeros(0)
    stop = False
    for i in range(l):
        W = apply_precond(P, tr.F(prob, V[i]))
        for k in range(i + 1):
            H[k, i] = lr_inner(V[k], W)
            W = tr(lr_add(W, -H[k, i] * V[k]))
        H[i + 1, i] = W.norm()
        est = lsq.add_column(H[: i + 2, i]) / beta
        y = lsq.solve()
        lucky = H[i + 1, i] <= run.cfg.breakdown_tol * np.abs(H[: i + 2, : i + 1]).max()
        last = i == l - 1 or lucky
        if run.cfg.record_history or run.callback or last:
            # intermediate iterates are diagnostics: they draw from their own
            # stream so the trajectory does not depend on record_history
            sums = tr if last else _Tracker(_scratch(tr.cfg, run.k))
            Xi = _sum_consecutive(sums, X, V[: lsq.n], y)
            rel = run.emit(Xi, cycle, i + 1, est, {"y": y, "H": H[: i + 2, : i + 1]})
            if run.reached_tol(rel):
                last = stop = True
        else:
            Xi = None
            run.k += 1
        if lucky:
            run.record.breakdown = "lucky"
            run.record.breakdown_iteration = run.k
        if last or lucky:
            run.record.coefficients.append(np.array(y))
            return Xi, stop or lucky
        V.append(W / H[i + 1, i])
    raise AssertionError("unreachable")


def _chebyshevt_cycle(run: _Run, X, l, cycle):
    prob, P, tr = run.prob, run.P, run.tr
    d, c = run.cfg.ellipse.d, run.cfg.ellipse.c
    _, alpha, beta = chebyshev_coefficients(d, c, l)
    R = apply_precond(P, tr.residual(prob, X))
    Phi = R / d
    X = tr(lr_add(X, Phi))
    rel = run.emit(X, cycle, 0, extra={"R": R})
    if run.reached_tol(rel):
        return X, True
    for i in range(l):
        R = apply_precond(P, tr.residual(prob, X))
        Phi = tr(lr_add(alpha[i] * R, beta[i] * Phi))
        X = tr(lr_add(X, Phi))
        rel = run.emit(X, cycle, i + 1, extra={"R": R, "alpha": alpha[i], "beta": beta[i]})
        if run.reached_tol(rel):
            return X, True
    return X, False


def _bicgstabt_cycle(run: _Run, X, l, cycle):
    prob, P, tr, cfg = run.prob, run.P, run.tr, run.cfg
    R = tr.residual(prob, X)
    Rt = R
    nrt = Rt.norm()
    tol_abs = (cfg.tol or 0.0) * prob.norm_B
    M, m = X.shape
    rho_old = alpha = omega = 1.0
    Vv = LowRankMatrix.zeros(M, m)
    Pd = LowRankMatrix.zeros(M, m)
    for it in range(1, l + 1):
        rn = R.norm()
        if rn == 0.0:
            return X, True
        rho = lr_inner(Rt, R)
        if abs(rho) <= cfg.breakdown_tol * nrt * rn:
            run.record.breakdown, run.record.breakdown_iteration = "rho", run.k
            return X, True
        beta = (rho / rho_old) * (alpha / omega)
        Pd = tr(lr_add(R, beta * tr(lr_add(Pd, -omega * Vv))))
        Ph = apply_precond(P, Pd)
        Vv = tr.F(prob, Ph)
        rtv = lr_inner(Rt, Vv)
        if abs(rtv) <= cfg.breakdown_tol * nrt * Vv.norm():
            run.record.breakdown, run.record.breakdown_iteration = "alpha", run.k
            return X, True
        alpha = rho / rtv
        S = lr_add(R, -alpha * Vv)
        if cfg.truncate_s:
            S = tr(S)
        if S.norm() <= tol_abs:
            X = tr(lr_add(X, alpha * Ph))
            run.emit(X, cycle, it)
            return X, True
        Sh = apply_precond(P, S)
        T = tr.F(prob, Sh)
        tt = lr_inner(T, T)
        omega = lr_inner(T, S) / tt if tt > 0 else 0.0
        X = tr(lr_add(tr(lr_add(X, alpha * Ph)), omega * Sh))
        # direct residual instead of the recursion s - omega t
        R = tr.residual(prob, X)
        rho_old = rho
        rel = run.emit(X, cycle, it, estimate=R.norm() / prob.norm_B if prob.norm_B else R.norm())
        if abs(omega) <= cfg.breakdown_tol:
            run.record.breakdown, run.record.breakdown_iteration = "omega", run.k
            return X, True
        if run.reached_tol(rel):
            return X, True
    return X, False


_CYCLES = {
    "gmrest": _gmrest_cycle,
    "gmrestr": _gmrest_cycle,
    "chebyshevt": _chebyshevt_cycle,
    "bicgstabt": _bicgstabt_cycle,
}


def solve(prob: MatrixEquationProblem, precond: Preconditioner, cfg: SolverConfig,
          X0: Optional[LowRankMatrix] = None,
          callback: Optional[Callable] = None) -> tuple[LowRankMatrix, ConvergenceRecord]:
    """Run ``cfg.method`` from ``X0`` (zero by default).

    ``callback(k, X, extra)`` receives every formed iterate; ``extra`` holds
    method-specific data (``R`` for ChebyshevT, ``y`` for GMREST).
    """
    X = LowRankMatrix.zeros(prob.M, prob.m) if X0 is None else X0
    if X.shape != (prob.M, prob.m):
        raise ConfigError(f"start matrix has shape {X.shape}, expected {(prob.M, prob.m)}")
    if cfg.truncation.mode == "exact" and X.rank > cfg.truncation.rank:
        X = truncate(X, cfg.truncation)[0]
    run = _Run(prob, precond, cfg, callback)
    rec = run.record
    if callback:
        callback(0, X, {})
    start = relative_residual(prob, X)
    if start <= max(cfg.tol or 0.0, CONVERGED_FLOOR):
        rec.converged = True
        rec.final_relres = start
        rec.seconds = time.perf_counter() - run.t0
        return X, rec
    n_cycles, per_cycle = cfg.cycles()
    cycle_fn = _CYCLES[cfg.method]
    for cycle in range(n_cycles):
        X, stop = cycle_fn(run, X, per_cycle, cycle)
        if stop:
            break
    rec.truncations = run.tr.count
    rec.final_relres = relative_residual(prob, X)
    rec.converged = rec.final_relres <= (cfg.tol if cfg.tol is not None else CONVERGED_FLOOR)
    rec.seconds = time.perf_counter() - run.t0
    if rec.breakdown not in (None, "lucky"):
        log.warning("%s broke down (%s) at iteration %s", cfg.method, rec.breakdown, rec.breakdown_iteration)
    return X, rec


def _with_method(cfg: SolverConfig, method: str) -> SolverConfig:
    if cfg.method == method:
        return cfg
    kw = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    kw["method"] = method
    return SolverConfig(**kw)


def gmrest(prob, precond, cfg, X0=None, callback=None):
    """Preconditioned truncated GMRES: one Arnoldi cycle of ``cfg.iterations`` steps."""
    return solve(prob, precond, _with_method(cfg, "gmrest"), X0, callback)


def gmrestr(prob, precond, cfg, X0=None, callback=None):
    """Restarted truncated GMRES: ``floor(l / d)`` chained GMREST(``d``) cycles."""
    return solve(prob, precond, _with_method(cfg, "gmrestr"), X0, callback)


def chebyshevt(prob, precond, cfg, X0=None, callback=None):
    """Preconditioned truncated Chebyshev iteration on the ellipse ``cfg.ellipse``."""
    return solve(prob, precond, _with_method(cfg, "chebyshevt"), X0, callback)


def bicgstabt(prob, precond, cfg, X0=None, callback=None):
    """Right-preconditioned truncated Bi-CGstab with directly computed residuals."""
    return solve(prob, precond, _with_method(cfg, "bicgstabt"), X0, callback)


# ---------------------------------------------------------------- baseline


@dataclass
class BlockwiseConfig:
    """Settings of the independent per-block solves.

    ``preconditioner`` is ``"exact"`` (the block itself), ``"mean"`` (one
    mean-based matrix for all blocks) or ``"sampled"`` (``n_sampled``
    factorizations at evenly spaced block indices, each block using the one
    of its contiguous chunk).
    """

    restart: int = 8
    iterations: int = 16
    preconditioner: str = "sampled"
    n_sampled: int = 5
    ellipse: Optional[EllipseParams] = None
    tol: Optional[float] = None
    strict: bool = False
    jobs: int = 1
    max_entries: int = 10**7


@dataclass
class BlockwiseResult:
    X: np.ndarray
    relres: np.ndarray
    iterations: np.ndarray
    failed: list
    precondition_seconds: float
    compute_seconds: float


def _block_preconditioners(prob, bc: BlockwiseConfig, precond):
    m = prob.m
    if bc.preconditioner == "mean":
        if precond is None:
            raise ConfigError("blockwise 'mean' preconditioning needs a preconditioner")
        return [precond.lu], np.zeros(m, dtype=int)
    if bc.preconditioner == "exact":
        return None, None
    if bc.preconditioner != "sampled":
        raise ConfigError(f"unknown blockwise preconditioner {bc.preconditioner!r}")
    n = min(bc.n_sampled, m)
    chunk = np.minimum((np.arange(m) * n) // m, n - 1)
    centers = [int((2 * j + 1) * m // (2 * n)) for j in range(n)]
    return [spla.splu(prob.block_matrix(i)) for i in centers], chunk


def reference_blockwise_solve(prob: MatrixEquationProblem, method: str = "lu",
                              bc: Optional[BlockwiseConfig] = None,
                              precond: Optional[Preconditioner] = None) -> BlockwiseResult:
    """Solve every block ``A(p_i) x_i = b_i`` independently.

    ``method`` is ``"lu"`` (sparse direct), ``"gmres"`` (restarted GMRES,
    ``bc.iterations`` steps in cycles of ``bc.restart``) or ``"chebyshev"``.
    Blocks above ``bc.tol`` are listed in ``failed``; with ``bc.strict`` the
    first one raises :class:`SolverFailure` carrying its index.
    """
    bc = bc or BlockwiseConfig()
    if prob.M * prob.m > bc.max_entries:
        raise ConfigError(
            f"dense reference needs M*m = {prob.M * prob.m} entries, cap is {bc.max_entries}"
        )
    if method not in ("lu", "gmres", "chebyshev"):
        raise ConfigError(f"unknown reference method {method!r}")
    if method == "chebyshev" and bc.ellipse is None:
        raise ConfigError("chebyshev reference needs ellipse parameters")
    t0 = time.perf_counter()
    lus, chunk = (None, None) if method == "lu" else _block_preconditioners(prob, bc, precond)
    t1 = time.perf_counter()
    Bd = prob.B

    def one(i):
        A = prob.block_matrix(i)
        b = Bd.column(i)
        if method == "lu":
            return spla.splu(A).solve(b), 1
        if lus is None:
            lu = spla.splu(A)
        else:
            lu = lus[chunk[i]]
        mv = A.__matmul__
        if method == "gmres":
            x = np.zeros_like(b)
            done = 0
            while done < bc.iterations:
                res = classical.gmres(mv, b, x, min(bc.restart, bc.iterations - done), lu.solve)
                x, done = res.x, done + max(res.iterations, 1)
                if res.breakdown:
                    break
            return x, done
        res = classical.chebyshev(mv, b, bc.ellipse.d, bc.ellipse.c, None, bc.iterations, lu.solve)
        return res.x, res.iterations

    if bc.jobs > 1:
        with ThreadPoolExecutor(max_workers=bc.jobs) as pool:
            out = list(pool.map(one, range(prob.m)))
    else:
        out = [one(i) for i in range(prob.m)]
    X = np.column_stack([o[0] for o in out])
    its = np.array([o[1] for o in out])
    t2 = time.perf_counter()
    rel = block_residuals(prob, LowRankMatrix.from_dense(X))
    failed = []
    if bc.tol is not None:
        failed = [int(i) for i in np.flatnonzero(rel > bc.tol)]
        if failed and bc.strict:
            raise SolverFailure(f"block {failed[0]} did not reach {bc.tol:g} (relres {rel[failed[0]]:.3e})",
                                index=failed[0])
    return BlockwiseResult(X, rel, its, failed, t1 - t0, t2 - t1)
