"""Truncation-error bounds for GMREST and ChebyshevT and the simulator harness.

Notation
--------
``eps``      accuracy of one truncation
``sigma``    estimate of ``||P^{-1} A||_2`` for the Kronecker operator ``A``
``pinv``     estimate of ``||P^{-1}||_2``
``c_j``      GMRES least-squares coefficients (untruncated run)
``d_j``      GMREST least-squares coefficients (truncated run)

Two variants are offered.  ``"practical"`` assumes the residual is truncated
before the preconditioner solve, so its error is bounded by
``eps * pinv``.  ``"exact-solve"`` assumes the truncation acts after the
solve, so the error is ``eps``.

The harness runs a method twice from the same start matrix.  One run uses
the truncation simulator and the other uses no truncation.  Both runs share
the solver code path, and the measured ``||x_l - x_hat_l||`` is compared
against the bound.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .equation import MatrixEquationProblem, Preconditioner, apply_F, relative_residual
from .exceptions import ConfigError
from .lowrank import LowRankMatrix, TruncationConfig
from .solvers import SolverConfig, solve
from .spectral import EllipseParams

__all__ = [
    "BoundInputs",
    "gmrest_basis_bound",
    "gmrest_iterate_bound",
    "chebyshevt_iterate_bound",
    "chebyshevt_bound_sequence",
    "estimate_sigma",
    "BoundRow",
    "BoundReport",
    "run_bound_harness",
    "CSV_COLUMNS",
]

VARIANTS = ("practical", "exact-solve")
ROUND_OFF = float(np.finfo(float).eps)


@dataclass
class BoundInputs:
    """Scalars and coefficient lists entering the bounds.

    ``epsilon_R`` overrides the residual-truncation error of ChebyshevT.  By
    default it is ``eps * pinv`` in the practical variant and ``eps`` in the
    exact-solve variant.  ``center`` is the ellipse center ``d``.  ``alpha``
    and ``beta`` hold the loop coefficients ``alpha_1, beta_1, ...``.
    """

    epsilon: float
    sigma: float
    pinv: float = 1.0
    variant: str = "practical"
    c: Sequence[float] = ()
    d: Sequence[float] = ()
    center: Optional[float] = None
    alpha: Sequence[float] = ()
    beta: Sequence[float] = ()
    epsilon_R: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown bound variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("epsilon", "sigma", "pinv"):
            v = getattr(self, name)
            if not v >= 0:
                raise ConfigError(f"{name} must be non-negative, got {v}")
        if self.epsilon_R is not None and not self.epsilon_R >= 0:
            raise ConfigError(f"epsilon_R must be non-negative, got {self.epsilon_R}")

    @property
    def eps_R(self) -> float:
        if self.epsilon_R is not None:
            return self.epsilon_R
        return self.epsilon * (self.pinv if self.variant == "practical" else 1.0)


def _geom(sigma: float, n: int) -> float:
    """``sum_{j=1}^{n} sigma^{j-1}``, zero for ``n <= 0``."""
    return float(sum(sigma ** (j - 1) for j in range(1, n + 1)))


def gmrest_basis_bound(k: int, inputs: BoundInputs) -> float:
    """Bound on ``e_k = ||K^T_k - (P^{-1} A)^k r_0||`` for the k-th truncated basis element."""
    if k < 0:
        raise ConfigError(f"basis index must be non-negative, got {k}")
    eps, s = inputs.epsilon, inputs.sigma
    if inputs.variant == "practical":
        return eps * (_geom(s, k) + inputs.pinv * s**k + k)
    return eps * _geom(s, k + 1) + eps * k


def gmrest_iterate_bound(inputs: BoundInputs) -> float:
    """Bound on ``||x_hat_l - x_l||`` with ``l = len(inputs.d)``."""
    c = np.asarray(inputs.c, dtype=float)
    d = np.asarray(inputs.d, dtype=float)
    if c.shape != d.shape:
        raise ConfigError(f"coefficient lists differ in length: {c.size} vs {d.size}")
    l = d.size
    eps, s = inputs.epsilon, inputs.sigma
    total = 0.0
    for j in range(1, l + 1):
        if inputs.variant == "practical":
            w = _geom(s, j - 1) + inputs.pinv * s ** (j - 1) + (j - 1)
        else:
            w = _geom(s, j) + (j - 1)
        total += abs(d[j - 1]) * w
    return eps * total + float(np.sum(np.abs(c - d))) + eps * l


def chebyshevt_bound_sequence(l: int, inputs: BoundInputs) -> np.ndarray:
    """``e_1..e_l`` of the recursive ChebyshevT bound (entry ``i - 1`` is ``e_i``)."""
    if l < 1:
        raise ConfigError(f"iteration index must be at least 1, got {l}")
    if inputs.center is None or inputs.center == 0:
        raise ConfigError("ChebyshevT bound needs the ellipse center d")
    if len(inputs.alpha) < l - 1 or len(inputs.beta) < l - 1:
        raise ConfigError(
            f"bound e_{l} needs alpha_1..alpha_{l - 1} and beta_1..beta_{l - 1}, "
            f"got {len(inputs.alpha)} and {len(inputs.beta)}"
        )
    a = np.abs(np.asarray(inputs.alpha, dtype=float))
    b = np.abs(np.asarray(inputs.beta, dtype=float))
    eps, s, eR, dd = inputs.epsilon, inputs.sigma, inputs.eps_R, abs(inputs.center)

    def prod_beta(j, n):
        # prod_{i=1}^{n-j-1} |beta_{i+j}|, empty product is 1
        return float(np.prod(b[j: n - 1]))

    e = np.zeros(l + 1)
    e[1] = eps + eR / dd
    for n in range(2, l + 1):
        val = (1.0 + a[n - 2] * s) * e[n - 1]
        pb = [prod_beta(j, n) for j in range(1, n - 1)]
        val += sum(a[j - 1] * e[j] * s * pb[j - 1] for j in range(1, n - 1))
        val += (2.0 + sum(pb)) * eps
        val += (sum(a[j - 1] * prod_beta(j, n) for j in range(1, n)) + float(np.prod(b[: n - 1])) / dd) * eR
        e[n] = val
    return e[1:]


def chebyshevt_iterate_bound(l: int, inputs: BoundInputs) -> float:
    """Bound on ``||x_hat_l - x_l||`` for ChebyshevT (``x_hat_1`` follows the pre-loop update)."""
    return float(chebyshevt_bound_sequence(l, inputs)[-1])


def estimate_sigma(prob: MatrixEquationProblem, precond: Preconditioner,
                   iterations: int = 20, seed: int = 0) -> float:
    """Power iteration on ``(P^{-1} A)^T (P^{-1} A)`` for ``||P^{-1} A||_2``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((prob.M, prob.m))
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = precond.solve(prob.apply_dense(x))
        z = prob.apply_dense(precond.solve(y, trans="T"), transpose=True)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        est = math.sqrt(nz)
        x = z / nz
    return float(est)


# ---------------------------------------------------------------- harness

CSV_COLUMNS = ["iter", "measured_error", "bound", "rel_res_full", "rel_res_trunc",
               "basis_k", "basis_err", "basis_bound", "violation_flag"]


@dataclass
class BoundRow:
    """One iteration of the harness.

    ``basis_err`` and ``basis_bound`` belong to basis element ``k = l - 1``.
    They are NaN for ChebyshevT.  ``noise`` and ``basis_noise`` are rounding
    allowances of ``4 u ||x||`` for the compared matrices; a violation is
    flagged only when the measured error exceeds the bound by more than that.
    """

    iteration: int
    measured_error: float
    bound: float
    rel_res_full: float
    rel_res_trunc: float
    basis_k: int = -1
    basis_err: float = float("nan")
    basis_bound: float = float("nan")
    epsilon_R: float = float("nan")
    noise: float = 0.0
    basis_noise: float = 0.0

    @property
    def violation(self) -> bool:
        return self.measured_error > self.bound + self.noise

    @property
    def basis_violation(self) -> bool:
        return self.basis_err > self.basis_bound + self.basis_noise


@dataclass
class BoundReport:
    method: str
    epsilon: float
    variant: str
    sigma: float
    pinv: float
    rows: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(r.violation for r in self.rows)

    @property
    def basis_violations(self) -> int:
        return sum(r.basis_violation for r in self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                vals = [r.measured_error, r.bound, r.rel_res_full, r.rel_res_trunc]
                w.writerow([r.iteration, *(repr(float(v)) for v in vals), r.basis_k,
                            repr(float(r.basis_err)), repr(float(r.basis_bound)),
                            int(r.violation or r.basis_violation)])
        return path


def _trajectory(prob, precond, cfg, X0):
    """Iterates, callback extras and the record of one run."""
    iterates, extras = {}, {}

    def cb(k, X, extra):
        iterates[k] = X
        extras[k] = extra

    _, rec = solve(prob, precond, cfg, X0, cb)
    return iterates, extras, rec


def _rounding(*mats) -> float:
    return 4.0 * ROUND_OFF * max(float(np.linalg.norm(a)) for a in mats)


def _truncated_powers(prob, precond, X0: np.ndarray, n: int, eps: float, variant: str, rng):
    """Basis errors ``e_0..e_{n-1}`` and their rounding allowances."""

    def sim(x):
        if eps == 0.0:
            return x
        z = rng.uniform(0.0, 1.0, size=x.shape)
        return x + (eps / np.linalg.norm(z)) * z

    R = prob.B.to_dense() - prob.apply_dense(X0)
    exact = precond.solve(R)
    trunc = precond.solve(sim(R)) if variant == "practical" else sim(exact.copy())
    errs = [float(np.linalg.norm(trunc - exact))]
    noise = [_rounding(exact, trunc)]
    for _ in range(1, n):
        exact = precond.solve(prob.apply_dense(exact))
        trunc = sim(precond.solve(prob.apply_dense(trunc)))
        errs.append(float(np.linalg.norm(trunc - exact)))
        noise.append(_rounding(exact, trunc))
    return errs, noise


def _f_truncations(prob) -> int:
    probe = LowRankMatrix.outer(np.ones(prob.M), np.ones(prob.m))
    _, n = apply_F(prob, probe, TruncationConfig("simulator", epsilon=1.0, seed=0))
    return max(n, 1)


def run_bound_harness(prob: MatrixEquationProblem, precond: Preconditioner, method: str,
                      epsilon: float, iterations: int = 10, ellipse: Optional[EllipseParams] = None,
                      X0: Optional[LowRankMatrix] = None, warm_start_after: int = 0,
                      variant: str = "practical", sigma: Optional[float] = None,
                      pinv: Optional[float] = None, measured_eps_R: bool = True,
                      strict: bool = False, seed: int = 0,
                      max_entries: int = 2 * 10**6) -> BoundReport:
    """Compare measured truncation errors with the bounds over ``iterations`` steps.

    Parameters
    ----------
    method : {"gmrest", "chebyshevt"}
    epsilon : float
        Simulator accuracy.  With ``strict`` every simulated truncation uses
        ``epsilon / n_F``, where ``n_F`` is the number of truncations in one
        evaluation of ``F``.  The bounds keep ``epsilon``.
    X0 : LowRankMatrix, optional
        Start matrix, all ones by default.
    warm_start_after : int
        If positive, run the truncated method for that many iterations first.
        Both compared runs then start from the resulting iterate.
    sigma : float, optional
        ``||P^{-1} A||`` estimate.  Defaults to ``d + c`` of ``ellipse`` when
        given, otherwise to :func:`estimate_sigma`.
    pinv : float, optional
        ``||P^{-1}||`` estimate, power iteration by default.
    measured_eps_R : bool
        ChebyshevT only.  When set, the bound at iteration ``l`` uses the
        largest residual-truncation error measured in the residuals
        ``R_hat_0..R_hat_{l-1}``.
    """
    if method not in ("gmrest", "chebyshevt"):
        raise ConfigError(f"bound harness supports gmrest and chebyshevt, got {method!r}")
    if prob.M * prob.m > max_entries:
        raise ConfigError(
            f"harness works in full format; M*m = {prob.M * prob.m} exceeds the cap {max_entries}"
        )
    if method == "chebyshevt" and ellipse is None:
        raise ConfigError("chebyshevt harness needs ellipse parameters")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown bound variant {variant!r}; choose from {VARIANTS}")
    if sigma is None:
        sigma = ellipse.d + ellipse.c if ellipse is not None else estimate_sigma(prob, precond)
    if pinv is None:
        pinv = precond.pinv_norm or precond.estimate_inverse_norm()
    X0 = X0 if X0 is not None else LowRankMatrix.outer(np.ones(prob.M), np.ones(prob.m))
    sim_eps = epsilon / _f_truncations(prob) if strict else epsilon
    sim = TruncationConfig("simulator", epsilon=sim_eps, seed=seed)
    full = TruncationConfig("none")
    # ChebyshevT reports the pre-loop update as iterate 1
    loop = iterations if method == "gmrest" else max(iterations - 1, 1)
    base = SolverConfig(method, loop, None, sim, ellipse, record_history=False)

    if warm_start_after > 0:
        warm_loop = warm_start_after if method == "gmrest" else max(warm_start_after - 1, 1)
        X0, _ = solve(prob, precond, replace(base, iterations=warm_loop,
                                             truncation=TruncationConfig("simulator", epsilon=sim_eps,
                                                                         seed=[seed, 2])))
    it_t, ex_t, _ = _trajectory(prob, precond, base, X0)
    it_f, ex_f, _ = _trajectory(prob, precond, replace(base, truncation=full), X0)

    report = BoundReport(method, epsilon, variant, sigma, pinv)
    n = min(iterations, max(it_t), max(it_f))
    if method == "gmrest":
        X0d = X0.to_dense()
        basis, basis_noise = _truncated_powers(prob, precond, X0d, n, sim_eps, variant,
                                  np.random.default_rng([seed, 3]))
        for l in range(1, n + 1):
            inp = BoundInputs(epsilon, sigma, pinv, variant, c=ex_f[l]["y"], d=ex_t[l]["y"])
            xt, xf = it_t[l].to_dense(), it_f[l].to_dense()
            report.rows.append(BoundRow(
                l,
                float(np.linalg.norm(xt - xf)),
                gmrest_iterate_bound(inp),
                relative_residual(prob, it_f[l]),
                relative_residual(prob, it_t[l]),
                l - 1,
                basis[l - 1],
                gmrest_basis_bound(l - 1, inp),
                noise=_rounding(xt, xf),
                basis_noise=basis_noise[l - 1],
            ))
        return report

    # ChebyshevT: alpha_i, beta_i of loop step i arrive with iterate i + 1
    alpha = [ex_t[k]["alpha"] for k in range(2, n + 1)]
    beta = [ex_t[k]["beta"] for k in range(2, n + 1)]
    Bd = prob.B.to_dense()
    eps_R = 0.0
    for l in range(1, n + 1):
        # R_hat_{l-1} was formed from iterate l - 1
        R_exact = precond.solve(Bd - prob.apply_dense(it_t[l - 1].to_dense()))
        eps_R = max(eps_R, float(np.linalg.norm(ex_t[l]["R"].to_dense() - R_exact)))
        inp = BoundInputs(epsilon, sigma, pinv, variant, center=ellipse.d, alpha=alpha, beta=beta,
                          epsilon_R=eps_R if measured_eps_R else None)
        xt, xf = it_t[l].to_dense(), it_f[l].to_dense()
        report.rows.append(BoundRow(
            l,
            float(np.linalg.norm(xt - xf)),
            chebyshevt_iterate_bound(l, inp),
            relative_residual(prob, it_f[l]),
            relative_residual(prob, it_t[l]),
            epsilon_R=inp.eps_R,
            noise=_rounding(xt, xf),
        ))
    return report
