"""The parameter-dependent matrix equation ``F(X) = B``.

``m`` linear systems

    (A_0 + sum_k s_k D_k[i] A_k) x_i = b,    i = 1..m,

are collected column-wise into ``X = [x_1 | ... | x_m]`` which turns the
block-diagonal system into

    F(X) = A_0 X + sum_k s_k A_k X diag(D_k) = B.

Each ``D_k`` is stored as the length-``m`` vector of its diagonal; applying it
to a factored iterate is a row scaling of ``V``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigError, FactorizationError
from .lowrank import NO_TRUNCATION, LowRankMatrix, TruncationConfig, lr_add, truncate

__all__ = [
    "ParameterGrid",
    "MatrixEquationProblem",
    "Preconditioner",
    "build_sample_diagonals",
    "apply_F",
    "build_preconditioner",
    "apply_precond",
    "residual",
    "relative_residual",
    "block_residuals",
    "kronecker_operator",
]


@dataclass
class ParameterGrid:
    """Sample sets of the parameters and the reference value of each.

    ``samples[k]`` is the sample list of parameter ``k``; the first parameter
    varies fastest in the column ordering of ``X``.  ``reference`` defaults to
    the first sample of each set, which keeps the offset diagonals sparse and
    the base operator ``A_0`` non-singular.  ``scale[k]`` multiplies the
    coefficient matrix of parameter ``k`` (the kinematic viscosity for the
    fluid density).
    """

    samples: list
    reference: Optional[list] = None
    scale: Optional[list] = None
    names: Optional[list] = None

    def __post_init__(self):
        self.samples = [np.asarray(s, dtype=float).ravel() for s in self.samples]
        K = len(self.samples)
        if K == 0:
            raise ConfigError("at least one parameter is required")
        for k, s in enumerate(self.samples):
            if s.size == 0:
                raise ConfigError(f"sample list of parameter {k} is empty")
            if not np.all(np.isfinite(s)) or np.any(s <= 0):
                raise ConfigError(f"samples of parameter {k} must be finite and positive")
        if self.reference is None:
            self.reference = [float(s[0]) for s in self.samples]
        if self.scale is None:
            self.scale = [1.0] * K
        if self.names is None:
            self.names = [f"p{k + 1}" for k in range(K)]
        self.reference = [float(r) for r in self.reference]
        self.scale = [float(c) for c in self.scale]
        if not (len(self.reference) == len(self.scale) == len(self.names) == K):
            raise ConfigError("samples, reference, scale and names must have equal length")

    @classmethod
    def fsi(cls, mu, lam, rho, nu_f=1.0, reference_indices=(0, 0, 0)):
        """Shear modulus, first Lame parameter and fluid density samples."""
        samples = [np.asarray(mu, float), np.asarray(lam, float), np.asarray(rho, float)]
        ref = [float(s[i]) for s, i in zip(samples, reference_indices)]
        return cls(samples, ref, [1.0, 1.0, float(nu_f)], ["mu", "lambda", "rho"])

    @property
    def sizes(self) -> tuple:
        return tuple(s.size for s in self.samples)

    @property
    def m(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def K(self) -> int:
        return len(self.samples)

    def offsets(self, k: int) -> np.ndarray:
        return self.samples[k] - self.reference[k]

    def corner_indices(self) -> np.ndarray:
        """Column indices whose parameters are all at an end of their range."""
        strides = np.cumprod((1,) + self.sizes[:-1])
        ends = [sorted({0, n - 1}) for n in self.sizes]
        return np.array(
            sorted(int(np.dot(c, strides)) for c in itertools.product(*ends)), dtype=int
        )


def build_sample_diagonals(grid: ParameterGrid) -> list:
    """Diagonals of the Kronecker-ordered sample matrices.

    For three parameters this is ``D_1 = I ⊗ I ⊗ diag(mu)``,
    ``D_2 = I ⊗ diag(lambda) ⊗ I`` and ``D_3 = diag(rho) ⊗ I ⊗ I`` (offsets
    from the reference values), so every parameter combination occurs in
    exactly one column.
    """
    sizes = grid.sizes
    D = []
    for k in range(grid.K):
        before = int(np.prod(sizes[:k]))
        after = int(np.prod(sizes[k + 1:]))
        D.append(np.kron(np.ones(after), np.kron(grid.offsets(k), np.ones(before))))
    return D


@dataclass
class MatrixEquationProblem:
    """Coefficient matrices ``A_0..A_K``, diagonals ``D_1..D_K`` and ``B``.

    ``A`` holds the ``K + 1`` sparse matrices with ``A[0]`` the base operator,
    ``D`` the ``K`` diagonal vectors, ``scale`` the ``K`` scalar factors and
    ``B`` the right-hand side as a :class:`LowRankMatrix`.
    """

    A: list
    D: list
    B: LowRankMatrix
    scale: Optional[list] = None
    _fro_B: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        self.A = [sp.csc_matrix(a, dtype=float) for a in self.A]
        self.D = [np.asarray(d, dtype=float).ravel() for d in self.D]
        if len(self.A) < 2:
            raise ConfigError("need A_0 and at least one parameter matrix (K >= 1)")
        if len(self.D) != len(self.A) - 1:
            raise ConfigError(f"{len(self.A)} matrices need {len(self.A) - 1} diagonals, got {len(self.D)}")
        if self.scale is None:
            self.scale = [1.0] * self.K
        self.scale = [float(s) for s in self.scale]
        if len(self.scale) != self.K:
            raise ConfigError("scale must have one entry per parameter matrix")
        M = self.A[0].shape[0]
        for k, a in enumerate(self.A):
            if a.shape != (M, M):
                raise ConfigError(f"A{k} has shape {a.shape}, expected {(M, M)}")
        m = self.D[0].size
        for k, d in enumerate(self.D):
            if d.size != m:
                raise ConfigError(f"D{k + 1} has length {d.size}, expected {m}")
        if self.B.shape != (M, m):
            raise ConfigError(f"B has shape {self.B.shape}, expected {(M, m)}")
        self._fro_B = self.B.norm()

    @property
    def K(self) -> int:
        return len(self.A) - 1

    @property
    def M(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.D[0].size

    @property
    def norm_B(self) -> float:
        return self._fro_B

    def block_matrix(self, i: int) -> sp.csc_matrix:
        """The ``i``-th diagonal block ``A_0 + sum_k s_k D_k[i] A_k``."""
        out = self.A[0].copy()
        for a, d, s in zip(self.A[1:], self.D, self.scale):
            if d[i] != 0.0 and s != 0.0:
                out = out + (s * d[i]) * a
        return sp.csc_matrix(out)

    def terms(self, X: LowRankMatrix) -> list:
        """The summands ``A_0 X`` and ``s_k A_k X D_k`` in factored form.

        Summands that vanish identically (zero diagonal or zero scale) are
        skipped.
        """
        if X.shape != (self.M, self.m):
            raise ValueError(f"dimension mismatch: iterate {X.shape}, problem {(self.M, self.m)}")
        out = [LowRankMatrix._trusted(np.asarray(self.A[0] @ X.U), X.V)]
        for a, d, s in zip(self.A[1:], self.D, self.scale):
            if s == 0.0 or not np.any(d):
                continue
            out.append(LowRankMatrix._trusted(np.asarray(a @ X.U), (s * d)[:, None] * X.V))
        return out

    def apply_dense(self, X: np.ndarray, transpose: bool = False) -> np.ndarray:
        """``F`` (or its adjoint) on a dense ``M x m`` array."""
        A0 = self.A[0].T if transpose else self.A[0]
        Y = np.asarray(A0 @ X)
        for a, d, s in zip(self.A[1:], self.D, self.scale):
            ak = a.T if transpose else a
            Y += np.asarray(ak @ X) * (s * d)[None, :]
        return Y


def kronecker_operator(prob: MatrixEquationProblem) -> sp.csr_matrix:
    """``I ⊗ A_0 + sum_k s_k diag(D_k) ⊗ A_k`` acting on column-stacked ``vec(X)``."""
    op = sp.kron(sp.identity(prob.m), prob.A[0])
    for a, d, s in zip(prob.A[1:], prob.D, prob.scale):
        op = op + sp.kron(sp.diags(s * d), a)
    return sp.csr_matrix(op)


def apply_F(
    prob: MatrixEquationProblem, X: LowRankMatrix, cfg: TruncationConfig = NO_TRUNCATION
) -> tuple[LowRankMatrix, int]:
    """Evaluate ``T(F(X))`` with consecutive pairwise truncation.

    The summands are accumulated left to right starting at ``A_0 X`` and the
    partial sum is truncated after every addition, so ``K + 1`` non-zero
    summands cost ``K`` truncations.  Returns the result and the number of
    truncations performed.
    """
    terms = prob.terms(X)
    acc = terms[0]
    count = 0
    for t in terms[1:]:
        acc = lr_add(acc, t)
        if cfg.active:
            acc, _ = truncate(acc, cfg)
            count += 1
    return acc, count


@dataclass
class Preconditioner:
    """Sparse LU factorization of one ``M x M`` matrix, applied as ``I ⊗ P``."""

    matrix: sp.csc_matrix
    kind: str
    lu: object = field(repr=False, default=None)
    pinv_norm: Optional[float] = None

    def __post_init__(self):
        self.matrix = sp.csc_matrix(self.matrix, dtype=float)
        if self.lu is None:
            if not np.all(np.isfinite(self.matrix.data)):
                raise FactorizationError(f"{self.kind} preconditioner has non-finite entries")
            try:
                self.lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                raise FactorizationError(f"{self.kind} preconditioner is singular: {exc}") from exc

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    def solve(self, Y: np.ndarray, trans: str = "N") -> np.ndarray:
        if Y.size == 0:
            return np.array(Y, dtype=float)
        return self.lu.solve(np.ascontiguousarray(Y, dtype=float), trans=trans)

    def estimate_inverse_norm(self, iterations: int = 20, seed: int = 0) -> float:
        """Power iteration on ``P^{-T} P^{-1}`` for ``||P^{-1}||_2``."""
        x = np.random.default_rng(seed).standard_normal(self.M)
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(iterations):
            z = self.solve(self.solve(x), trans="T")
            nz = np.linalg.norm(z)
            if nz == 0.0:
                break
            est = np.sqrt(nz)
            x = z / nz
        self.pinv_norm = float(est)
        return self.pinv_norm


def _midpoints(prob: MatrixEquationProblem) -> list:
    return [0.5 * (float(d.min()) + float(d.max())) for d in prob.D]


def build_preconditioner(prob: MatrixEquationProblem, kind: str = "mean-T", time_problem=None) -> Preconditioner:
    """Factorize one of the block preconditioners.

    ``"A0"``
        the base operator ``A_0``.
    ``"mean-T"``
        ``A_0 + sum_k s_k mean_k A_k`` with ``mean_k`` the midpoint of the
        range of offsets in ``D_k``.
    ``"mean-T-time"``
        the mean-based preconditioner of the theta-scheme step operator of
        ``time_problem``.
    """
    if kind == "A0":
        return Preconditioner(prob.A[0], kind)
    if kind == "mean-T":
        P = prob.A[0].copy()
        for a, mu, s in zip(prob.A[1:], _midpoints(prob), prob.scale):
            if mu != 0.0 and s != 0.0:
                P = P + (s * mu) * a
        return Preconditioner(P, kind)
    if kind == "mean-T-time":
        if time_problem is None:
            raise ConfigError("mean-T-time preconditioner needs a time problem")
        from .timestepping import build_step_operator

        step = build_step_operator(time_problem)
        pre = build_preconditioner(step, "mean-T")
        pre.kind = kind
        return pre
    raise ConfigError(f"unknown preconditioner kind {kind!r}")


def apply_precond(p: Preconditioner, X: LowRankMatrix) -> LowRankMatrix:
    """``(I ⊗ P)^{-1} vec(X)``: a solve against the left factor only."""
    if X.shape[0] != p.M:
        raise ValueError(f"dimension mismatch: preconditioner {p.M}, iterate {X.shape}")
    if X.rank == 0:
        return X
    return LowRankMatrix._trusted(p.solve(X.U), X.V)


def residual(
    prob: MatrixEquationProblem, X: LowRankMatrix, cfg: TruncationConfig = NO_TRUNCATION
) -> tuple[LowRankMatrix, float]:
    """``T(B - T(F(X)))`` and its Frobenius norm."""
    FX, _ = apply_F(prob, X, cfg)
    R = lr_add(prob.B, -FX)
    R, _ = truncate(R, cfg)
    return R, R.norm()


def relative_residual(prob: MatrixEquationProblem, X: LowRankMatrix) -> float:
    """``||B - F(X)||_F / ||B||_F`` evaluated without truncation."""
    _, nrm = residual(prob, X)
    return nrm / prob.norm_B if prob.norm_B > 0 else nrm


def block_residuals(prob: MatrixEquationProblem, X: LowRankMatrix) -> np.ndarray:
    """Per-column relative residuals ``||b_i - A_i x_i|| / ||b_i||``."""
    FX, _ = apply_F(prob, X)
    R = lr_add(prob.B, -FX)
    num = R.column_norms()
    den = prob.B.column_norms()
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)
