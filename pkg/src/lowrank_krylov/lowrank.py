"""Factored low-rank matrices and the SVD truncation operator.

A :class:`LowRankMatrix` stores ``X = U @ V.T`` with ``U`` of shape ``(M, r)``
and ``V`` of shape ``(m, r)``.  For order-two tensors the Tucker format used by
hierarchical tensor toolboxes reduces to exactly this pair of factors, so all
solver arithmetic (sums, scalings, Frobenius inner products) is done on the
factors without ever forming the ``M x m`` matrix.

Truncation comes in three flavours, selected by :class:`TruncationConfig`:

``exact``
    best rank-``R`` approximation in the Frobenius norm (QR of both factors
    followed by an SVD of the small core).
``simulator``
    adds a random perturbation of Frobenius norm exactly ``epsilon``; the rank
    is not reduced.  Used to evaluate error bounds under worst-case truncation.
``none``
    identity; the untruncated reference path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LowRankMatrix",
    "TruncationConfig",
    "lr_add",
    "lr_scale",
    "lr_inner",
    "truncate",
    "NO_TRUNCATION",
]


class LowRankMatrix:
    """Immutable rank-``r`` matrix ``U @ V.T``.

    Parameters
    ----------
    U : array_like, shape (M, r)
    V : array_like, shape (m, r)
    """

    __slots__ = ("U", "V")

    def __init__(self, U, V):
        U = np.array(U, dtype=float, ndmin=2, copy=True)
        V = np.array(V, dtype=float, ndmin=2, copy=True)
        if U.ndim != 2 or V.ndim != 2:
            raise ValueError("factors must be two-dimensional")
        if U.shape[1] != V.shape[1]:
            raise ValueError(
                f"factor rank mismatch: U has shape {U.shape}, V has shape {V.shape}"
            )
        if U.shape[1] > min(U.shape[0], V.shape[0]):
            raise ValueError(
                f"rank {U.shape[1]} exceeds min(M, m) = {min(U.shape[0], V.shape[0])}"
            )
        U.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    def __setattr__(self, name, value):
        raise AttributeError("LowRankMatrix is immutable")

    @classmethod
    def _trusted(cls, U, V):
        # skips copying; callers guarantee fresh arrays with consistent shapes
        obj = object.__new__(cls)
        U.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(obj, "U", U)
        object.__setattr__(obj, "V", V)
        return obj

    @classmethod
    def zeros(cls, M: int, m: int) -> "LowRankMatrix":
        return cls._trusted(np.zeros((M, 0)), np.zeros((m, 0)))

    @classmethod
    def from_dense(cls, X) -> "LowRankMatrix":
        """Exact factorization of a dense matrix (rank ``min(M, m)``)."""
        X = np.array(X, dtype=float, ndmin=2)
        M, m = X.shape
        if M <= m:
            return cls._trusted(np.eye(M), X.T.copy())
        return cls._trusted(X.copy(), np.eye(m))

    @classmethod
    def outer(cls, u, v) -> "LowRankMatrix":
        """Rank-one matrix ``u v^T``."""
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        v = np.asarray(v, dtype=float).reshape(-1, 1)
        return cls(u, v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.U @ self.V.T

    def norm(self) -> float:
        """Frobenius norm computed from the factors."""
        if self.rank == 0:
            return 0.0
        # QR keeps the result accurate when the factors are nearly cancelling
        R = np.linalg.qr(self.U, mode="r")
        return float(np.linalg.norm(self.V @ R.T))

    def column_norms(self) -> np.ndarray:
        """Euclidean norm of every column of the represented matrix."""
        if self.rank == 0:
            return np.zeros(self.shape[1])
        R = np.linalg.qr(self.U, mode="r")
        return np.linalg.norm(self.V @ R.T, axis=1)

    def column(self, i: int) -> np.ndarray:
        return self.U @ self.V[i]

    def storage_entries(self) -> int:
        """Entries of the Tucker representation ``(M + m + r) r``."""
        M, m = self.shape
        return (M + m + self.rank) * self.rank

    def __add__(self, other):
        return lr_add(self, other)

    def __sub__(self, other):
        return lr_add(self, lr_scale(other, -1.0))

    def __neg__(self):
        return lr_scale(self, -1.0)

    def __mul__(self, s):
        return lr_scale(self, s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return lr_scale(self, 1.0 / s)

    def __repr__(self):
        M, m = self.shape
        return f"LowRankMatrix(M={M}, m={m}, rank={self.rank})"


def _check_same_shape(a: LowRankMatrix, b: LowRankMatrix) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def lr_add(a: LowRankMatrix, b: LowRankMatrix) -> LowRankMatrix:
    """Exact sum by factor concatenation.

    The rank of the result is ``a.rank + b.rank``.  When that would exceed
    ``min(M, m)`` the sum is stored as an exact full-rank factorization
    instead, so the rank bound of :class:`LowRankMatrix` always holds.
    """
    _check_same_shape(a, b)
    if b.rank == 0:
        return a
    if a.rank == 0:
        return b
    M, m = a.shape
    if a.rank + b.rank > min(M, m):
        return LowRankMatrix.from_dense(a.to_dense() + b.to_dense())
    return LowRankMatrix._trusted(np.hstack([a.U, b.U]), np.hstack([a.V, b.V]))


def lr_scale(a: LowRankMatrix, s: float) -> LowRankMatrix:
    return LowRankMatrix._trusted(a.U, float(s) * a.V)


def lr_inner(a: LowRankMatrix, b: LowRankMatrix) -> float:
    """Frobenius inner product ``trace(A^T B)`` in ``O((M + m) r_a r_b)``."""
    _check_same_shape(a, b)
    if a.rank == 0 or b.rank == 0:
        return 0.0
    return float(np.sum((a.U.T @ b.U) * (a.V.T @ b.V)))


@dataclass
class TruncationConfig:
    """How :func:`truncate` maps a matrix back to low rank.

    ``mode`` is ``"exact"`` (best rank-``rank`` approximation), ``"simulator"``
    (additive perturbation of norm ``epsilon`` from a seeded stream) or
    ``"none"``.  The simulator draws a fresh direction on every call; ``seed``
    only fixes the stream.
    """

    mode: str = "exact"
    rank: int = 10
    epsilon: float = 0.0
    seed: Optional[int] = 0
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("exact", "simulator", "none"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "exact" and (int(self.rank) != self.rank or self.rank < 1):
            raise ValueError(f"target rank must be a positive integer, got {self.rank}")
        if self.epsilon < 0:
            raise ValueError("simulator epsilon must be non-negative")
        self.rank = int(self.rank)
        self.rng = np.random.default_rng(self.seed)

    @property
    def active(self) -> bool:
        return self.mode != "none"

    def fresh(self, seed=None) -> "TruncationConfig":
        """Copy with a restarted random stream."""
        return TruncationConfig(
            self.mode, self.rank, self.epsilon, self.seed if seed is None else seed
        )


NO_TRUNCATION = TruncationConfig(mode="none")


def _qr(A: np.ndarray):
    # LAPACK on a Fortran-ordered copy; about twice as fast as np.linalg.qr here
    return sla.qr(np.array(A, order="F"), mode="economic", overwrite_a=True, check_finite=False)


def truncate(a: LowRankMatrix, cfg: TruncationConfig) -> tuple[LowRankMatrix, float]:
    """Apply the truncation operator.

    Returns the truncated matrix together with the Frobenius norm of the
    change, ``||a - T(a)||_F``.

    In exact mode the result is the best Frobenius-norm approximation of rank
    at most ``cfg.rank``.  Singular values tied at the cutoff are resolved by
    the order returned from the SVD, so the factors are not unique in that
    case although the error is.
    """
    if cfg.mode == "none":
        return a, 0.0
    if cfg.mode == "simulator":
        if cfg.epsilon == 0.0:
            return a, 0.0
        M, m = a.shape
        z = cfg.rng.uniform(0.0, 1.0, size=(M, m))
        pert = (cfg.epsilon / np.linalg.norm(z)) * z
        return LowRankMatrix.from_dense(a.to_dense() + pert), cfg.epsilon

    R = cfg.rank
    if a.rank <= R:
        return a, 0.0
    Qu, Ru = _qr(a.U)
    Qv, Rv = _qr(a.V)
    W, s, Zt = np.linalg.svd(Ru @ Rv.T)
    keep = min(R, int(np.count_nonzero(s)))
    err = float(np.sqrt(np.sum(s[keep:] ** 2)))
    U = Qu @ W[:, :keep]
    V = Qv @ (Zt[:keep].T * s[:keep])
    return LowRankMatrix._trusted(U, V), err
