"""Classical vector iterations on a single linear system ``A x = b``.

They serve two purposes: as independent oracles for the truncated solvers
(applied to the Kronecker system with ``I ⊗ P`` preconditioning) and as the
per-block baseline.  Operators are passed as callables so the same code runs
on sparse blocks and on explicitly assembled global matrices.

Each method takes ``callback(it, x)`` which sees every iterate, starting with
``x0`` at ``it = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

__all__ = [
    "VectorResult",
    "GivensLSQ",
    "gmres",
    "chebyshev",
    "chebyshev_coefficients",
    "bicgstab",
    "givens",
]

Op = Callable[[np.ndarray], np.ndarray]


def _identity(x):
    return x


@dataclass
class VectorResult:
    x: np.ndarray
    iterations: int
    breakdown: Optional[str] = None
    coefficients: list = field(default_factory=list)


def givens(a: float, b: float) -> tuple[float, float]:
    """Rotation ``(c, s)`` with ``[c s; -s c] @ [a; b] = [r; 0]``."""
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


class GivensLSQ:
    """Incremental QR of the Hessenberg matrix for ``min ||beta e_1 - H y||``."""

    def __init__(self, beta: float, size: int):
        self.R = np.zeros((size + 1, size))
        self.cs = np.zeros(size)
        self.sn = np.zeros(size)
        self.g = np.zeros(size + 1)
        self.g[0] = beta
        self.n = 0

    def add_column(self, h: np.ndarray) -> float:
        """Append Hessenberg column ``h`` (length ``n + 2``); returns the residual estimate."""
        i = self.n
        col = np.array(h, dtype=float)
        for k in range(i):
            a, b = col[k], col[k + 1]
            col[k] = self.cs[k] * a + self.sn[k] * b
            col[k + 1] = -self.sn[k] * a + self.cs[k] * b
        self.cs[i], self.sn[i] = givens(col[i], col[i + 1])
        col[i] = self.cs[i] * col[i] + self.sn[i] * col[i + 1]
        col[i + 1] = 0.0
        self.R[: i + 2, i] = col
        self.g[i], self.g[i + 1] = self.cs[i] * self.g[i], -self.sn[i] * self.g[i]
        self.n = i + 1
        return abs(self.g[i + 1])

    def solve(self) -> np.ndarray:
        n = self.n
        return scipy.linalg.solve_triangular(self.R[:n, :n], self.g[:n])


def gmres(matvec: Op, b: np.ndarray, x0: Optional[np.ndarray] = None, iterations: int = 10,
          psolve: Op = _identity, callback=None, breakdown_tol: float = 1e-14) -> VectorResult:
    """Left-preconditioned GMRES without restart (Arnoldi with modified Gram-Schmidt).

    ``coefficients`` holds the least-squares solution ``y`` of the final step.
    """
    x0 = np.zeros_like(b, dtype=float) if x0 is None else np.asarray(x0, dtype=float)
    if callback:
        callback(0, x0)
    r = psolve(b - matvec(x0))
    beta = np.linalg.norm(r)
    if beta == 0.0:
        return VectorResult(x0.copy(), 0)
    V = [r / beta]
    H = np.zeros((iterations + 1, iterations))
    lsq = GivensLSQ(beta, iterations)
    breakdown = None
    y = np.zeros(0)
    for i in range(iterations):
        w = psolve(matvec(V[i]))
        for k in range(i + 1):
            H[k, i] = V[k] @ w
            w = w - H[k, i] * V[k]
        H[i + 1, i] = np.linalg.norm(w)
        lsq.add_column(H[: i + 2, i])
        y = lsq.solve()
        if callback:
            callback(lsq.n, x0 + np.column_stack(V[: lsq.n]) @ y)
        if H[i + 1, i] <= breakdown_tol * np.abs(H[: i + 2, : i + 1]).max():
            breakdown = "lucky"
            break
        V.append(w / H[i + 1, i])
    x = x0 + np.column_stack(V[: lsq.n]) @ y
    return VectorResult(x, lsq.n, breakdown, list(y))


def chebyshev_coefficients(d: float, c: float, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``t_0..t_{l+1}`` and ``alpha_1..alpha_l``, ``beta_1..beta_l`` of the Chebyshev recursion.

    ``alpha[i - 1]`` and ``beta[i - 1]`` are the coefficients of loop step
    ``i``.
    """
    if c == 0.0:
        raise ValueError("degenerate ellipse c = 0 is not supported")
    t = np.empty(l + 2)
    t[0], t[1] = 1.0, d / c
    for i in range(1, l + 1):
        t[i + 1] = 2.0 * (d / c) * t[i] - t[i - 1]
    i = np.arange(1, l + 1)
    alpha = 2.0 * t[i] / (c * t[i + 1])
    beta = t[i - 1] / t[i + 1]
    return t, alpha, beta


def chebyshev(matvec: Op, b: np.ndarray, d: float, c: float, x0: Optional[np.ndarray] = None,
              iterations: int = 10, psolve: Op = _identity, callback=None) -> VectorResult:
    """Left-preconditioned Chebyshev iteration for spectra in the ellipse ``(d, c)``.

    The first update ``x += r_0 / d`` is reported as iterate 1 and every loop
    step as the next one, so ``iterations`` loop steps give
    ``iterations + 1`` updates.
    """
    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    if callback:
        callback(0, x)
    _, alpha, beta = chebyshev_coefficients(d, c, iterations)
    phi = psolve(b - matvec(x)) / d
    x = x + phi
    if callback:
        callback(1, x)
    for i in range(iterations):
        r = psolve(b - matvec(x))
        phi = alpha[i] * r + beta[i] * phi
        x = x + phi
        if callback:
            callback(i + 2, x)
    return VectorResult(x, iterations + 1)


def bicgstab(matvec: Op, b: np.ndarray, x0: Optional[np.ndarray] = None, iterations: int = 10,
             psolve: Op = _identity, callback=None, tol: float = 0.0,
             breakdown_tol: float = 1e-14) -> VectorResult:
    """Right-preconditioned Bi-CGstab in the form of van der Vorst (1992).

    Stops early when ``||s|| <= tol ||b||`` (half step) and flags a breakdown
    when ``rho`` or ``omega`` vanish relative to the residual scale.
    """
    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    if callback:
        callback(0, x)
    r = b - matvec(x)
    rt = r.copy()
    nb = np.linalg.norm(b)
    rho_old = alpha = omega = 1.0
    v = np.zeros_like(r)
    p = np.zeros_like(r)
    for it in range(1, iterations + 1):
        rn = np.linalg.norm(r)
        if rn == 0.0:
            return VectorResult(x, it - 1)
        rho = rt @ r
        if abs(rho) <= breakdown_tol * np.linalg.norm(rt) * rn:
            return VectorResult(x, it - 1, "rho")
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        ph = psolve(p)
        v = matvec(ph)
        alpha = rho / (rt @ v)
        s = r - alpha * v
        if np.linalg.norm(s) <= tol * nb:
            x = x + alpha * ph
            if callback:
                callback(it, x)
            return VectorResult(x, it)
        sh = psolve(s)
        t = matvec(sh)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * ph + omega * sh
        r = s - omega * t
        rho_old = rho
        if callback:
            callback(it, x)
        if abs(omega) <= breakdown_tol:
            return VectorResult(x, it, "omega")
    return VectorResult(x, iterations)
