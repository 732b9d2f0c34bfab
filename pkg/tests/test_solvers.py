import numpy as np
import pytest
import scipy.sparse as sp

from lowrank_krylov import (
    ConfigError,
    EllipseParams,
    LowRankMatrix,
    MatrixEquationProblem,
    Preconditioner,
    SolverConfig,
    SolverFailure,
    TruncationConfig,
    build_preconditioner,
    estimate_ellipse,
    relative_residual,
    solve,
)
from lowrank_krylov.classical import chebyshev_coefficients
from lowrank_krylov.solvers import BlockwiseConfig, reference_blockwise_solve
from oracles import generated_random, kron_dense, max_iterate_gap, random_problem, unvec, vec

EXACT = TruncationConfig("exact", 30)


def _exact_solution(prob):
    x = np.linalg.solve(kron_dense(prob), vec(prob.B.to_dense()))
    return unvec(x, prob.M, prob.m)


def _dense_relres(prob, X):
    Xd = X.to_dense()
    R = prob.B.to_dense() - prob.apply_dense(Xd)
    return np.linalg.norm(R) / np.linalg.norm(prob.B.to_dense())


@pytest.mark.parametrize("method", ["gmrest", "chebyshevt", "bicgstabt"])
def test_single_block_reduces_to_classical_method(method):
    prob, _ = random_problem(15, (1,), seed=11)
    assert prob.m == 1
    P = build_preconditioner(prob, "A0")
    el = estimate_ellipse(prob, P, corner_only=False)
    assert max_iterate_gap(prob, P, method, 8, el) <= 1e-10


@pytest.mark.parametrize("method", ["gmrest", "chebyshevt", "bicgstabt"])
def test_global_oracle_M40_m27(method):
    gen = generated_random(40, (3, 3, 3), seed=3)
    prob = gen.problem
    P = build_preconditioner(prob, "mean-T")
    el = estimate_ellipse(prob, P, corner_only=False)
    assert max_iterate_gap(prob, P, method, 10, el) <= 1e-9


def test_chebyshev_coefficients_hand_values():
    t, alpha, beta = chebyshev_coefficients(1.0, 0.6, 3)
    assert t[1] == pytest.approx(1 / 0.6, abs=1e-12)
    assert t[2] == pytest.approx(2 * (1 / 0.6) ** 2 - 1, abs=1e-12)
    assert alpha[0] == pytest.approx(2 * t[1] / (0.6 * t[2]), abs=1e-12)
    assert beta[0] == pytest.approx(1 / t[2], abs=1e-12)
    assert round(alpha[0], 4) == 1.2195 and round(beta[0], 4) == 0.2195


def test_config_errors():
    with pytest.raises(ConfigError, match="ellipse"):
        SolverConfig("chebyshevt", 6, None)
    with pytest.raises(ConfigError, match="c > 0"):
        SolverConfig("chebyshevt", 6, None, ellipse=EllipseParams(1.0, 0.0))
    with pytest.raises(ConfigError, match="exceeds"):
        SolverConfig("gmrestr", 6, 7)
    with pytest.raises(ConfigError):
        SolverConfig("cg", 6)
    with pytest.raises(ConfigError):
        SolverConfig("gmrest", 0)


def test_cycle_counts():
    assert SolverConfig("gmrestr", 18, 6).cycles() == (3, 6)
    assert SolverConfig("gmrestr", 20, 6).cycles() == (3, 6)
    assert SolverConfig("gmrest", 18, 6).cycles() == (1, 18)


def test_divisor_equal_to_budget_is_single_gmrest(small):
    gen, P = small
    X0 = LowRankMatrix.outer(np.ones(gen.problem.M), np.ones(gen.problem.m))
    a, _ = solve(gen.problem, P, SolverConfig("gmrest", 6, None, EXACT), X0)
    b, _ = solve(gen.problem, P, SolverConfig("gmrestr", 6, 6, EXACT), X0)
    np.testing.assert_array_equal(a.to_dense(), b.to_dense())


def test_restarted_gmres_beats_single_cycle(small):
    gen, P = small
    X0 = LowRankMatrix.outer(np.ones(gen.problem.M), np.ones(gen.problem.m))
    _, one = solve(gen.problem, P, SolverConfig("gmrest", 6, None, EXACT), X0)
    _, two = solve(gen.problem, P, SolverConfig("gmrestr", 12, 6, EXACT), X0)
    assert len(two.coefficients) == 2
    assert two.final_relres <= one.final_relres


@pytest.mark.parametrize("method", ["gmrestr", "chebyshevt", "bicgstabt"])
def test_reported_residual_matches_recomputation(small, method):
    gen, P = small
    prob = gen.problem
    cfg = SolverConfig(method, 6, 3, EXACT, ellipse=EllipseParams(1.0, 0.6))
    X, rec = solve(prob, P, cfg)
    assert abs(rec.rows[-1].relres - _dense_relres(prob, X)) <= 1e-10
    assert abs(rec.final_relres - relative_residual(prob, X)) <= 1e-12


@pytest.mark.parametrize("method", ["gmrestr", "chebyshevt", "bicgstabt"])
def test_rank_cap(small, method):
    gen, P = small
    R = 5
    ranks = []
    cfg = SolverConfig(method, 6, 3, TruncationConfig("exact", R), ellipse=EllipseParams(1.0, 0.6),
                       truncate_s=True)
    _, rec = solve(gen.problem, P, cfg, callback=lambda k, X, e: ranks.append(X.rank))
    assert max(ranks) <= R
    assert all(r.rank_after <= R and r.rank_before <= 2 * R for r in rec.rows)
    assert rec.truncations > 0


def test_untruncated_s_update_peaks_at_three_R(small):
    gen, P = small
    cfg = SolverConfig("bicgstabt", 6, 3, TruncationConfig("exact", 5))
    _, rec = solve(gen.problem, P, cfg)
    assert max(r.rank_before for r in rec.rows) <= 15
    assert max(r.rank_after for r in rec.rows) <= 5


def test_gmrest_residual_nonincreasing_without_truncation():
    prob, _ = random_problem(20, (2, 3), seed=5)
    ident = Preconditioner(sp.identity(20), "identity")
    cfg = SolverConfig("gmrest", 12, None, TruncationConfig("none"))
    _, rec = solve(prob, ident, cfg)
    hist = rec.relres_history()
    assert np.all(np.diff(hist) <= 1e-13)
    # the Givens estimate tracks the true residual when P = I
    np.testing.assert_allclose([r.estimate for r in rec.rows], hist, rtol=1e-8)


def test_gmrest_estimate_nonincreasing_with_preconditioner(small):
    gen, P = small
    cfg = SolverConfig("gmrest", 10, None, TruncationConfig("none"))
    _, rec = solve(gen.problem, P, cfg)
    assert np.all(np.diff([r.estimate for r in rec.rows]) <= 1e-13)


@pytest.mark.parametrize("method", ["gmrest", "gmrestr", "chebyshevt", "bicgstabt"])
def test_exact_start_converges_immediately(method):
    prob, _ = random_problem(10, (2, 2), seed=2)
    Xs = LowRankMatrix.from_dense(_exact_solution(prob))
    P = build_preconditioner(prob)
    cfg = SolverConfig(method, 6, 3, EXACT, ellipse=EllipseParams(1.0, 0.6))
    X, rec = solve(prob, P, cfg, Xs)
    assert rec.converged and rec.rows == []
    assert X is Xs or np.allclose(X.to_dense(), Xs.to_dense())


def test_chebyshev_single_spd_block_decreases():
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    A = Q @ np.diag(np.linspace(0.5, 1.5, 12)) @ Q.T
    prob = MatrixEquationProblem([A, np.eye(12)], [np.zeros(1)],
                                 LowRankMatrix.outer(rng.standard_normal(12), [1.0]))
    ident = Preconditioner(sp.identity(12), "identity")
    cfg = SolverConfig("chebyshevt", 10, None, TruncationConfig("none"), ellipse=EllipseParams(1.0, 0.5))
    _, rec = solve(prob, ident, cfg)
    hist = rec.relres_history()
    assert len(hist) == 11
    # the error is damped by the Chebyshev factor; the residual tracks it here
    assert np.all(np.diff(hist) < 0)
    assert hist[-1] < 1e-6


def test_bicgstab_breakdown_is_reported():
    # a rotation makes the shadow residual orthogonal to A r
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    prob = MatrixEquationProblem([A, np.eye(2)], [np.zeros(1)], LowRankMatrix.outer([1.0, 0.0], [1.0]))
    ident = Preconditioner(sp.identity(2), "identity")
    _, rec = solve(prob, ident, SolverConfig("bicgstabt", 4, None, TruncationConfig("none")))
    assert rec.breakdown == "alpha" and not rec.converged


def test_blockwise_single_block():
    prob, _ = random_problem(12, (1,), seed=1)
    res = reference_blockwise_solve(prob, "lu")
    x = np.linalg.solve(prob.A[0].toarray(), prob.B.to_dense()[:, 0])
    np.testing.assert_allclose(res.X[:, 0], x, rtol=1e-12)


def test_blockwise_zero_diagonals_give_rank_one():
    rng = np.random.default_rng(0)
    A0 = rng.standard_normal((8, 8)) + 6 * np.eye(8)
    prob = MatrixEquationProblem([A0, rng.standard_normal((8, 8))], [np.zeros(5)],
                                 LowRankMatrix.outer(rng.standard_normal(8), np.ones(5)))
    X = reference_blockwise_solve(prob, "lu").X
    assert np.allclose(X, X[:, :1])
    assert np.linalg.matrix_rank(X, tol=1e-10) == 1


def test_blockwise_lu_residuals_M30_m8():
    prob, _ = random_problem(30, (2, 2, 2), seed=6)
    res = reference_blockwise_solve(prob, "lu")
    assert res.relres.max() <= 1e-12


def test_blockwise_cap_and_strict_failure():
    prob, _ = random_problem(30, (2, 2, 2), seed=6)
    with pytest.raises(ConfigError, match="cap"):
        reference_blockwise_solve(prob, "lu", BlockwiseConfig(max_entries=100))
    bc = BlockwiseConfig(restart=1, iterations=1, preconditioner="mean", tol=1e-14, strict=True)
    with pytest.raises(SolverFailure) as info:
        reference_blockwise_solve(prob, "gmres", bc, build_preconditioner(prob))
    assert info.value.index == 0
    bc.strict = False
    res = reference_blockwise_solve(prob, "gmres", bc, build_preconditioner(prob))
    assert res.failed == list(range(8))


def test_blockwise_gmres_converges_with_exact_blocks():
    prob, _ = random_problem(30, (2, 2, 2), seed=6)
    res = reference_blockwise_solve(prob, "gmres", BlockwiseConfig(preconditioner="exact", iterations=4))
    assert res.relres.max() <= 1e-10
