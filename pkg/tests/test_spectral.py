import numpy as np
import pytest
import scipy.sparse as sp

from lowrank_krylov import (
    ConfigError,
    EllipseParams,
    LowRankMatrix,
    MatrixEquationProblem,
    Preconditioner,
    build_preconditioner,
    estimate_ellipse,
)
from lowrank_krylov.spectral import corner_blocks
from oracles import generated_random, random_problem


def test_block_equal_to_preconditioner_gives_unit_spectrum():
    rng = np.random.default_rng(0)
    A0 = rng.standard_normal((6, 6)) + 4 * np.eye(6)
    prob = MatrixEquationProblem([A0, np.eye(6)], [np.zeros(1)], LowRankMatrix.outer(np.ones(6), [1.0]))
    el = estimate_ellipse(prob, Preconditioner(A0, "A0"))
    assert el.d == pytest.approx(1.0, abs=1e-12) and el.c == pytest.approx(0.0, abs=1e-12)


def test_two_scalar_blocks():
    prob = MatrixEquationProblem([np.eye(4), np.eye(4)], [np.array([-0.6, 0.6])],
                                 LowRankMatrix.outer(np.ones(4), np.ones(2)))
    el = estimate_ellipse(prob, Preconditioner(sp.identity(4), "identity"), corner_only=False)
    assert el.lambda_min == pytest.approx(0.4) and el.lambda_max == pytest.approx(1.6)
    assert el.d == pytest.approx(1.0, abs=1e-12) and el.c == pytest.approx(0.6, abs=1e-12)


def test_inflation_scales_c():
    prob = MatrixEquationProblem([np.eye(4), np.eye(4)], [np.array([-0.6, 0.6])],
                                 LowRankMatrix.outer(np.ones(4), np.ones(2)))
    el = estimate_ellipse(prob, Preconditioner(sp.identity(4), "identity"), inflation=1.5)
    assert el.c == pytest.approx(0.9)


@pytest.mark.parametrize("sizes", [(2, 2, 2), (3, 3, 2)])
def test_corner_interval_inside_full_interval(sizes):
    gen = generated_random(50, sizes, seed=4)
    P = build_preconditioner(gen.problem)
    corner = estimate_ellipse(gen.problem, P)
    full = estimate_ellipse(gen.problem, P, corner_only=False)
    assert full.lambda_min <= corner.lambda_min <= corner.lambda_max <= full.lambda_max
    assert corner.source == "corner-blocks" and full.source == "all-blocks"
    assert 0 < full.c < full.d


def test_corner_blocks_of_3x3x3_grid():
    prob, grid = random_problem(4, (3, 3, 3), seed=0)
    assert list(corner_blocks(prob)) == list(grid.corner_indices())
    assert len(corner_blocks(prob)) == 8


def test_mean_preconditioner_centers_spectrum(small):
    gen, P = small
    el = estimate_ellipse(gen.problem, P)
    assert 0 < el.c < el.d
    assert abs(el.d - 1.0) < 0.05


def test_dimension_cap():
    prob, _ = random_problem(30, (2,), seed=0)
    with pytest.raises(ConfigError, match="coarse"):
        estimate_ellipse(prob, build_preconditioner(prob), max_dim=20)


def test_ellipse_validation():
    with pytest.raises(ConfigError):
        EllipseParams(-1.0, 0.1)
    with pytest.raises(ConfigError):
        EllipseParams(1.0, 1.0)
    assert EllipseParams.from_extremes(0.5, 1.5).c == pytest.approx(0.5)
