import numpy as np
import pytest

from lowrank_krylov import LowRankMatrix, build_preconditioner, generate
from lowrank_krylov.probgen import GeneratorSpec, default_grid


@pytest.fixture(scope="session")
def desk():
    """The acceptance-scale problem: M = 2000, m = 125, mean-based preconditioner."""
    gen = generate(GeneratorSpec(M=2000, grid=default_grid(5, 5, 5)))
    P = build_preconditioner(gen.problem, "mean-T")
    ones = LowRankMatrix.outer(np.ones(gen.problem.M), np.ones(gen.problem.m))
    return gen, P, ones


@pytest.fixture(scope="session")
def small():
    """Laplacian-recipe problem small enough for dense oracles."""
    gen = generate(GeneratorSpec(M=400, grid=default_grid(5, 5, 5)))
    P = build_preconditioner(gen.problem, "mean-T")
    return gen, P


@pytest.fixture(scope="session")
def desk_ellipse(desk):
    from lowrank_krylov import estimate_ellipse

    gen, P, _ = desk
    return estimate_ellipse(gen.problem, P)
