import numpy as np
import pytest
import scipy.sparse.linalg as spla

from lowrank_krylov import (
    ConfigError,
    LowRankMatrix,
    SolverConfig,
    TruncationConfig,
    build_preconditioner,
    generate,
    load_manifest,
    save_manifest,
    solve,
)
from lowrank_krylov.probgen import GeneratorSpec, default_grid, parse_generator_spec
from lowrank_krylov.solvers import reference_blockwise_solve


def test_single_sample_grid_is_one_linear_system():
    gen = generate(GeneratorSpec(M=50, grid=default_grid(1, 1, 1)))
    prob = gen.problem
    assert prob.m == 1
    assert all(np.all(d == 0) for d in prob.D)
    x = spla.spsolve(prob.A[0].tocsc(), gen.b)
    res = reference_blockwise_solve(prob, "lu")
    np.testing.assert_allclose(res.X[:, 0], x, rtol=1e-10)


@pytest.mark.parametrize("recipe", ["laplacian-plus-convection", "random-sparse-dominant"])
def test_same_seed_same_problem(recipe):
    # the Laplacian recipe draws random numbers only for the edge jitter
    a = generate(GeneratorSpec(M=60, grid=default_grid(2, 2, 2), seed=5, recipe=recipe, jitter=0.2))
    b = generate(GeneratorSpec(M=60, grid=default_grid(2, 2, 2), seed=5, recipe=recipe, jitter=0.2))
    for x, y in zip(a.problem.A, b.problem.A):
        assert (x != y).nnz == 0
    assert a.b.tobytes() == b.b.tobytes()
    c = generate(GeneratorSpec(M=60, grid=default_grid(2, 2, 2), seed=6, recipe=recipe, jitter=0.2))
    assert any((x != y).nnz for x, y in zip(a.problem.A, c.problem.A))


@pytest.mark.parametrize("recipe", ["laplacian-plus-convection", "random-sparse-dominant"])
def test_all_blocks_solvable_M100_m27(recipe):
    gen = generate(GeneratorSpec(M=100, grid=default_grid(3, 3, 3), recipe=recipe))
    res = reference_blockwise_solve(gen.problem, "lu")
    assert res.X.shape == (100, 27)
    assert res.relres.max() <= 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_corner_blocks_invertible(seed):
    gen = generate(GeneratorSpec(M=80, grid=default_grid(3, 3, 3), seed=seed))
    for i in gen.grid.corner_indices():
        A = gen.problem.block_matrix(int(i)).toarray()
        assert 1.0 / np.linalg.cond(A, 1) > 1e-14


def test_generated_problem_is_nonsymmetric(small):
    gen, _ = small
    A0 = gen.problem.A[0]
    assert abs(A0 - A0.T).max() > 0
    assert gen.At_f is not None and gen.At_s is not None and gen.fluid_index == 2


@pytest.mark.parametrize("recipe", ["laplacian-plus-convection", "random-sparse-dominant"])
def test_manifest_round_trip(tmp_path, recipe):
    gen = generate(GeneratorSpec(M=40, grid=default_grid(2, 3, 2), recipe=recipe, seed=2))
    path = save_manifest(gen, tmp_path, {"theta": 0.5, "dt": 0.1, "steps": 2,
                                         "dirichlet": [gen.b, 2 * gen.b, 3 * gen.b]})
    back, settings = load_manifest(path)
    for x, y in zip(gen.problem.A, back.problem.A):
        assert x.toarray().tobytes() == y.toarray().tobytes()
    for x, y in zip(gen.problem.D, back.problem.D):
        assert x.tobytes() == y.tobytes()
    assert list(back.problem.scale) == list(gen.problem.scale)
    assert back.b.tobytes() == gen.b.tobytes()
    assert settings["theta"] == 0.5 and settings["steps"] == 2
    np.testing.assert_array_equal(settings["dirichlet"][2], 3 * gen.b)
    if gen.At_f is not None:
        assert back.At_f.toarray().tobytes() == gen.At_f.toarray().tobytes()


def test_manifest_missing_matrix_names_key(tmp_path):
    gen = generate(GeneratorSpec(M=20, grid=default_grid(2, 2, 2)))
    path = save_manifest(gen, tmp_path)
    text = path.read_text().replace("A2 = A2.mtx\n", "")
    path.write_text(text)
    with pytest.raises(ConfigError, match="'A2'"):
        load_manifest(path)


def test_manifest_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_manifest(tmp_path / "nope.txt")
    (tmp_path / "m.txt").write_text("A0 A0.mtx\n")
    with pytest.raises(ConfigError, match="key = value"):
        load_manifest(tmp_path / "m.txt")


def _write_mm(path, rows):
    lines = ["%%MatrixMarket matrix array real general", f"{len(rows)} {len(rows[0])}"]
    lines += [repr(float(rows[i][j])) for j in range(len(rows[0])) for i in range(len(rows))]
    path.write_text("\n".join(lines) + "\n")


def test_hand_written_two_by_two_manifest(tmp_path):
    # blocks diag(2, 3) and diag(3, 4) with b = (2, 3)
    _write_mm(tmp_path / "a0.mtx", [[2.0, 0.0], [0.0, 3.0]])
    _write_mm(tmp_path / "a1.mtx", [[1.0, 0.0], [0.0, 1.0]])
    _write_mm(tmp_path / "b.mtx", [[2.0], [3.0]])
    (tmp_path / "manifest.txt").write_text(
        "parameters = mu\nA0 = a0.mtx\nA1 = a1.mtx\nb = b.mtx\n"
        "mu_samples = 1.0, 2.0\nmu_ref_index = 0\n"
    )
    gen, _ = load_manifest(tmp_path / "manifest.txt")
    prob = gen.problem
    P = build_preconditioner(prob)
    cfg = SolverConfig("gmrestr", 8, 4, TruncationConfig("exact", 2), tol=1e-14)
    X, _ = solve(prob, P, cfg, LowRankMatrix.zeros(2, 2))
    np.testing.assert_allclose(X.to_dense(), [[1.0, 2 / 3], [1.0, 3 / 4]], atol=1e-12)


def test_generator_spec_parsing():
    spec = parse_generator_spec("M=30, m1=2, m2=3, m3=1, seed=4, recipe=random-sparse-dominant")
    assert spec.M == 30 and spec.grid.m == 6 and spec.seed == 4
    with pytest.raises(ConfigError, match="unknown"):
        parse_generator_spec("M=30,colour=red")
    with pytest.raises(ConfigError):
        parse_generator_spec("M=thirty")
    with pytest.raises(ConfigError):
        GeneratorSpec(recipe="dense")
