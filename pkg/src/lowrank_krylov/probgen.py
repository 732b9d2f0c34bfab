"""Synthetic parameter-dependent problems and Matrix-Market manifests.

The ``laplacian-plus-convection`` recipe mimics the structure of a coupled
solid/fluid discretization on a 2-d grid: a "solid" strip carries the two
solid-parameter operators (an isotropic and an x-directional graph Laplacian),
the remaining "fluid" nodes carry the density operator, a diffusion plus a
skew-symmetric convection part, so every block is non-symmetric.  All blocks
are grounded weighted Laplacians plus a skew part, hence invertible for
positive parameters.

Two choices keep the solution matrix of low numerical rank, as it is for the
physical problems this imitates: convection is scaled by the density like
diffusion, and the material is homogeneous unless ``jitter`` asks for random
edge weights.  Random weights add parameter variation of high rank; with
``jitter = 0.1`` a rank-30 iterate no longer reaches per-block residuals of
1e-8 at ``M = 2000, m = 125``.  The laplacian recipe only uses ``seed`` for
the jitter.

The manifest is a flat ``key = value`` text file::

    A0 = A0.mtx
    A1 = A1.mtx
    ...
    b = b.mtx
    parameters = mu, lambda, rho
    mu_samples = 30.0, 40.0, 50.0
    mu_ref_index = 0
    nu_f = 0.01

with optional ``At_f``, ``At_s``, ``theta``, ``dt``, ``steps`` and
``dirichlet`` (comma-separated vector files) for theta-scheme runs.  Paths are
relative to the manifest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .equation import MatrixEquationProblem, ParameterGrid, build_sample_diagonals
from .exceptions import ConfigError
from .lowrank import LowRankMatrix

__all__ = [
    "GeneratorSpec",
    "GeneratedProblem",
    "generate",
    "parse_generator_spec",
    "save_manifest",
    "load_manifest",
]

RECIPES = ("laplacian-plus-convection", "random-sparse-dominant")

# default sample ranges: solid parameters two orders above the density term
MU_RANGE = (30.0, 50.0)
LAMBDA_RANGE = (100.0, 200.0)
RHO_RANGE = (50.0, 200.0)
NU_F = 0.01
MAX_ATTEMPTS = 5


def default_grid(m1: int = 5, m2: int = 5, m3: int = 5) -> ParameterGrid:
    return ParameterGrid.fsi(
        np.linspace(*MU_RANGE, m1), np.linspace(*LAMBDA_RANGE, m2),
        np.linspace(*RHO_RANGE, m3), nu_f=NU_F,
    )


@dataclass
class GeneratorSpec:
    M: int = 400
    grid: ParameterGrid = field(default_factory=default_grid)
    seed: int = 0
    recipe: str = "laplacian-plus-convection"
    nonsymmetry_strength: float = 0.25
    density: float = 0.02
    rho_s: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ConfigError(f"unknown recipe {self.recipe!r}; choose from {RECIPES}")
        if self.M < 1:
            raise ConfigError("M must be positive")


@dataclass
class GeneratedProblem:
    problem: MatrixEquationProblem
    grid: ParameterGrid
    b: np.ndarray
    At_f: Optional[sp.csc_matrix] = None
    At_s: Optional[sp.csc_matrix] = None
    fluid_index: Optional[int] = None


def parse_generator_spec(text: str) -> GeneratorSpec:
    """Parse ``"M=400,m1=3,m2=3,m3=3,seed=1,recipe=..."``."""
    kv = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"generator spec entry {part!r} is not key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        kv[k] = v
    sizes = [int(kv.pop(k, 5)) for k in ("m1", "m2", "m3")]
    try:
        spec = GeneratorSpec(
            M=int(kv.pop("M", 400)),
            grid=default_grid(*sizes),
            seed=int(kv.pop("seed", 0)),
            recipe=kv.pop("recipe", "laplacian-plus-convection"),
            nonsymmetry_strength=float(kv.pop("nonsym", 0.25)),
            jitter=float(kv.pop("jitter", 0.0)),
            density=float(kv.pop("density", 0.02)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad generator spec {text!r}: {exc}") from exc
    if kv:
        raise ConfigError(f"unknown generator spec keys: {sorted(kv)}")
    return spec


def _grid_layout(M: int):
    nx = max(1, int(np.floor(np.sqrt(M))))
    ny = int(np.ceil(M / nx))
    ij = [(p % nx, p // nx) for p in range(M)]
    x = np.array([(i + 1) / (nx + 1) for i, _ in ij])
    y = np.array([(j + 1) / (ny + 1) for _, j in ij])
    return nx, ny, x, y


def _edges(M: int, nx: int):
    ex, ey = [], []
    for p in range(M):
        i = p % nx
        if i + 1 < nx and p + 1 < M:
            ex.append((p, p + 1))
        if p + nx < M:
            ey.append((p, p + nx))
    return np.array(ex, dtype=int).reshape(-1, 2), np.array(ey, dtype=int).reshape(-1, 2)


def _laplacian(M, edges, weights, ground):
    """Weighted graph Laplacian plus a diagonal Dirichlet grounding."""
    p, q = edges[:, 0], edges[:, 1]
    rows = np.concatenate([p, q, p, q])
    cols = np.concatenate([p, q, q, p])
    vals = np.concatenate([weights, weights, -weights, -weights])
    L = sp.coo_matrix((vals, (rows, cols)), shape=(M, M)).tocsc()
    return (L + sp.diags(ground)).tocsc()


def _laplacian_recipe(spec: GeneratorSpec, rng: np.random.Generator):
    M = spec.M
    nx, ny, x, y = _grid_layout(M)
    ex, ey = _edges(M, nx)
    solid = (x >= 0.375) & (x <= 0.5) & (y <= 0.5)
    if not solid.any():
        solid[M // 2] = True
    # heterogeneous material: random relative edge-weight perturbations
    wx = rng.uniform(1.0 - spec.jitter, 1.0 + spec.jitter, len(ex))
    wy = rng.uniform(1.0 - spec.jitter, 1.0 + spec.jitter, len(ey))
    sx = solid[ex[:, 0]] & solid[ex[:, 1]]
    sy = solid[ey[:, 0]] & solid[ey[:, 1]]

    deg = np.zeros(M)
    np.add.at(deg, ex.ravel(), 1)
    np.add.at(deg, ey.ravel(), 1)
    missing = 4.0 - deg
    ground = np.maximum(missing, 0.0)

    all_edges = np.vstack([ex, ey])
    w_all = np.concatenate([wx, wy])
    s_all = np.concatenate([sx, sy])
    xdir = np.concatenate([np.ones(len(ex), bool), np.zeros(len(ey), bool)])

    A1 = _laplacian(M, all_edges[s_all], w_all[s_all], np.where(solid, ground, 0.0))
    A2 = _laplacian(M, all_edges[s_all & xdir], w_all[s_all & xdir], np.zeros(M))
    L3 = _laplacian(M, all_edges[~s_all], w_all[~s_all], np.where(solid, 0.0, ground))

    # skew-symmetric central-difference convection along x on fluid edges;
    # it is part of the density operator since convection scales with density
    fx = ex[~sx]
    vel = spec.nonsymmetry_strength * (0.5 + y[fx[:, 0]])
    C = sp.coo_matrix(
        (np.concatenate([0.5 * vel, -0.5 * vel]),
         (np.concatenate([fx[:, 0], fx[:, 1]]), np.concatenate([fx[:, 1], fx[:, 0]]))),
        shape=(M, M),
    ).tocsc()

    g = spec.grid
    mu, lam, rho = g.reference[:3] if g.K >= 3 else (g.reference + [1.0, 1.0])[:3]
    nu = g.scale[2] if g.K >= 3 else 1.0
    A3 = (L3 + C).tocsc()
    A0 = (mu * A1 + lam * A2 + nu * rho * A3).tocsc()
    mats = [A0, A1, A2, A3][: g.K + 1]
    b = np.sin(np.pi * x) * (1.0 + y)
    At_f = sp.diags(np.where(solid, 0.0, 1.0)).tocsc()
    At_s = sp.diags(np.where(solid, spec.rho_s, 0.0)).tocsc()
    return mats, b, At_f, At_s


def _random_recipe(spec: GeneratorSpec, rng: np.random.Generator):
    M, K = spec.M, spec.grid.K
    S = sp.random(M, M, density=spec.density, random_state=rng, format="csr")
    S.data = rng.uniform(-1.0, 1.0, S.nnz)
    S = S + spec.nonsymmetry_strength * (S - S.T)
    dom = np.asarray(abs(S).sum(axis=1)).ravel()
    A0 = (S + sp.diags(dom + 1.0)).tocsc()
    mats = [A0]
    for _ in range(K):
        T = sp.random(M, M, density=spec.density / 2, random_state=rng, format="csr")
        T.data = rng.uniform(-1.0, 1.0, T.nnz)
        T = T + T.T
        rowsum = np.asarray(abs(T).sum(axis=1)).ravel()
        Ak = (T + sp.diags(rowsum + 0.1)) / max(1.0, float(np.max(np.abs(spec.grid.samples[0]))))
        mats.append(sp.csc_matrix(Ak))
    t = np.linspace(0.0, 1.0, M)
    b = np.cos(np.pi * t) + 2.0
    return mats, b, sp.identity(M, format="csc"), sp.csc_matrix((M, M))


def _corners_invertible(prob: MatrixEquationProblem, grid: ParameterGrid) -> bool:
    if prob.M > 2000:
        return True
    for i in grid.corner_indices():
        try:
            lu = spla.splu(prob.block_matrix(int(i)))
        except RuntimeError:
            return False
        d = np.abs(lu.U.diagonal())
        if d.min() <= 1e-14 * d.max():
            return False
    return True


def generate(spec: GeneratorSpec) -> GeneratedProblem:
    """Build a problem from ``spec``; identical specs give identical problems.

    A candidate whose corner blocks are not all invertible is discarded and
    regenerated from ``seed + attempt`` for up to five attempts.
    """
    builder = _laplacian_recipe if spec.recipe == "laplacian-plus-convection" else _random_recipe
    grid = spec.grid
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(spec.seed + attempt)
        mats, b, At_f, At_s = builder(spec, rng)
        D = build_sample_diagonals(grid)
        B = LowRankMatrix.outer(b, np.ones(grid.m))
        prob = MatrixEquationProblem(mats, D, B, list(grid.scale))
        if _corners_invertible(prob, grid):
            fluid = grid.names.index("rho") if "rho" in grid.names else None
            return GeneratedProblem(prob, grid, b, At_f, At_s, fluid)
    raise ConfigError(f"could not generate invertible corner blocks after {MAX_ATTEMPTS} attempts")


def _fmt_list(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def save_manifest(gen: GeneratedProblem, directory, time_settings: Optional[dict] = None) -> Path:
    """Write Matrix-Market files and ``manifest.txt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# parameter-dependent matrix equation manifest"]
    for k, a in enumerate(gen.problem.A):
        scipy.io.mmwrite(directory / f"A{k}.mtx", sp.coo_matrix(a), field="real", symmetry="general")
        lines.append(f"A{k} = A{k}.mtx")
    scipy.io.mmwrite(directory / "b.mtx", np.asarray(gen.b, float).reshape(-1, 1), field="real")
    lines.append("b = b.mtx")
    g = gen.grid
    lines.append("parameters = " + ", ".join(g.names))
    for k, name in enumerate(g.names):
        s = g.samples[k]
        hits = np.flatnonzero(s == g.reference[k])
        if hits.size == 0:
            raise ConfigError(f"reference of {name} is not one of its samples")
        lines.append(f"{name}_samples = {_fmt_list(s)}")
        lines.append(f"{name}_ref_index = {int(hits[0])}")
        lines.append(f"{name}_scale = {g.scale[k]!r}")
    for key, mat in (("At_f", gen.At_f), ("At_s", gen.At_s)):
        if mat is not None:
            scipy.io.mmwrite(directory / f"{key}.mtx", sp.coo_matrix(mat), field="real", symmetry="general")
            lines.append(f"{key} = {key}.mtx")
    for key, val in (time_settings or {}).items():
        if key == "dirichlet":
            names = []
            for i, vec in enumerate(val):
                fn = f"b_t{i}.mtx"
                scipy.io.mmwrite(directory / fn, np.asarray(vec, float).reshape(-1, 1), field="real")
                names.append(fn)
            lines.append("dirichlet = " + ", ".join(names))
        else:
            lines.append(f"{key} = {val!r}")
    path = directory / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_manifest(path: Path) -> dict:
    kv = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    return kv


def _read_matrix(base: Path, kv: dict, key: str):
    if key not in kv:
        raise ConfigError(f"manifest is missing required key {key!r}")
    fn = base / kv[key]
    try:
        mat = scipy.io.mmread(str(fn))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {key} from {fn}: {exc}") from exc
    dense = not sp.issparse(mat)
    data = np.asarray(mat) if dense else mat.data
    if not np.all(np.isfinite(data)):
        raise ConfigError(f"{key} ({fn}) contains non-finite entries")
    return mat


def _floats(kv: dict, key: str) -> list:
    try:
        return [float(v) for v in kv[key].split(",") if v.strip()]
    except KeyError:
        raise ConfigError(f"manifest is missing required key {key!r}") from None
    except ValueError as exc:
        raise ConfigError(f"bad number in {key!r}: {exc}") from exc


def load_manifest(path):
    """Read a manifest; returns a :class:`GeneratedProblem` plus a settings dict.

    The settings dict holds the optional theta-scheme entries (``theta``,
    ``dt``, ``steps``, ``dirichlet``).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest {path} does not exist")
    base = path.parent
    kv = _parse_manifest(path)
    names = [n.strip() for n in kv.get("parameters", "mu, lambda, rho").split(",") if n.strip()]
    samples, ref, scale = [], [], []
    for name in names:
        s = _floats(kv, f"{name}_samples")
        idx = int(kv.get(f"{name}_ref_index", 0))
        if not 0 <= idx < len(s):
            raise ConfigError(f"{name}_ref_index {idx} out of range")
        samples.append(s)
        ref.append(s[idx])
        default = float(kv.get("nu_f", 1.0)) if name == "rho" else 1.0
        scale.append(float(kv.get(f"{name}_scale", default)))
    grid = ParameterGrid(samples, ref, scale, names)
    mats = [sp.csc_matrix(_read_matrix(base, kv, f"A{k}")) for k in range(grid.K + 1)]
    M = mats[0].shape[0]
    for k, a in enumerate(mats):
        if a.shape != (M, M):
            raise ConfigError(f"A{k} ({kv[f'A{k}']}) has shape {a.shape}, expected {(M, M)}")
    b = np.asarray(_read_matrix(base, kv, "b")).ravel()
    if b.size != M:
        raise ConfigError(f"b ({kv['b']}) has length {b.size}, expected {M}")
    D = build_sample_diagonals(grid)
    prob = MatrixEquationProblem(mats, D, LowRankMatrix.outer(b, np.ones(grid.m)), list(grid.scale))
    At = {}
    for key in ("At_f", "At_s"):
        if key in kv:
            At[key] = sp.csc_matrix(_read_matrix(base, kv, key))
            if At[key].shape != (M, M):
                raise ConfigError(f"{key} has shape {At[key].shape}, expected {(M, M)}")
    settings = {}
    for key, conv in (("theta", float), ("dt", float), ("steps", int)):
        if key in kv:
            try:
                settings[key] = conv(kv[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    if "dirichlet" in kv:
        vecs = []
        for fn in (s.strip() for s in kv["dirichlet"].split(",") if s.strip()):
            v = np.asarray(_read_matrix(base, {"dirichlet": fn}, "dirichlet")).ravel()
            if v.size != M:
                raise ConfigError(f"dirichlet vector {fn} has length {v.size}, expected {M}")
            vecs.append(v)
        settings["dirichlet"] = vecs
    fluid = names.index("rho") if "rho" in names else None
    gen = GeneratedProblem(prob, grid, b, At.get("At_f"), At.get("At_s"), fluid)
    return gen, settings
