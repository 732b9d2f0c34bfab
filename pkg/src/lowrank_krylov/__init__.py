"""Truncated low-rank Krylov solvers for parameter-dependent linear systems.

The ``m`` systems ``A(p_i) x_i = b`` are collected in the matrix equation
``A_0 X + sum_k s_k A_k X D_k = B`` and solved with iterates of low rank.
"""
from .bounds import (
    BoundInputs,
    chebyshevt_iterate_bound,
    gmrest_basis_bound,
    gmrest_iterate_bound,
    run_bound_harness,
)
from .equation import (
    MatrixEquationProblem,
    ParameterGrid,
    Preconditioner,
    apply_F,
    apply_precond,
    block_residuals,
    build_preconditioner,
    build_sample_diagonals,
    relative_residual,
    residual,
)
from .exceptions import ConfigError, FactorizationError, SolverFailure
from .lowrank import LowRankMatrix, TruncationConfig, lr_add, lr_inner, truncate
from .probgen import GeneratorSpec, generate, load_manifest, save_manifest
from .solvers import (
    BlockwiseConfig,
    ConvergenceRecord,
    SolverConfig,
    bicgstabt,
    chebyshevt,
    gmrest,
    gmrestr,
    reference_blockwise_solve,
    solve,
)
from .spectral import EllipseParams, estimate_ellipse
from .timestepping import TimeProblem, build_step_operator, run_theta_scheme, step_rhs

__version__ = "0.1.0"
