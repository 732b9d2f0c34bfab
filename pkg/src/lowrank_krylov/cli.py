"""Command-line front end.

Subcommands: ``generate``, ``solve``, ``estimate``, ``bounds`` and ``timestep``.
The problem comes from ``--manifest PATH`` or ``--generate SPEC`` (default:
the generator defaults).  Results are written as CSV and JSON into ``--out``.
A summary table is printed on standard output.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure
(breakdown, singular factorization, failed block).

Restart counting: ``--restarts k --per-restart d`` runs ``k + 1`` cycles of
``d`` iterations, so "restarted three times with six iterations per restart"
is 24 iterations.  ``--iters`` sets the total directly.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import run_bound_harness
from .equation import block_residuals, build_preconditioner
from .exceptions import ConfigError, FactorizationError, SolverFailure
from .lowrank import LowRankMatrix, TruncationConfig
from .probgen import GeneratorSpec, generate, load_manifest, parse_generator_spec, save_manifest
from .solvers import METHODS, BlockwiseConfig, SolverConfig, reference_blockwise_solve, solve
from .spectral import EllipseParams, estimate_ellipse
from .timestepping import TimeProblem, build_step_operator, run_theta_scheme

log = logging.getLogger("lowrank_krylov")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
BYTES_PER_ENTRY = 8


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _pair(text: str) -> tuple[float, float]:
    try:
        d, c = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'd,c', got {text!r}") from None
    return d, c


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args, coarse: Optional[int] = None):
    """GeneratedProblem plus manifest settings."""
    if args.manifest:
        if coarse:
            raise ConfigError("--coarse regenerates the problem and needs --generate, not --manifest")
        return load_manifest(args.manifest)
    spec = parse_generator_spec(args.generate or "")
    if coarse:
        spec = GeneratorSpec(coarse, spec.grid, spec.seed, spec.recipe, spec.nonsymmetry_strength,
                             spec.density, spec.rho_s, spec.jitter)
    return generate(spec), {}


def _start(args, prob) -> LowRankMatrix:
    if args.start == "zero":
        return LowRankMatrix.zeros(prob.M, prob.m)
    return LowRankMatrix.outer(np.ones(prob.M), np.ones(prob.m))


def _iterations(args) -> tuple[int, int]:
    """Total iterations and iterations per cycle."""
    d = args.per_restart
    if d < 1:
        raise ConfigError("--per-restart must be positive")
    if args.restarts is not None and args.restarts < 0:
        raise ConfigError("--restarts must be non-negative")
    if args.iters is not None:
        if args.restarts is not None and args.iters != (args.restarts + 1) * d:
            raise ConfigError(
                f"--iters {args.iters} contradicts --restarts {args.restarts} x --per-restart {d} "
                f"(= {(args.restarts + 1) * d} iterations)"
            )
        return args.iters, d
    k = 3 if args.restarts is None else args.restarts
    return (k + 1) * d, d


def _truncation(args) -> TruncationConfig:
    try:
        return TruncationConfig(args.trunc_mode, args.rank, args.epsilon, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _ellipse(args, prob, precond) -> tuple[Optional[EllipseParams], float]:
    if args.ellipse is not None:
        return EllipseParams(*args.ellipse), 0.0
    if args.estimate:
        el = estimate_ellipse(prob, precond, corner_only=not args.full_enumeration,
                              inflation=args.inflation)
        return el, el.seconds
    return None, 0.0


def _stats(values: np.ndarray) -> dict:
    return {
        "min": float(np.min(values)),
        "median": float(np.median(values)),
        "max": float(np.max(values)),
        "p99": float(np.percentile(values, 99)),
    }


def _storage(M: int, m: int, rank: Optional[int]) -> dict:
    dense = M * m
    out = {"dense_entries": dense, "dense_bytes": dense * BYTES_PER_ENTRY}
    if rank is not None:
        lr = (M + m + rank) * rank
        out.update(lowrank_entries=lr, lowrank_bytes=lr * BYTES_PER_ENTRY, rank=rank,
                   ratio=lr / dense)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _outdir(args) -> Optional[Path]:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_table(rows: list) -> None:
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")


def _fmt_seconds(t: float) -> str:
    return f"{t:.3f} s"


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    spec = parse_generator_spec(args.generate or "")
    gen = generate(spec)
    settings = {}
    if args.steps is not None:
        ramp = np.linspace(0.0, 1.0, args.steps + 1) if args.ramp else np.ones(args.steps + 1)
        settings = {"theta": args.theta, "dt": args.dt, "steps": args.steps,
                    "dirichlet": [r * gen.b for r in ramp]}
    if not args.out:
        raise ConfigError("generate needs --out DIR")
    path = save_manifest(gen, args.out, settings)
    print(f"wrote {path} (M={gen.problem.M}, m={gen.problem.m}, K={gen.problem.K})")
    return EXIT_OK


def _solve_reference(args, gen, out) -> int:
    prob = gen.problem
    precond, t_pre = None, 0.0
    if args.block_precond == "mean" or args.estimate:
        t0 = time.perf_counter()
        precond = build_preconditioner(prob, args.precond)
        t_pre = time.perf_counter() - t0
    ellipse, t_est = _ellipse(args, prob, precond)
    if args.per_block == "chebyshev" and ellipse is None:
        raise ConfigError("per-block chebyshev needs ellipse parameters: pass --ellipse d,c or --estimate")
    bc = BlockwiseConfig(restart=args.block_restart, iterations=args.block_iters,
                         preconditioner=args.block_precond, n_sampled=args.n_sampled,
                         ellipse=ellipse, tol=args.tol, strict=args.strict, jobs=args.jobs)
    res = reference_blockwise_solve(prob, args.per_block, bc, precond)
    rel = res.relres
    times = {"estimate": t_est, "precondition": res.precondition_seconds + t_pre,
             "compute": res.compute_seconds}
    times["total"] = sum(times.values())
    summary = {
        "method": f"reference-{args.per_block}",
        "M": prob.M, "m": prob.m,
        "iterations": int(res.iterations.max()),
        "block_residuals": _stats(rel),
        "failed_blocks": res.failed,
        "storage": _storage(prob.M, prob.m, None),
        "seconds": times,
    }
    if out:
        _write_csv(out / "blocks.csv", ["block", "relres", "iterations"],
                   [[i, repr(float(r)), int(n)] for i, (r, n) in enumerate(zip(rel, res.iterations))])
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _print_table([
        ("method", summary["method"]),
        ("blocks", f"{prob.m} x M={prob.M}"),
        ("block relres min/median/max/p99",
         "{min:.3e} / {median:.3e} / {max:.3e} / {p99:.3e}".format(**summary["block_residuals"])),
        ("Approx. storage", f"{prob.M * prob.m} entries (dense)"),
        ("Est.", _fmt_seconds(times["estimate"])),
        ("Precon.", _fmt_seconds(times["precondition"])),
        ("Comp.", _fmt_seconds(times["compute"])),
        ("Total", _fmt_seconds(times["total"])),
    ])
    if res.failed:
        print(f"{len(res.failed)} blocks above tolerance {args.tol:g}", file=sys.stderr)
    return EXIT_OK


def cmd_solve(args) -> int:
    gen, _ = _load(args)
    out = _outdir(args)
    if args.method == "reference":
        return _solve_reference(args, gen, out)
    prob = gen.problem
    l, d = _iterations(args)
    if args.method == "chebyshevt" and args.ellipse is None and not args.estimate:
        raise ConfigError("chebyshevt needs ellipse parameters: pass --ellipse d,c or --estimate")
    t0 = time.perf_counter()
    precond = build_preconditioner(prob, args.precond)
    t_pre = time.perf_counter() - t0
    ellipse, t_est = _ellipse(args, prob, precond)
    cfg = SolverConfig(args.method, l, d, _truncation(args), ellipse, tol=args.tol,
                       truncate_s=args.truncate_s)
    X, rec = solve(prob, precond, cfg, _start(args, prob))
    rel = block_residuals(prob, X)
    times = {"estimate": t_est, "precondition": t_pre, "compute": rec.seconds}
    times["total"] = sum(times.values())
    n_cycles, per_cycle = cfg.cycles()
    summary = {
        "method": args.method,
        "M": prob.M, "m": prob.m,
        "rank": args.rank if args.trunc_mode == "exact" else None,
        "truncation": args.trunc_mode,
        "epsilon": args.epsilon if args.trunc_mode == "simulator" else None,
        "iterations": l,
        "cycles": n_cycles,
        "per_cycle": per_cycle,
        "restarts": n_cycles - 1,
        "updates": rec.iterations,
        "ellipse": None if ellipse is None else {"d": ellipse.d, "c": ellipse.c,
                                                  "lambda_min": ellipse.lambda_min,
                                                  "lambda_max": ellipse.lambda_max,
                                                  "source": ellipse.source},
        "final_relres": rec.final_relres,
        "block_residuals": _stats(rel),
        "breakdown": rec.breakdown,
        "breakdown_iteration": rec.breakdown_iteration,
        "truncations": rec.truncations,
        "storage": _storage(prob.M, prob.m, X.rank),
        "seconds": times,
    }
    if args.baseline:
        bc = BlockwiseConfig(restart=args.block_restart, iterations=args.block_iters,
                             preconditioner=args.block_precond, n_sampled=args.n_sampled,
                             jobs=args.jobs)
        base = reference_blockwise_solve(prob, "gmres", bc, precond)
        base_total = base.precondition_seconds + base.compute_seconds
        summary["baseline"] = {
            "method": "reference-gmres",
            "block_residuals": _stats(base.relres),
            "seconds": {"precondition": base.precondition_seconds, "compute": base.compute_seconds,
                        "total": base_total},
            "speedup": base_total / times["total"] if times["total"] > 0 else float("inf"),
        }
    if out:
        _write_csv(out / "history.csv",
                   ["iteration", "cycle", "step", "relres", "estimate", "rank_before", "rank_after"],
                   [[r.iteration, r.cycle, r.step, repr(float(r.relres)), repr(float(r.estimate)), r.rank_before,
                     r.rank_after] for r in rec.rows])
        _write_csv(out / "history_times.csv", ["iteration", "seconds"],
                   [[r.iteration, f"{r.seconds:.6f}"] for r in rec.rows])
        _write_csv(out / "blocks.csv", ["block", "relres"],
                   [[i, repr(float(r))] for i, r in enumerate(rel)])
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    st = summary["storage"]
    table = [
        ("method", f"{args.method} ({n_cycles} cycles x {per_cycle})"),
        ("truncation", f"{args.trunc_mode}" + (f", R={args.rank}" if args.trunc_mode == "exact" else "")),
        ("final relres", f"{rec.final_relres:.3e}"),
        ("block relres min/median/max/p99",
         "{min:.3e} / {median:.3e} / {max:.3e} / {p99:.3e}".format(**summary["block_residuals"])),
        ("Approx. storage",
         f"{st['lowrank_entries']} entries (rank {st['rank']}) vs {st['dense_entries']} dense"),
        ("Est.", _fmt_seconds(times["estimate"])),
        ("Precon.", _fmt_seconds(times["precondition"])),
        ("Comp.", _fmt_seconds(times["compute"])),
        ("Total", _fmt_seconds(times["total"])),
    ]
    if ellipse is not None:
        table.insert(2, ("ellipse d, c", f"{ellipse.d:.6g}, {ellipse.c:.6g} ({ellipse.source})"))
    if args.baseline:
        b = summary["baseline"]
        table.append(("baseline total", _fmt_seconds(b["seconds"]["total"])))
        table.append(("speedup", f"{b['speedup']:.2f}"))
    _print_table(table)
    if rec.breakdown not in (None, "lucky"):
        print(f"error: {args.method} broke down ({rec.breakdown}) at iteration {rec.breakdown_iteration}",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_estimate(args) -> int:
    gen, _ = _load(args, coarse=args.coarse)
    prob = gen.problem
    precond = build_preconditioner(prob, args.precond)
    try:
        el = estimate_ellipse(prob, precond, corner_only=not args.full_enumeration,
                              inflation=args.inflation, max_dim=args.max_dim)
    except ConfigError as exc:
        raise ConfigError(f"{exc}; rerun with --coarse M' to estimate on a smaller problem") from exc
    result = {"d": el.d, "c": el.c, "lambda_min": el.lambda_min, "lambda_max": el.lambda_max,
              "source": el.source, "M": prob.M, "m": prob.m, "seconds": el.seconds}
    out = _outdir(args)
    if out:
        (out / "ellipse.json").write_text(json.dumps(result, indent=2) + "\n")
    _print_table([
        ("d", f"{el.d:.10g}"),
        ("c", f"{el.c:.10g}"),
        ("lambda_min", f"{el.lambda_min:.10g}"),
        ("lambda_max", f"{el.lambda_max:.10g}"),
        ("source", el.source),
        ("Est.", _fmt_seconds(el.seconds)),
    ])
    return EXIT_OK


def cmd_bounds(args) -> int:
    if not args.epsilons:
        raise ConfigError("--epsilons needs at least one value")
    gen, _ = _load(args)
    prob = gen.problem
    precond = build_preconditioner(prob, args.precond)
    ellipse, _ = _ellipse(args, prob, precond)
    if args.method == "chebyshevt" and ellipse is None:
        raise ConfigError("chebyshevt bounds need ellipse parameters: pass --ellipse d,c or --estimate")
    out = _outdir(args)
    for eps in args.epsilons:
        rep = run_bound_harness(prob, precond, args.method, eps, args.iters, ellipse,
                                _start(args, prob), args.warm_start_after, args.variant,
                                sigma=args.sigma, strict=args.strict, seed=args.seed)
        if out:
            rep.to_csv(out / f"bounds_{args.method}_eps{eps:g}.csv")
        last = rep.rows[-1]
        print(f"{args.method} eps={eps:g}: l={last.iteration} measured={last.measured_error:.3e} "
              f"bound={last.bound:.3e} violations={rep.violations}/{len(rep.rows)}"
              + (f" basis_violations={rep.basis_violations}" if args.method == "gmrest" else ""))
    return EXIT_OK


def cmd_timestep(args) -> int:
    gen, settings = _load(args)
    prob = gen.problem
    theta = args.theta if args.theta is not None else settings.get("theta", 1.0)
    dt = args.dt if args.dt is not None else settings.get("dt", 1.0)
    steps = args.steps if args.steps is not None else settings.get("steps", 5)
    series = settings.get("dirichlet")
    if series is None or len(series) != steps + 1:
        series = [gen.b] * (steps + 1)
    if gen.At_f is None or gen.At_s is None:
        raise ConfigError("theta scheme needs At_f and At_s in the manifest")
    fluid = gen.fluid_index if gen.fluid_index is not None else -1
    X0 = None if args.start == "zero" else _start(args, prob)
    tp = TimeProblem(prob, gen.At_f, gen.At_s, gen.grid.reference[fluid], theta, dt, steps,
                     series, X0, fluid)
    l, d = _iterations(args)
    t0 = time.perf_counter()
    precond = build_preconditioner(prob, "mean-T-time", time_problem=tp)
    t_pre = time.perf_counter() - t0
    ellipse, t_est = _ellipse(args, build_step_operator(tp), precond)
    cfg = SolverConfig(args.method, l, d, _truncation(args), ellipse, tol=args.tol,
                       truncate_s=args.truncate_s)
    rows, times = [], []

    def cb(i, X, rec):
        rows.append([i, rec.iterations, repr(rec.final_relres), rec.breakdown or "", X.rank])
        times.append([i, f"{rec.seconds:.6f}"])
        print(f"step {i}: updates={rec.iterations} relres={rec.final_relres:.3e} rank={X.rank}")

    X, records = run_theta_scheme(tp, cfg, precond, cb)
    out = _outdir(args)
    if out:
        _write_csv(out / "steps.csv", ["step", "iterations", "relres", "breakdown", "rank"], rows)
        _write_csv(out / "step_times.csv", ["step", "seconds"], times)
        summary = {"method": args.method, "theta": theta, "dt": dt, "steps": steps,
                   "seconds": {"estimate": t_est, "precondition": t_pre,
                               "compute": sum(r.seconds for r in records)}}
        summary["seconds"]["total"] = sum(summary["seconds"].values())
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _problem_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--manifest", help="problem manifest file")
    g.add_argument("--generate", metavar="SPEC",
                   help="generator spec, e.g. 'M=2000,m1=5,m2=5,m3=5,seed=0'")
    p.add_argument("--precond", default="mean-T", choices=["mean-T", "A0"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="simulator seed")


def _ellipse_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ellipse", type=_pair, metavar="d,c", help="Chebyshev ellipse center and focal distance")
    g.add_argument("--estimate", action="store_true", help="estimate the ellipse from the block spectra")
    p.add_argument("--corner-only", dest="full_enumeration", action="store_false",
                   help="estimate on the parameter corners only (default)")
    p.add_argument("--full-enumeration", dest="full_enumeration", action="store_true",
                   help="estimate on every block")
    p.add_argument("--inflation", type=float, default=1.0, help="factor applied to c")
    p.set_defaults(full_enumeration=False)


def _solver_args(p, methods):
    p.add_argument("--method", choices=methods, default="gmrestr")
    p.add_argument("--rank", type=int, default=30)
    p.add_argument("--iters", type=int, help="total iteration budget")
    p.add_argument("--restarts", type=int, help="number of restarts k (k + 1 cycles, default 3)")
    p.add_argument("--per-restart", type=int, default=6, help="iterations per cycle")
    p.add_argument("--trunc-mode", choices=["exact", "simulator", "none"], default="exact")
    p.add_argument("--epsilon", type=float, default=0.0, help="simulator accuracy")
    p.add_argument("--start", choices=["ones", "zero"], default="ones")
    p.add_argument("--tol", type=float, help="early exit on the relative residual")
    p.add_argument("--truncate-s", action="store_true", help="truncate the Bi-CGstab s-update")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lowrank-krylov", description="Truncated low-rank Krylov solvers for F(X) = B.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic problem manifest")
    p.add_argument("--generate", metavar="SPEC", default="")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int, help="also store theta-scheme data for this many steps")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--ramp", action="store_true", help="ramp the Dirichlet data from 0 to b")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run a truncated solver or the per-block reference")
    _problem_args(p)
    _solver_args(p, list(METHODS) + ["reference"])
    _ellipse_args(p)
    p.add_argument("--per-block", choices=["gmres", "lu", "chebyshev"], default="gmres",
                   help="per-block method of --method reference")
    p.add_argument("--block-iters", type=int, default=16)
    p.add_argument("--block-restart", type=int, default=8)
    p.add_argument("--block-precond", choices=["sampled", "exact", "mean"], default="sampled")
    p.add_argument("--n-sampled", type=int, default=5)
    p.add_argument("--strict", action="store_true", help="fail on the first block above --tol")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--baseline", action="store_true", help="also run per-block GMRES and report the speedup")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("estimate", help="estimate the Chebyshev ellipse")
    _problem_args(p)
    p.add_argument("--corner-only", dest="full_enumeration", action="store_false")
    p.add_argument("--full-enumeration", dest="full_enumeration", action="store_true")
    p.add_argument("--inflation", type=float, default=1.0)
    p.set_defaults(full_enumeration=False)
    p.add_argument("--coarse", type=int, metavar="M", help="regenerate with M unknowns for the estimate")
    p.add_argument("--max-dim", type=int, default=2000)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bounds", help="truncation-simulator bound harness")
    _problem_args(p)
    _ellipse_args(p)
    p.add_argument("--method", choices=["gmrest", "chebyshevt"], default="gmrest")
    p.add_argument("--epsilons", type=_float_list, required=True, help="comma-separated accuracies")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warm-start-after", type=int, default=0)
    p.add_argument("--variant", choices=["practical", "exact-solve"], default="practical")
    p.add_argument("--sigma", type=float, help="||P^-1 A|| estimate (default d + c)")
    p.add_argument("--strict", action="store_true", help="simulate eps / n_F per truncation")
    p.add_argument("--start", choices=["ones", "zero"], default="ones")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("timestep", help="theta-scheme run")
    _problem_args(p)
    _solver_args(p, list(METHODS))
    _ellipse_args(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_timestep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors exit with EXIT_CONFIG, --help with 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, FactorizationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
