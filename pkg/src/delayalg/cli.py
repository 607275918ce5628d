"""Command-line front end.

Exit codes: 0 success/YES, 1 usage or input error, 2 a definite NO verdict
(failed causality/closedness), 3 inconclusive (heuristic search exhausted).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .bicausal import check_condition_C, implicit_solve
from .ddae import explicit_form, reduce_index
from .errors import (
    BudgetExhausted,
    ConditionCViolation,
    CoverageError,
    DelayAlgError,
    DimensionError,
    IntegrationFailure,
    SolveError,
)
from .exprs import DelayedVar, eval_num
from .problems import emit_system_file, load_problem
from .report import Report
from .solver import History, map_back, residual, solve_steps

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO = 2
EXIT_INCONCLUSIVE = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="delayalg",
        description="Bicausal resolution, index reduction, and step-method "
        "solving for time-delay algebraic systems",
    )
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized zero tests")
    ap.add_argument("--degree-bound", type=int, default=None, help="inverse search bound")
    ap.add_argument("--factor-box", type=int, default=3, help="integrating-factor exponent box")
    ap.add_argument("--tol", type=float, default=1e-9, help="numeric tolerance for reports")
    ap.add_argument("--json", action="store_true", help="emit a JSON report on stdout")
    ap.add_argument("--trace", action="store_true", help="include the step trace")
    sub = ap.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="decide bicausal resolvability of the equations")
    p_check.add_argument("file")

    p_reduce = sub.add_parser("reduce", help="reduce a delayed DAE to index-0 form")
    p_reduce.add_argument("file")
    p_reduce.add_argument("--emit", help="write the reduced system file here")

    p_solve = sub.add_parser("solve", help="reduce, integrate, and map back")
    p_solve.add_argument("file")
    p_solve.add_argument("--T", type=float, default=3.0)
    p_solve.add_argument("--h", type=float, default=1 / 128)
    p_solve.add_argument("--out", help="CSV output path")
    p_solve.add_argument("--warmup", type=int, default=None,
                         help="units of pre-roll before t = 0 (default: derived)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args)
        if args.command == "reduce":
            return cmd_reduce(args)
        return cmd_solve(args)
    except (IntegrationFailure, BudgetExhausted, SolveError) as err:
        print(f"inconclusive: {err}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except DelayAlgError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


def _finish(report: Report, args, code: int) -> int:
    if args.json:
        print(report.to_json(include_trace=args.trace))
    else:
        print(report.human(include_trace=args.trace))
    return code


def cmd_check(args) -> int:
    problem = load_problem(args.file)
    ctx = problem.context(seed=args.seed)
    equations = problem.parsed_equations(ctx)
    if not equations:
        print("error: the file declares no equations", file=sys.stderr)
        return EXIT_ERROR
    lambdas = [e for _, e in equations]
    result = check_condition_C(
        lambdas, ctx, degree_bound=args.degree_bound, factor_box=args.factor_box
    )
    report = Report(
        command="check",
        source=Path(args.file).name,
        seed=args.seed,
        verdict=result.verdict,
        trace=result.trace,
        probabilistic=result.probabilistic_flag,
        warnings=list(ctx.warnings),
    )
    if result.verdict == "YES":
        solution = implicit_solve(lambdas, result)
        report.payload["theta"] = [str(t) for t in result.theta]
        report.payload["coordinates"] = [str(f) for f in result.frame]
        report.payload["resolved"] = [
            f"{ctx.var_names[c.base - 1]} = {c.solution}"
            for c in solution.components
            if c.solution is not None
        ]
        report.payload["explicit"] = solution.explicit
        report.certificates.append(result.stacked_cert.to_json())
        return _finish(report, args, EXIT_OK)
    report.payload["witness"] = result.witness.describe()
    return _finish(report, args, EXIT_NO)


def cmd_reduce(args) -> int:
    problem = load_problem(args.file)
    ctx = problem.context(seed=args.seed)
    system = problem.parsed_system(ctx)
    if system is None:
        print("error: the file has no system block", file=sys.stderr)
        return EXIT_ERROR
    hints = problem.parsed_hints(ctx)
    try:
        result = reduce_index(system, hints=hints or None)
    except ConditionCViolation as err:
        report = Report(
            command="reduce",
            source=Path(args.file).name,
            seed=args.seed,
            verdict="NO",
            payload={"witness": str(err)},
        )
        return _finish(report, args, EXIT_NO)
    report = Report(
        command="reduce",
        source=Path(args.file).name,
        seed=args.seed,
        verdict="OK",
        warnings=list(ctx.warnings),
    )
    report.payload["k_star"] = result.k_star
    report.payload["classification"] = result.classification
    report.payload["unique_solution"] = result.unique
    report.payload["free_variables"] = result.free_vars
    report.payload["reduced_vars"] = result.system.ctx.var_names
    report.payload["coordinate_map"] = [str(f) for f in result.phi_forward]
    report.payload["map_back"] = [str(e) for e in result.map_back]
    report.payload["constraints"] = [
        str(f) for step in result.steps for f in step.f2
    ]
    for step in result.steps:
        report.certificates.append(step.q_cert.to_json())
        report.certificates.append(step.phi.jacobian_cert.to_json())
    emitted = emit_system_file(result.system, problem.const_values)
    if args.emit:
        Path(args.emit).write_text(emitted)
        report.payload["emitted"] = args.emit
    else:
        report.payload["reduced_system"] = emitted.splitlines()
    return _finish(report, args, EXIT_OK)


def _histories(problem, ctx, const_values):
    from .exprs import Context
    from .parsing import parse_expr

    s_ctx = Context(["s"], dict(problem.constants))
    value_fns, deriv_fns = [], []
    for name in ctx.var_names:
        if name not in problem.histories:
            raise CoverageError(f"no history for variable {name}")
        expr = parse_expr(problem.histories[name], s_ctx)
        hist = History.from_exprs([expr], s_ctx, const_values=const_values)
        value_fns.append(hist.value_fns[0])
        deriv_fns.append(hist.deriv_fns[0])
    return History(value_fns, deriv_fns)


def cmd_solve(args) -> int:
    problem = load_problem(args.file)
    ctx = problem.context(seed=args.seed)
    system = problem.parsed_system(ctx)
    if system is None:
        print("error: the file has no system block", file=sys.stderr)
        return EXIT_ERROR
    const_values = dict(problem.const_values)
    hints = problem.parsed_hints(ctx)
    result = reduce_index(system, hints=hints or None)
    ode = explicit_form(result.system)
    orig_hist = _histories(problem, ctx, const_values)
    # project the original history through the forward map
    red_ctx = result.system.ctx
    n_red = red_ctx.n

    def z_value(i, t):
        expr = result.phi_forward[i]
        assign = {}
        for a in expr.var_atoms():
            assign[a] = orig_hist.value(a.base - 1, t - a.shift)
        assign.update(const_values)
        return eval_num(expr, assign)

    z_hist = History(
        [(lambda t, i=i: z_value(i, t)) for i in range(n_red)],
        [(lambda t: 0.0) for _ in range(n_red)],
    )
    mb_depth = max(
        [0] + [a.shift for e in result.map_back for a in e.var_atoms()]
    )
    warm = args.warmup if args.warmup is not None else result.q_shift_depth + mb_depth
    t0 = -float(warm)
    traj = solve_steps(
        ode, z_hist, T=args.T, h=args.h, t0=t0, const_values=const_values
    )
    mapped = map_back(
        traj,
        result.map_back,
        const_values=const_values,
        original_history=orig_hist,
        t_from=t0,
    )
    res_val = residual(system, mapped, const_values=const_values, t_start=0.0, t_end=args.T)
    report = Report(
        command="solve",
        source=Path(args.file).name,
        seed=args.seed,
        verdict="OK",
        warnings=list(ctx.warnings) + traj.warnings,
    )
    report.payload["k_star"] = result.k_star
    report.payload["classification"] = result.classification
    report.payload["T"] = args.T
    report.payload["h"] = args.h
    report.payload["warmup_units"] = warm
    report.payload["residual_max"] = res_val
    report.payload["within_tol"] = res_val < args.tol
    if args.out:
        rows = mapped.to_rows()
        header = (
            ["t"]
            + ctx.var_names
            + [f"d{name}" for name in ctx.var_names]
        )
        with open(args.out, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                if row[0] < -1e-12:
                    continue
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
        report.payload["csv"] = args.out
    return _finish(report, args, EXIT_OK)


if __name__ == "__main__":
    sys.exit(main())
