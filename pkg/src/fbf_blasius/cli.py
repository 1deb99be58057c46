"""Command-line front end: ``fbf-blasius <solve|sweep|compare|plot> ...``.

Exit codes: 0 success, 2 usage or parameter bounds, 3 solver failure,
4 oracle failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bvp_core import SolverConfig
from .oracle import OracleError, ShootingConfig, solve_truncated
from .output import COMPONENTS, render_svg, rows_to_json, write_rows_csv
from .problems import ExtendedBlasiusSpec, FbfSolveError, ParameterDomainError, solve_fbf
from .sweep import (
    TABLE1_EPSILONS,
    SweepError,
    SweepPlan,
    SweepRow,
    WarmStartPolicy,
    agreeing_decimals,
    convergence_summary,
    run_sweep,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_ORACLE = 4
EXIT_IO = 5

COMPARE_EPSILON = 1e-8


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def _eps_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid epsilon list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbf-blasius",
        description="Free-boundary solutions of the extended Blasius problems.",
    )
    parser.add_argument("command", choices=["solve", "sweep", "compare", "plot"])
    parser.add_argument("--family", type=int, choices=[1, 2], required=True)
    parser.add_argument("--p", type=float, required=True, dest="p_exponent")
    parser.add_argument("--eps", type=_eps_list, default=None,
                        help="epsilon, or a comma-separated decreasing list for sweep")
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--format", choices=["csv", "json", "svg"], default=None)
    parser.add_argument("--newton-tol", type=float, default=None)
    parser.add_argument("--residual-tol", type=float, default=None)
    parser.add_argument("--max-mesh-points", type=int, default=None)
    parser.add_argument("--warm-start", choices=["chain", "cold"], default="chain")
    parser.add_argument("--paper-literal-rhs", action="store_true",
                        help="use the printed problem-2 denominator (comparison only)")
    parser.add_argument("--eta-inf", type=float, default=10.0,
                        help="truncated boundary for compare")
    parser.add_argument("--components", default="f,fp,fpp",
                        help="curves to plot, subset of f,fp,fpp")
    return parser


def _config(args) -> SolverConfig:
    overrides = {}
    if args.newton_tol is not None:
        overrides["newton_tol"] = args.newton_tol
    if args.residual_tol is not None:
        overrides["residual_tol"] = args.residual_tol
    if args.max_mesh_points is not None:
        overrides["max_mesh_points"] = args.max_mesh_points
    try:
        return SolverConfig(**overrides)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE)


def _spec(args, epsilon: float) -> ExtendedBlasiusSpec:
    try:
        return ExtendedBlasiusSpec(args.family, args.p_exponent, epsilon, args.paper_literal_rhs)
    except ParameterDomainError as exc:
        raise CliError(str(exc), EXIT_USAGE)


def _scalar_eps(args, default: Optional[float] = None) -> float:
    if args.eps is None:
        if default is None:
            raise CliError(f"{args.command} requires --eps", EXIT_USAGE)
        return default
    if len(args.eps) != 1:
        raise CliError(f"{args.command} takes a single --eps value", EXIT_USAGE)
    return args.eps[0]


def _check_format(args, allowed: Sequence[str], default: str) -> str:
    fmt = args.format or default
    if fmt not in allowed:
        raise CliError(f"{args.command} cannot write format {fmt!r}", EXIT_USAGE)
    return fmt


def _write(path: Optional[Path], text: str, stdout) -> None:
    if path is None:
        stdout.write(text)
        return
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def _solver_failure(exc: FbfSolveError) -> CliError:
    return CliError(f"{exc}\n{exc.report}", EXIT_SOLVER)


def _render_rows(rows, fmt: str) -> str:
    if fmt == "json":
        return rows_to_json(rows) + "\n"
    buf = io.StringIO()
    write_rows_csv(rows, buf)
    return buf.getvalue()


def cmd_solve(args, stdout) -> int:
    fmt = _check_format(args, ("csv", "json"), "csv")
    spec = _spec(args, _scalar_eps(args))
    config = _config(args)
    try:
        result = solve_fbf(spec, config)
    except FbfSolveError as exc:
        raise _solver_failure(exc)
    print(f"eta_eps = {result.eta_eps:#.9g}", file=stdout)
    print(f"fpp0 = {result.fpp0:#.9g}", file=stdout)
    if args.out is not None:
        _write(args.out, _render_rows([SweepRow.from_result(result)], fmt), stdout)
    return EXIT_OK


def cmd_sweep(args, stdout) -> int:
    fmt = _check_format(args, ("csv", "json"), "csv")
    epsilons = args.eps if args.eps is not None else list(TABLE1_EPSILONS)
    spec = _spec(args, epsilons[0] if epsilons else 1.0)
    for e in epsilons:
        _spec(args, e)
    try:
        plan = SweepPlan(spec, epsilons, _config(args), WarmStartPolicy(args.warm_start))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE)

    try:
        rows = run_sweep(plan)
    except SweepError as exc:
        text = _render_rows(exc.rows, "csv") + f"# failed at epsilon={exc.epsilon!r}\n"
        if fmt == "json":
            text = rows_to_json(exc.rows) + "\n"
        _write(args.out, text, stdout)
        raise CliError(f"{exc}\n{exc.cause.report}", EXIT_SOLVER)

    text = _render_rows(rows, fmt)
    _write(args.out, text, stdout)
    if len(rows) >= 2:
        limit, digits = convergence_summary(rows)
        print(f"fpp0 limit estimate = {limit:#.9g}", file=stdout)
        print(f"stabilized digits = {digits}", file=stdout)
    else:
        print(f"fpp0 = {rows[0].fpp0:#.9g}", file=stdout)
    return EXIT_OK


def cmd_compare(args, stdout) -> int:
    epsilon = _scalar_eps(args, COMPARE_EPSILON)
    spec = _spec(args, epsilon)
    try:
        cfg = ShootingConfig(eta_infinity=args.eta_inf)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    try:
        fbf = solve_fbf(spec, _config(args))
    except FbfSolveError as exc:
        raise _solver_failure(exc)
    try:
        shot = solve_truncated(args.family, args.p_exponent, cfg)
    except OracleError as exc:
        raise CliError(f"oracle failure: {exc}", EXIT_ORACLE)
    diff = abs(fbf.fpp0 - shot)
    print(f"fpp0 free boundary (eps={epsilon:g}) = {fbf.fpp0:.12g}", file=stdout)
    print(f"fpp0 shooting (eta_inf={cfg.eta_infinity:g}) = {shot:.12g}", file=stdout)
    print(f"abs difference = {diff:.3e}", file=stdout)
    print(f"agreeing decimals = {agreeing_decimals(fbf.fpp0, shot)}", file=stdout)
    return EXIT_OK


def cmd_plot(args, stdout) -> int:
    _check_format(args, ("svg",), "svg")
    keys = [k.strip() for k in args.components.split(",") if k.strip()]
    if not keys or any(k not in COMPONENTS for k in keys):
        raise CliError(f"--components must be a subset of {','.join(COMPONENTS)}", EXIT_USAGE)
    spec = _spec(args, _scalar_eps(args))
    try:
        result = solve_fbf(spec, _config(args))
    except FbfSolveError as exc:
        raise _solver_failure(exc)
    samples = result.samples
    columns = {"f": samples[:, 1], "fp": samples[:, 2], "fpp": samples[:, 3]}
    title = (f"problem {spec.family.value}, P = {spec.p_exponent:g}, "
             f"ε = {spec.epsilon:g}, ηε = {result.eta_eps:.6f}")
    svg = render_svg(samples[:, 0], {k: columns[k] for k in keys}, title=title)
    out = args.out if args.out is not None else Path("fbf_plot.svg")
    _write(out, svg, stdout)
    print(f"wrote {out}", file=stdout)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "compare": cmd_compare, "plot": cmd_plot}


def main(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, stdout)
    except CliError as exc:
        print(f"fbf-blasius: error: {exc}", file=stderr)
        return exc.status


def entry_point():  # pragma: no cover
    sys.exit(main())

