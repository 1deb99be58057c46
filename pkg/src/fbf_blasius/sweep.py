"""Epsilon continuation: solve a decreasing sequence of free-boundary problems."""

from __future__ import annotations

import dataclasses
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .bvp_core import SolverConfig
from .problems import ExtendedBlasiusSpec, FbfResult, FbfSolveError, solve_fbf

__all__ = [
    "TABLE1_EPSILONS",
    "WarmStartPolicy",
    "SweepPlan",
    "SweepRow",
    "SweepError",
    "run_sweep",
    "convergence_summary",
    "agreeing_decimals",
]

# The epsilon column exactly as printed, including the jump from 1e-2 to 1e-4.
TABLE1_EPSILONS = (1e-1, 1e-2, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10)


class WarmStartPolicy(enum.Enum):
    CHAIN = "chain"
    COLD = "cold"


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    eta_eps: float
    fpp0: float
    newton_iterations: int
    mesh_points: int

    @classmethod
    def from_result(cls, result: FbfResult) -> "SweepRow":
        return cls(
            epsilon=float(result.spec.epsilon),
            eta_eps=result.eta_eps,
            fpp0=result.fpp0,
            newton_iterations=result.report.newton_iterations,
            mesh_points=result.report.final_mesh_points,
        )


@dataclass(frozen=True)
class SweepPlan:
    """A continuation run; ``spec_base.epsilon`` is ignored."""

    spec_base: ExtendedBlasiusSpec
    epsilons: Sequence[float] = TABLE1_EPSILONS
    config: SolverConfig = field(default_factory=SolverConfig)
    warm_start_policy: WarmStartPolicy = WarmStartPolicy.CHAIN
    # only used by the cold policy
    max_workers: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("a sweep needs at least one epsilon")
        if any(not (e > 0.0 and math.isfinite(e)) for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "warm_start_policy", WarmStartPolicy(self.warm_start_policy))


class SweepError(Exception):
    """A solve inside the sweep failed; ``rows`` holds what completed before it."""

    def __init__(self, epsilon: float, rows: list, cause: FbfSolveError):
        self.epsilon = epsilon
        self.rows = rows
        self.cause = cause
        super().__init__(f"sweep failed at epsilon = {epsilon!r}: {cause}")

    def __reduce__(self):
        return (type(self), (self.epsilon, self.rows, self.cause))


def _solve_cold(spec: ExtendedBlasiusSpec, config: SolverConfig) -> SweepRow:
    return SweepRow.from_result(solve_fbf(spec, config))


def run_sweep(plan: SweepPlan) -> list[SweepRow]:
    """Solve every epsilon of ``plan`` and return one row per epsilon, in order.

    Under the chain policy each solve starts from the previous converged
    grid; the first one (and every cold solve) starts from the coarse
    default iterate. A chained solve that fails is retried once from the
    coarse iterate, and the row counts the Newton iterations of both.

    Raises
    ------
    SweepError
        On the first failed solve, carrying the rows completed before it.
    """
    rows: list[SweepRow] = []
    specs = [plan.spec_base.with_epsilon(e) for e in plan.epsilons]

    if plan.warm_start_policy is WarmStartPolicy.COLD and plan.max_workers > 1:
        with ProcessPoolExecutor(max_workers=plan.max_workers) as pool:
            futures = [pool.submit(_solve_cold, s, plan.config) for s in specs]
            for spec, fut in zip(specs, futures):
                try:
                    rows.append(fut.result())
                except FbfSolveError as exc:
                    for rest in futures:
                        rest.cancel()
                    raise SweepError(spec.epsilon, rows, exc) from exc
        return rows

    warm = None
    for spec in specs:
        spent = 0
        try:
            result = solve_fbf(spec, plan.config, warm_start=warm)
        except FbfSolveError as exc:
            if warm is None:
                raise SweepError(spec.epsilon, rows, exc) from exc
            # a large jump in eta_eps can defeat the residual-monotone damping
            # from a warm start; the coarse start is the fallback
            spent = exc.report.newton_iterations
            try:
                result = solve_fbf(spec, plan.config)
            except FbfSolveError as exc2:
                raise SweepError(spec.epsilon, rows, exc2) from exc2
        row = SweepRow.from_result(result)
        if spent:
            row = dataclasses.replace(row, newton_iterations=row.newton_iterations + spent)
        rows.append(row)
        if plan.warm_start_policy is WarmStartPolicy.CHAIN:
            warm = result.grid
    return rows


def agreeing_decimals(a: float, b: float, max_digits: int = 15) -> int:
    """Number of leading decimal digits (after the point) shared by ``a`` and ``b``.

    >>> agreeing_decimals(0.469056, 0.469055)
    5
    """
    if a == b:
        return max_digits
    if (a < 0) != (b < 0) or math.trunc(a) != math.trunc(b):
        return 0
    # rounding to max_digits hides binary noise such as 0.469055 -> 0.4690549999...
    da = f"{abs(a):.{max_digits}f}".split(".")[1]
    db = f"{abs(b):.{max_digits}f}".split(".")[1]
    count = 0
    for x, y in zip(da, db):
        if x != y:
            break
        count += 1
    return count


def convergence_summary(rows: Sequence[SweepRow]) -> tuple[float, int]:
    """Limit estimate of ``f''(0)`` and the digits the last two rows share."""
    if len(rows) < 2:
        raise ValueError("convergence_summary needs at least 2 rows")
    last, prev = rows[-1].fpp0, rows[-2].fpp0
    return last, agreeing_decimals(prev, last)
