"""Free-boundary formulations of the two extended Blasius problems.

Both problems are posed on the normalised coordinate ``theta = eta / eta_eps``
with state ``u = (f, f', f'', eta_eps)``. The far-field condition
``f'(inf) = 1`` is replaced by ``f'(eta_eps) = 1`` and ``f''(eta_eps) = eps``
at the unknown boundary ``eta_eps``, which is carried as the constant fourth
state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bvp_core import (
    OdeBvpProblem,
    SolutionGrid,
    SolveReport,
    SolverConfig,
    BvpError,
    interpolate,
    solve_bvp,
    uniform_mesh,
)

__all__ = [
    "Family",
    "ExtendedBlasiusSpec",
    "FbfResult",
    "FbfSolveError",
    "ParameterDomainError",
    "NonFiniteStateError",
    "CLAMP_FLOOR",
    "SAMPLE_POINTS",
    "exblasius1_rhs",
    "exblasius2_rhs",
    "exblasius2_rhs_literal",
    "fbf_boundary_residual",
    "initial_iterate",
    "initial_grid",
    "build_problem",
    "solve_fbf",
]

CLAMP_FLOOR = 1e-14
SAMPLE_POINTS = 201


class Family(enum.IntEnum):
    PROBLEM1 = 1
    PROBLEM2 = 2


class ParameterDomainError(ValueError):
    """A problem parameter is outside the family's admissible range."""


class NonFiniteStateError(ValueError):
    pass


class FbfSolveError(BvpError):
    """The collocation solve did not converge; carries the report and last grid."""

    def __init__(self, report: SolveReport, grid: Optional[SolutionGrid] = None):
        self.report = report
        self.grid = grid
        super().__init__(
            f"free-boundary solve failed ({report.failure_reason}) after "
            f"{report.newton_iterations} Newton iterations on "
            f"{report.final_mesh_points} nodes, max residual {report.max_residual:.3e}"
        )

    def __reduce__(self):
        # keeps the exception intact across process boundaries
        return (type(self), (self.report, self.grid))


@dataclass(frozen=True)
class ExtendedBlasiusSpec:
    family: Family
    p_exponent: float
    epsilon: float
    paper_literal_rhs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        P, eps = float(self.p_exponent), float(self.epsilon)
        if not np.isfinite(P):
            raise ParameterDomainError("P must be finite")
        if self.family is Family.PROBLEM1 and not 1.0 <= P < 2.0:
            raise ParameterDomainError(f"problem 1 requires 1 <= P < 2, got P = {P}")
        if self.family is Family.PROBLEM2 and not P > 0.0:
            raise ParameterDomainError(f"problem 2 requires P > 0, got P = {P}")
        if not (eps > 0.0 and np.isfinite(eps)):
            raise ParameterDomainError(f"epsilon must be > 0, got {eps}")

    def with_epsilon(self, epsilon: float) -> "ExtendedBlasiusSpec":
        return ExtendedBlasiusSpec(self.family, self.p_exponent, epsilon, self.paper_literal_rhs)


@dataclass(frozen=True, eq=False)
class FbfResult:
    """Converged free-boundary solution.

    ``samples`` has shape ``(201, 4)`` with columns ``(eta, f, f', f'')``
    on ``[0, eta_eps]``. ``grid`` is the converged normalised solution, kept
    for warm starts.
    """

    eta_eps: float
    fpp0: float
    samples: np.ndarray
    report: SolveReport
    grid: SolutionGrid
    spec: ExtendedBlasiusSpec

    @property
    def eta_spread(self) -> float:
        u4 = self.grid.states[:, 3]
        return float(np.max(np.abs(u4 - np.mean(u4))))


def _check_finite(u):
    if not np.all(np.isfinite(u)):
        raise NonFiniteStateError("non-finite state passed to the right-hand side")


def exblasius1_rhs(theta, u, P):
    """Normal form of problem 1: ``f''' (f'')^(P-1) + f f'' / 2 = 0``."""
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    u1, u2, u3, u4 = u[0], u[1], u[2], u[3]
    curv = np.maximum(u3, CLAMP_FLOOR) ** (2.0 - P)
    return np.stack([u4 * u2, u4 * u3, -u4 * 0.5 * u1 * curv, np.zeros_like(u4)])


def exblasius2_rhs(theta, u, P):
    """Normal form of problem 2, ``(|f''|^(P-1) f'')' + f f'' / (P+1) = 0``.

    Expanding the derivative gives ``P |f''|^(P-1) f'''``, hence
    ``f''' = -f sign(f'') |f''|^(2-P) / (P (P+1))``.
    """
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    u1, u2, u3, u4 = u[0], u[1], u[2], u[3]
    mag = np.abs(u3)
    if P > 2.0:
        mag = np.maximum(mag, CLAMP_FLOOR)
    third = -u4 * u1 * np.sign(u3) * mag ** (2.0 - P) / (P * (P + 1.0))
    return np.stack([u4 * u2, u4 * u3, third, np.zeros_like(u4)])


def exblasius2_rhs_literal(theta, u, P):
    """Problem 2 with the denominator ``(P+1)((P-1)|u3|^(P-2) + |u3|^(P-1))``.

    Kept only for comparison runs. It agrees with :func:`exblasius2_rhs` at
    ``P = 1`` but not elsewhere, and for ``P < 1`` the denominator vanishes
    at ``|u3| = 1 - P``.
    """
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    u1, u2, u3, u4 = u[0], u[1], u[2], u[3]
    mag = np.maximum(np.abs(u3), CLAMP_FLOOR)
    denom = (P + 1.0) * ((P - 1.0) * mag ** (P - 2.0) + mag ** (P - 1.0))
    return np.stack([u4 * u2, u4 * u3, -u4 * u1 * u3 / denom, np.zeros_like(u4)])


def fbf_boundary_residual(u_left, u_right, eps):
    return np.array([u_left[0], u_left[1], u_right[1] - 1.0, u_right[2] - eps])


def initial_iterate(theta: float) -> np.ndarray:
    return np.array([theta, 2.0 + theta, theta, 1.0])


def initial_grid(points: int = 11) -> SolutionGrid:
    return SolutionGrid.from_function(uniform_mesh(points), initial_iterate)


def build_problem(spec: ExtendedBlasiusSpec) -> OdeBvpProblem:
    P = float(spec.p_exponent)
    eps = float(spec.epsilon)
    if spec.family is Family.PROBLEM1:
        rhs = exblasius1_rhs
    elif spec.paper_literal_rhs:
        rhs = exblasius2_rhs_literal
    else:
        rhs = exblasius2_rhs
    return OdeBvpProblem(
        dimension=4,
        rhs=lambda theta, u: rhs(theta, u, P),
        bc=lambda ua, ub: fbf_boundary_residual(ua, ub, eps),
    )


def solve_fbf(
    spec: ExtendedBlasiusSpec,
    config: Optional[SolverConfig] = None,
    warm_start: Optional[SolutionGrid] = None,
) -> FbfResult:
    """Solve one free-boundary problem and map it back to physical ``eta``.

    Starts from ``warm_start`` unchanged if given, otherwise from the coarse
    iterate ``(theta, 2 + theta, theta, 1)`` on 11 uniform nodes.

    Raises
    ------
    FbfSolveError
        If the collocation solve does not converge.
    """
    config = config or SolverConfig()
    if warm_start is not None and warm_start.dimension != 4:
        raise ValueError("warm start must carry 4 state components")
    problem = build_problem(spec)
    start = warm_start if warm_start is not None else initial_grid()
    grid, report = solve_bvp(problem, start, config)
    if not report.converged:
        raise FbfSolveError(report, grid)

    eta_eps = float(np.mean(grid.states[:, 3]))
    theta = np.linspace(0.0, 1.0, SAMPLE_POINTS)
    values = interpolate(problem, grid, theta)
    samples = np.column_stack([theta * eta_eps, values[:, :3]])
    return FbfResult(
        eta_eps=eta_eps,
        fpp0=float(grid.states[0, 2]),
        samples=samples,
        report=report,
        grid=grid,
        spec=spec,
    )
