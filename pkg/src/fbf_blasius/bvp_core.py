"""Collocation solver for nonlinear first-order two-point BVPs on [0, 1].

The discretisation is the 3-stage Lobatto IIIa scheme (Hermite-Simpson in
condensed form): on each mesh interval the unknowns are the two node
states, the midpoint state is eliminated through the cubic Hermite
interpolant and the defect is Simpson's rule applied to ``u' = f``.

Problems are described by an :class:`OdeBvpProblem`. ``rhs`` must be
vectorised over columns: it receives ``theta`` of shape ``(m,)`` and ``u``
of shape ``(n, m)`` and returns shape ``(n, m)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "BvpError",
    "NonFiniteResidualError",
    "MeshBudgetExhausted",
    "MeshResolutionExhausted",
    "OdeBvpProblem",
    "Mesh",
    "SolutionGrid",
    "SolverConfig",
    "SolveReport",
    "assemble_residual",
    "finite_difference_jacobian",
    "newton_solve",
    "refine_mesh",
    "interpolate",
    "solve_bvp",
    "uniform_mesh",
]

# Interior sample points (fractions of an interval) used for the defect
# estimate. The midpoint is a collocation point, so it is not used.
_DEFECT_POINTS = (0.25, 0.75)
_FD_TYPICAL_SIZE = 1e-6


class BvpError(Exception):
    """Base class for solver errors."""


class NonFiniteResidualError(BvpError):
    def __init__(self, interval: Optional[int], message: str = ""):
        self.interval = interval
        where = "boundary conditions" if interval is None else f"interval {interval}"
        super().__init__(message or f"non-finite residual on {where}")

    def __reduce__(self):
        return (type(self), (self.interval, str(self)))


class MeshBudgetExhausted(BvpError):
    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(
            f"mesh_budget_exhausted: refinement needs {required} nodes, "
            f"budget is {budget}"
        )

    def __reduce__(self):
        return (type(self), (self.required, self.budget))


class MeshResolutionExhausted(MeshBudgetExhausted):
    """An interval that needs refining is too narrow to bisect in floating point."""

    def __init__(self, interval: int, budget: int):
        self.interval = interval
        BvpError.__init__(
            self, f"mesh_budget_exhausted: interval {interval} cannot be bisected further"
        )
        self.required = None
        self.budget = budget

    def __reduce__(self):
        return (type(self), (self.interval, self.budget))


@dataclass(frozen=True)
class OdeBvpProblem:
    """First-order system ``u' = rhs(theta, u)`` on [0, 1] with separated BCs.

    Attributes
    ----------
    dimension : int
        State size ``n``.
    rhs : callable
        ``rhs(theta, u) -> du/dtheta``, vectorised over the columns of ``u``.
    bc : callable
        ``bc(u_left, u_right) -> residuals`` with exactly ``n`` entries.
    """

    dimension: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bc: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError("dimension must be a positive integer")


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a mesh needs at least 2 nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("mesh endpoints must be exactly 0 and 1")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    def __len__(self) -> int:
        return self.nodes.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return np.array_equal(self.nodes, other.nodes)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)


def uniform_mesh(points: int = 11) -> Mesh:
    nodes = np.linspace(0.0, 1.0, points)
    nodes[-1] = 1.0
    return Mesh(nodes)


@dataclass(frozen=True, eq=False)
class SolutionGrid:
    """Node states on a mesh; ``states`` has shape ``(N, n)``."""

    mesh: Mesh
    states: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] != len(self.mesh):
            raise ValueError(
                f"{states.shape[0]} states for a mesh of {len(self.mesh)} nodes"
            )
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[float], np.ndarray]) -> "SolutionGrid":
        return cls(mesh, np.array([func(t) for t in mesh.nodes], dtype=float))

    def with_flat(self, flat: np.ndarray) -> "SolutionGrid":
        return SolutionGrid(self.mesh, np.reshape(flat, self.states.shape))


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    residual_tol: float = 1e-8
    max_newton_iters: int = 50
    damping_min: float = 2.0**-10
    fd_jacobian_step: float = 1e-7
    max_mesh_points: int = 2000
    max_refinements: int = 12

    def __post_init__(self):
        for name in ("newton_tol", "residual_tol", "fd_jacobian_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("max_newton_iters", "max_mesh_points", "max_refinements"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0.0 < self.damping_min <= 1.0:
            raise ValueError("damping_min must lie in (0, 1]")

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    newton_iterations: int
    final_mesh_points: int
    max_residual: float
    failure_reason: Optional[str] = None
    refinements: int = 0
    # max-norm of the damped residual for every trial step, one list per
    # Newton iteration; the accepted trial is the last entry
    damping_trials: list = field(default_factory=list, repr=False, compare=False)


# ---------------------------------------------------------------------------
# residual


def _eval_rhs(problem: OdeBvpProblem, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
    f = np.asarray(problem.rhs(theta, y), dtype=float)
    return np.reshape(f, y.shape)


def _interval_defects(problem, x, h, yl, fl, yr, fr):
    """Lobatto IIIa defects of intervals with end states ``yl``/``yr``."""
    y_mid = 0.5 * (yl + yr) - (h / 8.0) * (fr - fl)
    # the rhs is never handed a non-finite state; such intervals get NaN defects
    bad = ~np.all(np.isfinite(y_mid), axis=0)
    if np.any(bad):
        y_mid = np.where(bad, yl, y_mid)
    f_mid = _eval_rhs(problem, x[:-1] + 0.5 * h, y_mid)
    if np.any(bad):
        f_mid = np.where(bad, np.nan, f_mid)
    return yr - yl - (h / 6.0) * (fl + 4.0 * f_mid + fr)


def _first_bad_interval(defects: np.ndarray) -> int:
    bad = ~np.all(np.isfinite(defects), axis=0)
    return int(np.argmax(bad))


def _residual_parts(problem, grid):
    x = grid.mesh.nodes
    h = grid.mesh.steps
    y = grid.states.T
    finite = np.all(np.isfinite(y), axis=0)
    if not np.all(finite):
        node = int(np.argmin(finite))
        raise NonFiniteResidualError(max(node - 1, 0), f"non-finite state at node {node}")
    with np.errstate(all="ignore"):
        f = _eval_rhs(problem, x, y)
        defects = _interval_defects(problem, x, h, y[:, :-1], f[:, :-1], y[:, 1:], f[:, 1:])
        bc = np.asarray(problem.bc(y[:, 0], y[:, -1]), dtype=float).ravel()
    if bc.size != problem.dimension:
        raise ValueError(f"bc returned {bc.size} residuals, expected {problem.dimension}")
    if not np.all(np.isfinite(defects)):
        raise NonFiniteResidualError(_first_bad_interval(defects))
    if not np.all(np.isfinite(bc)):
        raise NonFiniteResidualError(None)
    return x, h, y, f, defects, bc


def assemble_residual(problem: OdeBvpProblem, grid: SolutionGrid) -> np.ndarray:
    """Collocation residual of ``grid``, length ``n * N``.

    The first ``n * (N - 1)`` entries are the interval defects, interval by
    interval; the last ``n`` entries are the boundary residuals.

    Raises
    ------
    NonFiniteResidualError
        If the right-hand side produces NaN/Inf; ``interval`` names the
        first offending interval (``None`` for the boundary conditions).
    """
    *_, defects, bc = _residual_parts(problem, grid)
    return np.concatenate([defects.T.ravel(), bc])


# ---------------------------------------------------------------------------
# Jacobian


def _fd_increment(step, v, relative):
    if relative:
        inc = step * np.maximum(np.abs(v), _FD_TYPICAL_SIZE)
    else:
        inc = step * (1.0 + np.abs(v))
    # a power of two keeps u + inc and the residual differences exact more often
    return np.exp2(np.round(np.log2(inc)))


def _jacobian_blocks(problem, grid, step, relative):
    x, h, y, f, defects, bc = _residual_parts(problem, grid)
    n, N = y.shape
    left = np.empty((N - 1, n, n))
    right = np.empty((N - 1, n, n))
    bc_left = np.empty((n, n))
    bc_right = np.empty((n, n))

    for k in range(n):
        yp = y.copy()
        yp[k] += _fd_increment(step, y[k], relative)
        dk = yp[k] - y[k]
        with np.errstate(all="ignore"):
            fp = _eval_rhs(problem, x, yp)
            d_left = _interval_defects(problem, x, h, yp[:, :-1], fp[:, :-1], y[:, 1:], f[:, 1:])
            d_right = _interval_defects(problem, x, h, y[:, :-1], f[:, :-1], yp[:, 1:], fp[:, 1:])
            b_left = np.asarray(problem.bc(yp[:, 0], y[:, -1]), dtype=float).ravel()
            b_right = np.asarray(problem.bc(y[:, 0], yp[:, -1]), dtype=float).ravel()
        left[:, :, k] = ((d_left - defects) / dk[:-1]).T
        right[:, :, k] = ((d_right - defects) / dk[1:]).T
        bc_left[:, k] = (b_left - bc) / dk[0]
        bc_right[:, k] = (b_right - bc) / dk[-1]

    blocks = (left, right, bc_left, bc_right)
    if not all(np.all(np.isfinite(b)) for b in blocks):
        raise NonFiniteResidualError(None, "non-finite Jacobian entry")
    return blocks


def finite_difference_jacobian(
    problem: OdeBvpProblem, grid: SolutionGrid, step: float, relative: bool = False
) -> sp.csc_matrix:
    """Forward-difference Jacobian of :func:`assemble_residual`.

    Unknown ``j`` (node-major flattening of ``grid.states``) is perturbed by
    ``step * (1 + |u_j|)``, or by ``step * max(|u_j|, 1e-6)`` when
    ``relative`` is set; the latter resolves states sitting close to a
    non-smooth point of the right-hand side at the price of more roundoff
    in columns whose state is near zero. Because each defect only couples
    neighbouring nodes, all nodes are perturbed at once per state component;
    the result equals the column-by-column definition. Returned as a sparse
    matrix.

    If a perturbation produces a non-finite value the step is shrunk once
    by a factor 10 before giving up with :class:`NonFiniteResidualError`.
    """
    if not step > 0.0:
        raise ValueError("step must be positive")
    try:
        blocks = _jacobian_blocks(problem, grid, step, relative)
    except NonFiniteResidualError:
        blocks = _jacobian_blocks(problem, grid, step / 10.0, relative)
    left, right, bc_left, bc_right = blocks

    n = grid.dimension
    N = len(grid.mesh)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    intervals = np.arange(N - 1)[:, None, None]
    rows = intervals * n + ii
    rows_all = np.concatenate([rows.ravel(), rows.ravel(), (n * (N - 1) + ii).ravel(),
                               (n * (N - 1) + ii).ravel()])
    cols_all = np.concatenate([
        (intervals * n + jj).ravel(),
        ((intervals + 1) * n + jj).ravel(),
        jj.ravel(),
        ((N - 1) * n + jj).ravel(),
    ])
    vals = np.concatenate([left.ravel(), right.ravel(), bc_left.ravel(), bc_right.ravel()])
    size = n * N
    return sp.coo_matrix((vals, (rows_all, cols_all)), shape=(size, size)).tocsc()


# ---------------------------------------------------------------------------
# Newton


def _try_residual(problem, grid):
    try:
        return assemble_residual(problem, grid)
    except NonFiniteResidualError:
        return None


def _line_search(problem, grid, delta, rnorm, config):
    """Halve the damping factor until the residual max-norm decreases."""
    flat = grid.states.ravel()
    lam = 1.0
    trials = []
    while lam >= config.damping_min:
        trial = grid.with_flat(flat + lam * delta)
        r_trial = _try_residual(problem, trial)
        tnorm = np.inf if r_trial is None else float(np.max(np.abs(r_trial)))
        trials.append(tnorm)
        if tnorm < rnorm or tnorm <= config.newton_tol:
            return lam, trial, r_trial, tnorm, trials
        lam *= 0.5
    return lam, None, None, None, trials


def newton_solve(
    problem: OdeBvpProblem, initial: SolutionGrid, config: SolverConfig
) -> tuple[SolutionGrid, SolveReport]:
    """Damped Newton iteration on the collocation residual.

    Each iteration tries the full step first and halves the damping factor
    while the residual max-norm does not decrease, down to
    ``config.damping_min``. Convergence requires both the applied step and
    the residual to be below ``config.newton_tol`` in max-norm. A start or
    Jacobian that cannot be evaluated finitely ends the iteration with
    reason ``non_finite_residual``.
    """
    grid = initial
    r = _try_residual(problem, grid)
    rnorm = np.inf if r is None else float(np.max(np.abs(r)))
    trials_log = []

    def report(converged, iterations, reason=None):
        return SolveReport(
            converged=converged,
            newton_iterations=iterations,
            final_mesh_points=len(grid.mesh),
            max_residual=rnorm,
            failure_reason=reason,
            damping_trials=trials_log,
        )

    if r is None:
        return grid, report(False, 0, "non_finite_residual")
    for it in range(1, config.max_newton_iters + 1):
        # When the full step is rejected, a second direction from relative FD
        # increments is tried as well and the better of the two is kept. The
        # relative increments resolve states next to a non-smooth point of
        # the right-hand side, where the absolute ones overshoot.
        best = None
        for relative in (False, True):
            try:
                jac = finite_difference_jacobian(problem, grid, config.fd_jacobian_step, relative)
            except NonFiniteResidualError:
                return grid, report(False, it, "non_finite_residual")
            try:
                with np.errstate(all="ignore"):
                    delta = splu(jac).solve(-r)
            except RuntimeError:
                return grid, report(False, it, "singular_jacobian")
            if not np.all(np.isfinite(delta)):
                return grid, report(False, it, "singular_jacobian")
            found = _line_search(problem, grid, delta, rnorm, config)
            trials_log.append(found[-1])
            if found[1] is not None and (best is None or found[3] < best[3]):
                best = found + (delta,)
            if best is not None and best[0] == 1.0:
                break
        if best is None:
            return grid, report(False, it, "damping_exhausted")
        lam, trial, r_trial, tnorm, _, delta = best

        grid, r, rnorm = trial, r_trial, tnorm
        step_norm = lam * float(np.max(np.abs(delta)))
        if step_norm < config.newton_tol and rnorm < config.newton_tol:
            return grid, report(True, it)

    return grid, report(False, config.max_newton_iters, "newton_stall")


# ---------------------------------------------------------------------------
# interpolation and refinement


def _hermite(grid: SolutionGrid, f: np.ndarray, idx: np.ndarray, s: np.ndarray):
    """Cubic Hermite value and derivative on intervals ``idx`` at fractions ``s``."""
    x = grid.mesh.nodes
    y = grid.states.T
    h = x[idx + 1] - x[idx]
    y0, y1 = y[:, idx], y[:, idx + 1]
    f0, f1 = f[:, idx], f[:, idx + 1]
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    value = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
    d00 = (6 * s2 - 6 * s) / h
    d10 = 3 * s2 - 4 * s + 1
    d01 = (-6 * s2 + 6 * s) / h
    d11 = 3 * s2 - 2 * s
    deriv = d00 * y0 + d10 * f0 + d01 * y1 + d11 * f1
    return value, deriv


def interpolate(problem: OdeBvpProblem, grid: SolutionGrid, theta) -> np.ndarray:
    """Evaluate the collocation interpolant at ``theta``; returns shape ``(m, n)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x = grid.mesh.nodes
    f = _eval_rhs(problem, x, grid.states.T)
    idx = np.clip(np.searchsorted(x, theta, side="right") - 1, 0, len(x) - 2)
    s = (theta - x[idx]) / (x[idx + 1] - x[idx])
    value, _ = _hermite(grid, f, idx, s)
    return value.T


def interval_defects(problem: OdeBvpProblem, grid: SolutionGrid) -> np.ndarray:
    """Scaled defect ``|p' - f| / (1 + |f|)`` of the interpolant, max per interval."""
    x = grid.mesh.nodes
    f = _eval_rhs(problem, x, grid.states.T)
    idx = np.arange(len(x) - 1)
    worst = np.zeros(idx.size)
    with np.errstate(all="ignore"):
        for frac in _DEFECT_POINTS:
            s = np.full(idx.size, frac)
            value, deriv = _hermite(grid, f, idx, s)
            theta = x[idx] + frac * (x[idx + 1] - x[idx])
            fv = _eval_rhs(problem, theta, value)
            d = np.max(np.abs(deriv - fv) / (1.0 + np.abs(fv)), axis=0)
            worst = np.maximum(worst, np.where(np.isfinite(d), d, np.inf))
    return worst


def refine_mesh(problem: OdeBvpProblem, grid: SolutionGrid, config: SolverConfig) -> Mesh:
    """Bisect every interval whose interpolant defect exceeds ``residual_tol``."""
    defects = interval_defects(problem, grid)
    bad = defects > config.residual_tol
    if not np.any(bad):
        return grid.mesh
    required = len(grid.mesh) + int(np.count_nonzero(bad))
    if required > config.max_mesh_points:
        raise MeshBudgetExhausted(required, config.max_mesh_points)
    x = grid.mesh.nodes
    mids = 0.5 * (x[:-1] + x[1:])
    stuck = bad & ((mids <= x[:-1]) | (mids >= x[1:]))
    if np.any(stuck):
        raise MeshResolutionExhausted(int(np.flatnonzero(stuck)[0]), config.max_mesh_points)
    mids = mids[bad]
    return Mesh(np.sort(np.concatenate([x, mids])))


def solve_bvp(
    problem: OdeBvpProblem, initial: SolutionGrid, config: SolverConfig
) -> tuple[SolutionGrid, SolveReport]:
    """Alternate Newton solves and mesh refinement until the defect test passes.

    When Newton fails on a mesh, the round is restarted from its starting
    iterate on the uniformly bisected mesh, which uses up one refinement
    round. Failures are reported rather than raised: ``failure_reason`` is
    one of
    ``newton_stall``, ``singular_jacobian``, ``damping_exhausted``,
    ``non_finite_residual``,
    ``mesh_budget_exhausted`` or ``refinement_budget_exhausted``, and
    ``refinements`` says in which round it happened.
    """
    grid = initial
    total_iters = 0
    trials = []
    for round_ in range(config.max_refinements + 1):
        start = grid
        grid, rep = newton_solve(problem, grid, config)
        total_iters += rep.newton_iterations
        trials.extend(rep.damping_trials)
        doubled = 2 * len(start.mesh) - 1
        if (not rep.converged and rep.failure_reason != "non_finite_residual"
                and round_ < config.max_refinements and doubled <= config.max_mesh_points):
            # Newton often fails because the mesh is too coarse for the
            # discrete problem to have a nearby solution: restart this round
            # from its starting iterate on a mesh with every interval halved.
            x = start.mesh.nodes
            nodes = np.empty(doubled)
            nodes[0::2] = x
            nodes[1::2] = 0.5 * (x[:-1] + x[1:])
            try:
                mesh = Mesh(nodes)
            except ValueError:
                pass
            else:
                grid = SolutionGrid(mesh, interpolate(problem, start, mesh.nodes))
                continue
        if not rep.converged:
            return grid, dataclasses.replace(
                rep, newton_iterations=total_iters, refinements=round_, damping_trials=trials
            )
        try:
            mesh = refine_mesh(problem, grid, config)
        except MeshBudgetExhausted:
            return grid, dataclasses.replace(
                rep,
                converged=False,
                failure_reason="mesh_budget_exhausted",
                newton_iterations=total_iters,
                refinements=round_,
                damping_trials=trials,
            )
        if mesh == grid.mesh:
            return grid, dataclasses.replace(
                rep, newton_iterations=total_iters, refinements=round_, damping_trials=trials
            )
        if round_ == config.max_refinements:
            return grid, dataclasses.replace(
                rep,
                converged=False,
                failure_reason="refinement_budget_exhausted",
                newton_iterations=total_iters,
                refinements=round_,
                damping_trials=trials,
            )
        grid = SolutionGrid(mesh, interpolate(problem, grid, mesh.nodes))
    raise AssertionError("unreachable")
