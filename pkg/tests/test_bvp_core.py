import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbf_blasius.bvp_core import (
    Mesh,
    MeshBudgetExhausted,
    MeshResolutionExhausted,
    NonFiniteResidualError,
    OdeBvpProblem,
    SolutionGrid,
    SolverConfig,
    assemble_residual,
    finite_difference_jacobian,
    interpolate,
    interval_defects,
    newton_solve,
    refine_mesh,
    solve_bvp,
    uniform_mesh,
)
from fbf_blasius.problems import (
    ExtendedBlasiusSpec,
    build_problem,
    initial_grid,
)

from conftest import assert_converged


def scalar_problem(rhs, bc):
    return OdeBvpProblem(1, rhs, lambda a, b: np.atleast_1d(bc(a, b)))


ZERO_FIELD = scalar_problem(lambda t, u: np.zeros_like(u), lambda a, b: a[0] - 1.0)
UNIT_SLOPE = scalar_problem(lambda t, u: np.ones_like(u), lambda a, b: a[0])
GROWTH = scalar_problem(lambda t, u: u, lambda a, b: a[0] - 1.0)
QUADRATIC = scalar_problem(lambda t, u: u**2, lambda a, b: a[0])

# u'' = 0 and u'' = -u as first-order systems
STRAIGHT_LINE = OdeBvpProblem(
    2,
    lambda t, u: np.stack([u[1], np.zeros_like(u[0])]),
    lambda a, b: np.array([a[0], b[0] - 1.0]),
)
OSCILLATOR = OdeBvpProblem(
    2,
    lambda t, u: np.stack([u[1], -u[0]]),
    lambda a, b: np.array([a[0], b[0] - np.sin(1.0)]),
)


def grid_of(mesh, values):
    return SolutionGrid(mesh, np.asarray(values, dtype=float))


# -- types -------------------------------------------------------------------


@pytest.mark.parametrize(
    "nodes",
    [[0.0], [0.0, 0.5], [0.1, 1.0], [0.0, 0.5, 0.5, 1.0], [0.0, 0.7, 0.3, 1.0]],
)
def test_mesh_rejects_illegal_nodes(nodes):
    with pytest.raises(ValueError):
        Mesh(np.array(nodes))


def test_grid_state_count_must_match_mesh():
    with pytest.raises(ValueError):
        SolutionGrid(uniform_mesh(5), np.zeros((4, 2)))


@pytest.mark.parametrize(
    "changes",
    [{"newton_tol": 0.0}, {"residual_tol": -1.0}, {"max_newton_iters": 0},
     {"damping_min": 0.0}, {"damping_min": 1.5}, {"max_mesh_points": 0}],
)
def test_solver_config_validation(changes):
    with pytest.raises(ValueError):
        SolverConfig(**changes)


def test_default_config_values():
    cfg = SolverConfig()
    assert (cfg.newton_tol, cfg.residual_tol, cfg.max_newton_iters) == (1e-10, 1e-8, 50)
    assert (cfg.max_mesh_points, cfg.max_refinements, cfg.damping_min) == (2000, 12, 2.0**-10)


# -- assemble_residual -----------------------------------------------------------


@pytest.mark.parametrize("points", [2, 5, 11])
def test_residual_zero_for_constant_solution(points):
    mesh = uniform_mesh(points)
    res = assemble_residual(ZERO_FIELD, grid_of(mesh, np.ones(points)))
    assert res.shape == (points,)
    assert np.all(res == 0.0)


def test_residual_zero_for_exact_linear_solution():
    mesh = Mesh(np.array([0.0, 0.1, 0.35, 0.8, 1.0]))
    res = assemble_residual(UNIT_SLOPE, grid_of(mesh, mesh.nodes))
    np.testing.assert_allclose(res, 0.0, atol=1e-15)


# Lobatto IIIa defects of the exact exponential, evaluated independently with
# mpmath at 40 digits on uniform meshes of 4 and 8 intervals.
EXP_DEFECTS_4 = [1.5386470224521271e-6, 1.9756618841394453e-6,
                 2.5368000740162396e-6, 3.2573157720921955e-6]
EXP_MAX_DEFECT_8 = 1.0826543309686418e-7


def test_residual_of_exponential_matches_hand_evaluation():
    mesh = uniform_mesh(5)
    res = assemble_residual(GROWTH, grid_of(mesh, np.exp(mesh.nodes)))
    np.testing.assert_allclose(res[:4], EXP_DEFECTS_4, rtol=1e-9)
    assert abs(res[4]) == 0.0
    h = 0.25
    assert np.max(np.abs(res)) <= h**4


def test_exponential_defect_is_fifth_order_locally():
    mesh = uniform_mesh(9)
    res = assemble_residual(GROWTH, grid_of(mesh, np.exp(mesh.nodes)))
    assert np.max(np.abs(res)) == pytest.approx(EXP_MAX_DEFECT_8, rel=1e-8)
    assert max(EXP_DEFECTS_4) / EXP_MAX_DEFECT_8 > 2**4


def test_non_finite_rhs_names_interval():
    def rhs(t, u):
        return np.where(t > 0.6, np.inf, 0.0) + 0.0 * u

    problem = scalar_problem(rhs, lambda a, b: a[0])
    with pytest.raises(NonFiniteResidualError) as err:
        assemble_residual(problem, grid_of(uniform_mesh(11), np.zeros(11)))
    assert err.value.interval == 5
    assert "interval 5" in str(err.value)


# -- finite_difference_jacobian ----------------------------------------------


def central_difference_jacobian(problem, grid, step):
    flat = grid.states.ravel()
    cols = []
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = step
        plus = assemble_residual(problem, grid.with_flat(flat + e))
        minus = assemble_residual(problem, grid.with_flat(flat - e))
        cols.append((plus - minus) / (2 * step))
    return np.column_stack(cols)


def forward_difference_by_columns(problem, grid, step):
    """Literal column-by-column definition, one residual per unknown."""
    flat = grid.states.ravel()
    base = assemble_residual(problem, grid)
    cols = []
    for j in range(flat.size):
        pert = flat.copy()
        pert[j] += 2.0 ** round(np.log2(step * (1.0 + abs(flat[j]))))
        cols.append((assemble_residual(problem, grid.with_flat(pert)) - base) / (pert[j] - flat[j]))
    return np.column_stack(cols)


def test_linear_problem_jacobian_is_state_independent():
    problem = scalar_problem(lambda t, u: 2.0 * u, lambda a, b: a[0] - 1.0)
    mesh = uniform_mesh(6)
    j1 = finite_difference_jacobian(problem, grid_of(mesh, np.zeros(6)), 1e-7).toarray()
    j2 = finite_difference_jacobian(problem, grid_of(mesh, np.linspace(-3, 5, 6)), 1e-7).toarray()
    np.testing.assert_allclose(j1, j2, atol=1e-6)


def test_quadratic_jacobian_at_zero_matches_zero_field():
    mesh = uniform_mesh(5)
    zero = grid_of(mesh, np.zeros(5))
    jq = finite_difference_jacobian(QUADRATIC, zero, 1e-7).toarray()
    jz = finite_difference_jacobian(
        scalar_problem(lambda t, u: np.zeros_like(u), lambda a, b: a[0]), zero, 1e-7
    ).toarray()
    np.testing.assert_allclose(jq, jz, atol=1e-7)


JACOBIAN_CASES = [
    (GROWTH, lambda x: np.exp(x)[:, None]),
    (QUADRATIC, lambda x: (0.3 + x)[:, None]),
    (OSCILLATOR, lambda x: np.column_stack([np.sin(x), np.cos(x)])),
    (build_problem(ExtendedBlasiusSpec(1, 1.5, 0.1)),
     lambda x: np.column_stack([x, 2 + x, 0.2 + x, 1 + 0 * x])),
    (build_problem(ExtendedBlasiusSpec(2, 0.5, 0.1)),
     lambda x: np.column_stack([x, 2 + x, 0.2 + x, 3 + 0 * x])),
]


@pytest.mark.parametrize("problem,states", JACOBIAN_CASES)
def test_jacobian_agrees_with_central_differences(problem, states):
    step = SolverConfig().fd_jacobian_step
    mesh = uniform_mesh(3)
    grid = SolutionGrid(mesh, states(mesh.nodes))
    fd = finite_difference_jacobian(problem, grid, step).toarray()
    oracle = central_difference_jacobian(problem, grid, step / 10)
    assert np.max(np.abs(fd - oracle)) <= 10 * step


@pytest.mark.parametrize("problem,states", JACOBIAN_CASES)
def test_grouped_jacobian_equals_column_definition(problem, states):
    mesh = Mesh(np.array([0.0, 0.2, 0.45, 0.7, 1.0]))
    grid = SolutionGrid(mesh, states(mesh.nodes))
    fd = finite_difference_jacobian(problem, grid, 1e-7).toarray()
    np.testing.assert_allclose(fd, forward_difference_by_columns(problem, grid, 1e-7),
                               rtol=1e-12, atol=1e-12)


def test_jacobian_shape_and_band():
    mesh = uniform_mesh(7)
    grid = SolutionGrid(mesh, np.column_stack([np.sin(mesh.nodes), np.cos(mesh.nodes)]))
    jac = finite_difference_jacobian(OSCILLATOR, grid, 1e-7).toarray()
    assert jac.shape == (14, 14)
    # defect rows of interval i only touch nodes i and i+1
    for i in range(6):
        rows = jac[2 * i: 2 * i + 2]
        outside = np.delete(rows, np.s_[2 * i: 2 * i + 4], axis=1)
        assert np.all(outside == 0.0)


def test_jacobian_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_difference_jacobian(GROWTH, grid_of(uniform_mesh(3), np.ones(3)), 0.0)


# -- newton_solve --------------------------------------------------------------


def test_newton_linear_problem_converges_in_two_iterations():
    mesh = uniform_mesh(11)
    grid, report = newton_solve(ZERO_FIELD, grid_of(mesh, np.zeros(11)), SolverConfig())
    assert_converged(ZERO_FIELD, grid, report)
    assert report.newton_iterations <= 2
    np.testing.assert_allclose(grid.states[:, 0], 1.0, atol=1e-12)


def test_newton_straight_line():
    mesh = uniform_mesh(6)
    grid, report = newton_solve(STRAIGHT_LINE, SolutionGrid(mesh, np.zeros((6, 2))),
                                SolverConfig())
    assert_converged(STRAIGHT_LINE, grid, report)
    np.testing.assert_allclose(grid.states[:, 0], mesh.nodes, atol=1e-12)
    np.testing.assert_allclose(grid.states[:, 1], 1.0, atol=1e-12)


def test_newton_fbf_table_first_row():
    spec = ExtendedBlasiusSpec(1, 1.5, 0.1)
    problem = build_problem(spec)
    grid, report = newton_solve(problem, initial_grid(), SolverConfig())
    assert_converged(problem, grid, report)
    # on the coarse starting mesh only; Table 1 lists 2.708708
    assert grid.states[0, 3] == pytest.approx(2.708708, abs=1e-2)


def test_newton_reports_stall():
    problem = build_problem(ExtendedBlasiusSpec(1, 1.5, 0.1))
    _, report = newton_solve(problem, initial_grid(), SolverConfig(max_newton_iters=2))
    assert not report.converged
    assert report.failure_reason == "newton_stall"
    assert report.newton_iterations == 2


def test_newton_reports_singular_jacobian():
    # the boundary condition ignores the state entirely
    problem = scalar_problem(lambda t, u: np.zeros_like(u), lambda a, b: np.array([1.0]))
    _, report = newton_solve(problem, grid_of(uniform_mesh(4), np.zeros(4)), SolverConfig())
    assert not report.converged
    assert report.failure_reason == "singular_jacobian"


def test_damped_step_never_worse_than_rejected_trials():
    problem = build_problem(ExtendedBlasiusSpec(2, 0.5, 1e-4))
    _, report = newton_solve(problem, initial_grid(), SolverConfig())
    assert any(len(t) > 1 for t in report.damping_trials), "expected some damping"
    for trials in report.damping_trials:
        accepted, rejected = trials[-1], trials[:-1]
        assert all(accepted <= r for r in rejected)


# -- refine_mesh ---------------------------------------------------------------


def test_refine_returns_same_mesh_when_all_pass():
    mesh = Mesh(np.array([0.0, 0.3, 1.0]))
    grid = grid_of(mesh, mesh.nodes)
    assert refine_mesh(UNIT_SLOPE, grid, SolverConfig()) == mesh


def test_refine_bisects_single_failing_interval():
    def rhs(t, u):
        return np.where((t > 0.4) & (t < 0.5), 1.0, 0.0) + 0.0 * u

    problem = scalar_problem(rhs, lambda a, b: a[0])
    mesh = Mesh(np.linspace(0.0, 1.0, 11))
    new = refine_mesh(problem, grid_of(mesh, np.zeros(11)), SolverConfig())
    assert len(new) == 12
    inserted = np.setdiff1d(new.nodes, mesh.nodes)
    assert inserted == pytest.approx([0.45])


def test_refine_budget_exhausted():
    mesh = uniform_mesh(11)
    grid = grid_of(mesh, np.sin(7 * mesh.nodes))
    with pytest.raises(MeshBudgetExhausted):
        refine_mesh(GROWTH, grid, SolverConfig(max_mesh_points=12))


@settings(max_examples=40, deadline=None)
@given(
    inner=st.lists(st.floats(0.001, 0.999), min_size=0, max_size=20, unique=True),
    scale=st.floats(0.1, 5.0),
)
def test_refined_mesh_is_legal(inner, scale):
    nodes = np.unique(np.concatenate([[0.0, 1.0], inner]))
    mesh = Mesh(nodes)
    grid = grid_of(mesh, scale * np.cos(3 * nodes))
    config = SolverConfig(max_mesh_points=100)
    try:
        new = refine_mesh(GROWTH, grid, config)
    except MeshResolutionExhausted as exc:
        # only legitimate when the named interval cannot be split
        k = exc.interval
        assert 0.5 * (nodes[k] + nodes[k + 1]) in (nodes[k], nodes[k + 1])
        return
    assert new.nodes[0] == 0.0 and new.nodes[-1] == 1.0
    assert np.all(np.diff(new.nodes) > 0)
    assert len(new) <= config.max_mesh_points
    assert np.all(np.isin(mesh.nodes, new.nodes))


# Node count of the first passing run, frozen as an upper bound.
FBF_1E6_MESH_POINTS = 400


def test_refinement_fbf_regression():
    config = SolverConfig()
    problem = build_problem(ExtendedBlasiusSpec(1, 1.5, 1e-6))
    grid, report = solve_bvp(problem, initial_grid(11), config)
    assert_converged(problem, grid, report)
    assert np.max(interval_defects(problem, grid)) <= config.residual_tol
    assert report.final_mesh_points <= FBF_1E6_MESH_POINTS


def test_every_refinement_round_yields_legal_mesh():
    config = SolverConfig()
    problem = build_problem(ExtendedBlasiusSpec(2, 1.0, 1e-4))
    grid = initial_grid()
    for _ in range(config.max_refinements):
        grid, report = newton_solve(problem, grid, config)
        assert_converged(problem, grid, report, config)
        mesh = refine_mesh(problem, grid, config)
        Mesh(mesh.nodes)  # re-validate
        assert len(mesh) <= config.max_mesh_points
        if mesh == grid.mesh:
            break
        grid = SolutionGrid(mesh, interpolate(problem, grid, mesh.nodes))
    else:
        pytest.fail("refinement did not settle")


# -- interpolation, solve_bvp, order ---------------------------------------------


def test_interpolant_reproduces_nodes_and_cubics():
    problem = scalar_problem(lambda t, u: 3 * t**2 + 0 * u, lambda a, b: a[0])
    mesh = Mesh(np.array([0.0, 0.3, 0.55, 1.0]))
    grid = grid_of(mesh, mesh.nodes**3)
    np.testing.assert_array_equal(interpolate(problem, grid, mesh.nodes)[:, 0], mesh.nodes**3)
    t = np.linspace(0, 1, 37)
    np.testing.assert_allclose(interpolate(problem, grid, t)[:, 0], t**3, atol=1e-15)


def test_solve_bvp_exact_input_is_returned():
    mesh = uniform_mesh(5)
    start = grid_of(mesh, mesh.nodes)
    grid, report = solve_bvp(UNIT_SLOPE, start, SolverConfig())
    assert_converged(UNIT_SLOPE, grid, report)
    assert report.refinements == 0
    np.testing.assert_array_equal(grid.states, start.states)


def test_solve_bvp_reports_mesh_budget():
    problem = build_problem(ExtendedBlasiusSpec(2, 0.5, 1e-6))
    _, report = solve_bvp(problem, initial_grid(), SolverConfig(max_mesh_points=50))
    assert not report.converged
    assert report.failure_reason == "mesh_budget_exhausted"


def oscillator_error(intervals):
    mesh = uniform_mesh(intervals + 1)
    grid, report = newton_solve(OSCILLATOR, SolutionGrid(mesh, np.zeros((intervals + 1, 2))),
                                SolverConfig())
    assert_converged(OSCILLATOR, grid, report)
    return np.max(np.abs(grid.states[:, 0] - np.sin(mesh.nodes)))


def test_fourth_order_convergence():
    ratio = oscillator_error(8) / oscillator_error(16)
    assert ratio >= 12.0


# -- failure handling --------------------------------------------------------


def test_non_finite_start_is_reported_not_raised():
    problem = scalar_problem(lambda t, u: 1.0 / (u - 0.5), lambda a, b: a[0])
    grid = grid_of(uniform_mesh(5), np.full(5, 0.5))
    out, report = newton_solve(problem, grid, SolverConfig())
    assert not report.converged
    assert report.failure_reason == "non_finite_residual"
    assert report.newton_iterations == 0
    assert out is grid


def test_non_finite_state_never_reaches_rhs():
    seen = []

    def rhs(t, u):
        seen.append(np.all(np.isfinite(u)))
        return u

    problem = scalar_problem(rhs, lambda a, b: a[0])
    with pytest.raises(NonFiniteResidualError) as err:
        assemble_residual(problem, grid_of(uniform_mesh(4), [0.0, 1.0, np.inf, 1.0]))
    assert all(seen)
    assert err.value.interval == 1


def test_relative_increments_agree_on_smooth_states():
    problem, states = JACOBIAN_CASES[3]
    grid = SolutionGrid(uniform_mesh(4), states(uniform_mesh(4).nodes) + 0.5)
    plain = finite_difference_jacobian(problem, grid, 1e-7).toarray()
    relative = finite_difference_jacobian(problem, grid, 1e-7, relative=True).toarray()
    np.testing.assert_allclose(plain, relative, atol=1e-5)


def test_unsplittable_interval_is_a_budget_error():
    tiny = np.nextafter(0.5, 1.0)
    mesh = Mesh(np.array([0.0, 0.5, tiny, 1.0]))
    grid = grid_of(mesh, np.array([0.0, 1.0, -1.0, 0.0]))
    with pytest.raises(MeshResolutionExhausted) as err:
        refine_mesh(GROWTH, grid, SolverConfig())
    assert err.value.interval == 1
    assert isinstance(err.value, MeshBudgetExhausted)


def test_failed_newton_restarts_on_halved_mesh():
    # from 11 coarse nodes the free boundary has to travel from 1 to ~175
    problem = build_problem(ExtendedBlasiusSpec(2, 0.5, 1e-8))
    grid, report = solve_bvp(problem, initial_grid(), SolverConfig())
    assert_converged(problem, grid, report)
    assert np.mean(grid.states[:, 3]) == pytest.approx(175.1, abs=0.1)
