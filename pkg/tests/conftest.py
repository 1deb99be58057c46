import collections

import numpy as np
import pytest

from fbf_blasius.bvp_core import SolverConfig, assemble_residual
from fbf_blasius.problems import ExtendedBlasiusSpec, build_problem, solve_fbf


def assert_converged(problem, grid, report, config=None):
    """A converged report must survive re-evaluation of the residual."""
    config = config or SolverConfig()
    assert report.converged, report
    res = np.max(np.abs(assemble_residual(problem, grid)))
    assert res <= config.residual_tol
    assert np.all(np.isfinite(grid.states))
    assert report.max_residual <= config.residual_tol


def assert_fbf_converged(result, config=None):
    assert_converged(build_problem(result.spec), result.grid, result.report, config)


_cache = {}


@pytest.fixture(scope="session")
def fbf():
    """Memoised ``solve_fbf(family, P, eps)`` with default settings.

    Every result is checked with :func:`assert_fbf_converged` before use.
    """

    def solve(family, P, eps):
        key = (family, P, eps)
        if key not in _cache:
            result = solve_fbf(ExtendedBlasiusSpec(family, P, eps))
            assert_fbf_converged(result)
            _cache[key] = result
        return _cache[key]

    return solve


# -- acceptance reporting ---------------------------------------------------

_criteria = collections.OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion id")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    title = dict(report.user_properties).get("criterion")
    if title is None:
        return
    _criteria.setdefault(title, []).append(report.passed)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n, title = mark.args
            item.user_properties.append(("criterion", f"{n}. {title}"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for title in sorted(_criteria, key=lambda t: int(t.split(".")[0])):
        results = _criteria[title]
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(
            f"{status}  {title}  ({sum(results)}/{len(results)} checks)"
        )
