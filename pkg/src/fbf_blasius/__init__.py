"""Free-boundary formulation of two extended Blasius problems.

A self-contained Lobatto IIIa collocation solver (:mod:`.bvp_core`) solves
the normalised free-boundary problems (:mod:`.problems`); :mod:`.sweep`
drives epsilon continuation and :mod:`.oracle` is an independent
truncated-boundary shooting check.
"""

from .bvp_core import (
    Mesh,
    OdeBvpProblem,
    SolutionGrid,
    SolveReport,
    SolverConfig,
    solve_bvp,
)
from .problems import ExtendedBlasiusSpec, Family, FbfResult, solve_fbf
from .oracle import ShootingConfig, solve_truncated
from .sweep import SweepPlan, SweepRow, WarmStartPolicy, convergence_summary, run_sweep

__version__ = "0.1.0"
