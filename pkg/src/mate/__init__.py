"""Monge-Ampere type boundary value problems: structure-condition certifiers,
a continuation/Newton solver on polar and Cartesian grids, and verification tools."""
from .conditions import (
    CertReport,
    SampleBox,
    bakelman_lower_bound,
    check_A_convexity,
    check_mass_balance,
    check_monotonicity,
    check_oblique_concavity,
    check_QS,
    check_regularity,
    check_solution_bounds,
)
from .discretize import Grid, build_grid
from .geometry import Domain
from .model import (
    ProblemSpec,
    eval_jet,
    make_conformal_A,
    make_constant_A,
    make_neumann_G,
    make_oblique_G,
    make_ot_A,
    make_zero_A,
    parse_expression,
)
from .solver import DiscreteSystem, SolveOptions, SolveReport, continuation_solve, newton_solve, solve
from .verify import CASES, check_comparison, check_super_sub, get_case, jacobian_check, mms_study

__version__ = "0.1.0"
