"""Penalization and monotone schemes for obstacle problems of Bellman/Isaacs equations."""

from .expression import Expression, ExpressionError, as_expression, parse_expression
from .grid import (
    BoundaryPolicy,
    Grid,
    GridFunction,
    eval_on_grid,
    hoelder_estimate,
    lipschitz_estimate,
    lookup,
    mollify,
    sup_diff,
    sup_norm,
)
from .model import (
    CoefficientSet,
    ControlCoefficients,
    ControlGrid,
    LipschitzConstants,
    Obstacle,
    ProblemSpec,
    Regularity,
    SamplingPlan,
    Sense,
    ValidationReport,
    derive_lambda0,
    validate_assumptions,
)
from .solver import (
    SolveReport,
    SolverConfig,
    check_discrete_comparison,
    epsilon_continuation,
    fixed_point_solve,
    solve_obstacle,
    solve_penalized,
)

__version__ = "0.1.0"

__all__ = [
    "Expression",
    "ExpressionError",
    "as_expression",
    "parse_expression",
    "BoundaryPolicy",
    "Grid",
    "GridFunction",
    "eval_on_grid",
    "hoelder_estimate",
    "lipschitz_estimate",
    "lookup",
    "mollify",
    "sup_diff",
    "sup_norm",
    "CoefficientSet",
    "ControlCoefficients",
    "ControlGrid",
    "LipschitzConstants",
    "Obstacle",
    "ProblemSpec",
    "Regularity",
    "SamplingPlan",
    "Sense",
    "ValidationReport",
    "derive_lambda0",
    "validate_assumptions",
    "SolveReport",
    "SolverConfig",
    "check_discrete_comparison",
    "epsilon_continuation",
    "fixed_point_solve",
    "solve_obstacle",
    "solve_penalized",
    "__version__",
]
