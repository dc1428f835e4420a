"""Impulse control of jump diffusions: penalized QVI solver and verification suite."""

from .grids import Grid, ScalarField
from .levy import LevyMeasure, check_integrability, integrate, small_jump_split
from .model import CostB, DiscountMarginError, ModelSpec, lipschitz_bound, validate_assumptions
from .operators import (
    OperatorStencil,
    SearchBox,
    apply_elliptic,
    apply_generator,
    apply_intervention,
    apply_jump,
    build_stencil,
)
from .simulate import (
    ImpulsePolicy,
    PathRecord,
    estimate_cost,
    paired_lipschitz_probe,
    simulate_controlled,
    simulate_uncontrolled,
)
from .solver import (
    PenaltyFamily,
    SolveResult,
    SolverParams,
    extract_policy,
    make_penalty,
    solve_obstacle_penalized,
    solve_qvi,
)

__version__ = "0.1.0"

__all__ = [
    "Grid", "ScalarField",
    "LevyMeasure", "integrate", "check_integrability", "small_jump_split",
    "ModelSpec", "CostB", "DiscountMarginError", "validate_assumptions", "lipschitz_bound",
    "OperatorStencil", "SearchBox", "build_stencil",
    "apply_elliptic", "apply_jump", "apply_generator", "apply_intervention",
    "PenaltyFamily", "make_penalty", "solve_obstacle_penalized", "solve_qvi",
    "SolverParams", "SolveResult", "extract_policy",
    "ImpulsePolicy", "PathRecord", "simulate_uncontrolled", "simulate_controlled",
    "estimate_cost", "paired_lipschitz_probe",
    "__version__",
]
