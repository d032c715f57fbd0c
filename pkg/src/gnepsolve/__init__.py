"""Solver library and benchmark CLI for generalized Nash equilibrium problems."""

from .core import (
    AdmissibilityError,
    BlockLayout,
    GameInstance,
    IterateState,
    OracleFailure,
    PlayerDualState,
    PlayerProblem,
    SimpleSet,
    ValidationReport,
    initial_state,
    project,
    validate_instance,
)
from .lagrangian import (
    PenaltyParams,
    QuadraticAnchor,
    build_anchor,
    evaluate_point,
    lagrangian_grad_x,
    lagrangian_value,
    lagrangian_value_reduced,
)
from .solver import (
    GammaPolicy,
    InnerLoopError,
    LipschitzEstimates,
    LipschitzEstimator,
    SigmaSchedule,
    SolveResult,
    SolveTrace,
    SolverConfig,
    choose_gamma,
    choose_sigma,
    estimate_lipschitz,
    inner_residual,
    inner_step,
    solve,
    solve_inner,
    step_duals,
    step_z,
    stopping_residual,
    verify_run_bounds,
)
from .diagnostics import (
    DiagnosticsReport,
    best_response_gap,
    diagnose,
    kkt_residual,
    projected_gradient_norm,
    saddle_check,
)
from . import library

__version__ = "0.1.0"
