"""Irreversible diffusion on box grids, solved and certified step by step.

The package simulates the constrained evolution du/dt = (laplacian(u) + f)+,
in which the solution may only grow in time.  Each implicit time step is a
lower-obstacle quadratic program; every solve and every step is re-checked
against the optimality conditions and the a-priori estimates the scheme is
supposed to satisfy, and the results are collected into machine-readable
reports.
"""

from .mesh import (
    Grid,
    GridError,
    CoercivityError,
    build_grid,
    assemble_laplacian,
    assemble_a_sigma,
    shift_operator,
    inner,
    norm_h,
    dirichlet_energy,
    neg_laplacian,
)
from .obstacle import (
    ObstacleProblem,
    ObstacleSolution,
    KKTResiduals,
    PreconditionError,
    ConvergenceError,
    solve_psor,
    solve_pdas,
    enumerate_oracle,
    kkt_residuals,
    verify_conditions,
    check_comparison,
    check_minorant,
)
from .stepper import (
    TimePartition,
    SolverOptions,
    StepCertificate,
    Trajectory,
    StepError,
    average_forcing,
    step,
    run,
    iterate_steps,
    transform_negative_variant,
    interpolate,
)
from .analysis import (
    EnergyRecord,
    SteadyState,
    complementarity_report,
    energy_report,
    dissipation_report,
    laplacian_bound_report,
    continuous_dependence_report,
    comparison_report,
    solve_steady_state,
    asymptotic_report,
)
from .reporting import CheckResult, Report

__all__ = [
    "Grid",
    "GridError",
    "CoercivityError",
    "build_grid",
    "assemble_laplacian",
    "assemble_a_sigma",
    "shift_operator",
    "inner",
    "norm_h",
    "dirichlet_energy",
    "neg_laplacian",
    "ObstacleProblem",
    "ObstacleSolution",
    "KKTResiduals",
    "PreconditionError",
    "ConvergenceError",
    "solve_psor",
    "solve_pdas",
    "enumerate_oracle",
    "kkt_residuals",
    "verify_conditions",
    "check_comparison",
    "check_minorant",
    "TimePartition",
    "SolverOptions",
    "StepCertificate",
    "Trajectory",
    "StepError",
    "average_forcing",
    "step",
    "run",
    "iterate_steps",
    "transform_negative_variant",
    "interpolate",
    "EnergyRecord",
    "SteadyState",
    "complementarity_report",
    "energy_report",
    "dissipation_report",
    "laplacian_bound_report",
    "continuous_dependence_report",
    "comparison_report",
    "solve_steady_state",
    "asymptotic_report",
    "CheckResult",
    "Report",
]
