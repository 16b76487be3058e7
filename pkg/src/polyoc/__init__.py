"""Moment relaxations for polynomial optimal control.

The package builds semidefinite moment relaxations of nonlinear optimal
control problems with polynomial data, solves them with an embedded
interior-point method, recovers a polynomial under-approximation of the
value function from the dual solution, synthesizes a feedback controller
from it, and simulates the closed loop.
"""

from .poly import (
    COEFF_TOL,
    Polynomial,
    PolyError,
    PolyParseError,
    VarSet,
    lie_derivative,
    parse_poly,
)
from .moments import (
    DiracFactor,
    MomentBasis,
    UniformFactor,
    basis_size,
    enumerate_exponents,
    known_moments,
)
from .ocp import (
    BoundarySpec,
    MomentConstraint,
    OcpProblem,
    ProblemError,
    SupportConstraint,
    apply_scaling,
    build_problem,
    time_dependence,
)
from .relaxation import (
    DegreePlan,
    MomentProblem,
    assemble_conic,
    build_moment_problem,
    resolve_degrees,
)
from .solver import (
    ConicProgram,
    ConicSolution,
    SolverOptions,
    Status,
    dump_program,
    extract_moment_matrices,
    solve_conic,
)
from .hjb import (
    SubsolutionError,
    ValueFunction,
    detect_bounds,
    extract_subsolution,
    synthesize_controller,
    verify_subsolution,
)
from .sim import Trajectory, empirical_moments, export_csv, simulate

__version__ = "0.1.0"

__all__ = [
    "COEFF_TOL",
    "Polynomial",
    "PolyError",
    "PolyParseError",
    "VarSet",
    "lie_derivative",
    "parse_poly",
    "DiracFactor",
    "MomentBasis",
    "UniformFactor",
    "basis_size",
    "enumerate_exponents",
    "known_moments",
    "BoundarySpec",
    "MomentConstraint",
    "OcpProblem",
    "ProblemError",
    "SupportConstraint",
    "apply_scaling",
    "build_problem",
    "time_dependence",
    "DegreePlan",
    "MomentProblem",
    "assemble_conic",
    "build_moment_problem",
    "resolve_degrees",
    "ConicProgram",
    "ConicSolution",
    "SolverOptions",
    "Status",
    "dump_program",
    "extract_moment_matrices",
    "solve_conic",
    "SubsolutionError",
    "ValueFunction",
    "detect_bounds",
    "extract_subsolution",
    "synthesize_controller",
    "verify_subsolution",
    "Trajectory",
    "empirical_moments",
    "export_csv",
    "simulate",
    "__version__",
]
