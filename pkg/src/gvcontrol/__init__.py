"""Solvers and optimal-control tools for two-variable Volterra
(Goursat-Volterra) integral equations on rectangles.

Modules:

* grid: uniform product grids, trapezoid weights, grid fields
* problem: problem container (dynamics, cost, controls) and validation
* forward: nonlinear forward solver, contraction estimates
* gvlinalg: kernel-triple algebra, resolvents, linear/adjoint solves
* costate: linearization, co-state system, Hamiltonian assembly
* gradient: cost, exact discrete gradient, finite-difference checks
* optimize: projected gradient descent, extremum-principle checks
* gronwall: two-variable Gronwall coefficients, bounds, comparisons
* demos: ready-made example problems
* cli: command-line entry points
"""

from .costate import CoState, solve_costate
from .errors import (
    ConvergenceError,
    GVError,
    LineSearchStallError,
    NumericalError,
    OptimizeError,
    TruncationError,
)
from .forward import ForwardOptions, choose_mu, solve_forward
from .gradient import cost, gradient
from .grid import Grid, ScalarField2, make_grid
from .optimize import (
    OptimizeOptions,
    OptimizeResult,
    check_extremum_principle,
    optimize,
)
from .problem import Box, ControlBoxes, ControlField, ProblemDef, \
    validate_problem

__all__ = [
    "GVError",
    "ConvergenceError",
    "NumericalError",
    "LineSearchStallError",
    "TruncationError",
    "OptimizeError",
    "Grid",
    "ScalarField2",
    "make_grid",
    "Box",
    "ControlBoxes",
    "ControlField",
    "ProblemDef",
    "validate_problem",
    "ForwardOptions",
    "solve_forward",
    "choose_mu",
    "CoState",
    "solve_costate",
    "cost",
    "gradient",
    "OptimizeOptions",
    "OptimizeResult",
    "optimize",
    "check_extremum_principle",
]

__version__ = "0.1.0"
