"""Lattice solver and verification toolkit for mean-field reflected BSDEs."""
from .bsde_core import DriverSpec, TerminalCondition, snell_bruteforce, solve_bsde
from .dsl import compile_expr, parse, to_source
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    GateError,
    MfrbsdeError,
    NumericError,
    ParameterError,
    StepSizeError,
)
from .lattice import build_lattice
from .marginal_law import MarginalLaw, wasserstein1
from .meanfield import Problem, fixed_point_residual, gamma_map, picard_solve, theta_sequence_solve
from .rbsde import ObstacleSpec, SolutionTriple, skorokhod_residual, solve_reflected

__version__ = "0.1.0"
