"""Neutral multi-delay fractional differential equations with respect to an
increasing clock function: series solver, Picard iteration, independent
product-integration reference solver, and contraction/stability certificates.
"""

from . import expr, mu_calculus, lattice, mlf, solver, oracle, certify, config
from .mu_calculus import MuMap, mu_preset, rl_integral, caputo_deriv, gamma, plus_pow
from .lattice import CoefficientTable, build, majorant_table
from .mlf import kernel, kernel_many, majorant_bound, KernelValue
from .solver import (DelaySystem, Trajectory, VectorFn, ForcingFn, make_grid,
                     build_table, homogeneous_term, forcing_term, history_term,
                     solve_linear, solve_semilinear, estimate_lipschitz)
from .oracle import OracleConfig, solve_reference, residual, oracle_grid
from .certify import Certificate, contraction_certificate, uh_experiment
from .config import load_config, ProblemConfig, SolveOptions

__version__ = "0.1.0"
