"""Entropy-aware implicit time integration for nonlinear dispersive waves.

The package builds entropy-conservative semidiscretizations of Burgers, KdV,
and BBM, integrates them with implicit one-step methods, exposes the
Newton-family solvers whose iteration error perturbs the conserved
functionals, and provides relaxation to repair that drift after each step.
"""

from .integrators import (LOBATTO_IIIC, MIDPOINT, AvfSystem, RKScheme, RungeKuttaSystem,
                          SolveReport, avf_stage_system, lobatto_iiic_stage_system,
                          midpoint_stage_system, step)
from .linalg import (DenseFactorization, KrylovReport, SingularMatrixError, gmres, lu_factor,
                     lu_solve, lu_solve_factored)
from .nonlinear import (IterationTrace, NonConvergenceError, SolverConfig, alpha_entropy_root,
                        eisenstat_walker_forcing, entropy_drift_quadratic_form, inexact_newton_entropy,
                        iterate_exactly, newton_gmres_solve, newton_solve, newton_type_solve,
                        weighted_norm)
from .operators import (GridOperator, MassMatrix, grid_nodes, make_central_fd, make_fourier,
                        uniform_mass)
from .relaxation import (RelaxationError, RelaxationPolicy, apply_relaxation, compute_gamma,
                         eta_estimate_rk, gamma_cubic, gamma_general, gamma_quadratic,
                         target_functional)
from .semidisc import (Functional, Grid, SemiDiscretization, make_bbm_central, make_bbm_split,
                       make_burgers, make_custom_ode, make_kdv)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
