"""Newton-family solvers for implicit stage systems.

Variants:

* plain Newton with a direct (LU) linear solve,
* Newton-GMRES with a fixed or Eisenstat-Walker forcing sequence for the
  inner relative tolerance (safeguards follow Kelley, "Iterative Methods for
  Linear and Nonlinear Equations", ch. 6.3),
* method of Newton-type for the Burgers midpoint system: the Jacobian drops
  the terms responsible for the iteration's entropy drift, which makes every
  iterate's induced update conserve the quadratic entropy at the price of
  linear convergence,
* inexact Newton with an entropy line search: each full Newton step is scaled
  by the root alpha of the quadratic entropy condition, so the update stays
  on the entropy shell while converging linearly.

All residual norms are reported in the dx-weighted L2 norm, which keeps
tolerances grid-independent. The stopping rule is
||F(U_k)|| <= abs_tol + rel_tol * ||F(U_0)||.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg


class NonConvergenceError(Exception):
    """Solver exhausted its iteration budget; carries the trace and last iterate."""

    def __init__(self, message, trace=None, last_iterate=None):
        super().__init__(message)
        self.trace = trace
        self.last_iterate = last_iterate


@dataclass
class SolverConfig:
    abs_tol: float = 0.0
    rel_tol: float = 1e-8
    max_iters: int = 25
    linear_solver: str = "direct"      # direct | gmres
    method: str = "newton"             # newton | newton_type | inexact_entropy
    forcing: str = "eisenstat_walker"  # eisenstat_walker | fixed
    eta_fixed: float = 1e-12
    ew_gamma: float = 0.9
    ew_eta_max: float = 0.9
    gmres_max_dim: int | None = None

    def __post_init__(self):
        if self.abs_tol < 0.0 or self.rel_tol < 0.0:
            raise ValueError("tolerances must be nonnegative")
        if self.abs_tol == 0.0 and self.rel_tol == 0.0:
            raise ValueError("abs_tol and rel_tol must not both be zero")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.linear_solver not in ("direct", "gmres"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if self.method not in ("newton", "newton_type", "inexact_entropy"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.forcing not in ("eisenstat_walker", "fixed"):
            raise ValueError(f"unknown forcing strategy {self.forcing!r}")
        if not 0.0 < self.ew_eta_max < 1.0:
            raise ValueError("ew_eta_max must lie in (0, 1)")
        if not 0.0 < self.ew_gamma <= 1.0:
            raise ValueError("ew_gamma must lie in (0, 1]")


@dataclass
class IterationTrace:
    """Per-iteration record: residuals, induced-update entropies, steps, forcing."""

    residual_norms: list = field(default_factory=list)
    update_entropies: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    forcing_terms: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    threshold: float = 0.0
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.residual_norms) - 1, 0)


def weighted_norm(v, dx: float) -> float:
    return float(np.sqrt(dx) * np.linalg.norm(v))


def alpha_entropy_root(dU, U_tilde, U_k, u_n):
    """Nontrivial root of the quadratic entropy condition for the scaled step.

    Solving <U+, U+> - <U+, u_n> = 0 for U+ = alpha * U_tilde + (1-alpha) * U_k
    gives the roots alpha = 0 (useless: the iterate would not move) and

        alpha = -( <dU, U_k> + <U_tilde, U_k - u_n> ) / ||dU||^2,

    valid when U_k itself satisfies the condition. The value is invariant
    under uniform scaling of the inner product, so plain Euclidean products
    are used.
    """
    dU = np.asarray(dU, dtype=float)
    denom = float(dU @ dU)
    if denom < 1e-28:
        raise ValueError("degenerate step: ||dU||^2 below 1e-28")
    if __debug__:
        defect = abs(float(U_k @ U_k) - float(U_k @ u_n))
        if defect > 1e-6 * (1.0 + float(U_k @ U_k)):
            raise AssertionError(
                f"alpha_entropy_root called with an iterate off the entropy shell ({defect:.3e})")
    return -(float(dU @ U_k) + float(U_tilde @ (U_k - u_n))) / denom


def eisenstat_walker_forcing(trace: IterationTrace, cfg: SolverConfig) -> float:
    """Forcing term for the next inner solve.

    First call returns eta_max. Afterwards the candidate gamma*(r_k/r_{k-1})^2
    is safeguarded from below by gamma*eta_prev^2 whenever that exceeds 0.1,
    capped at eta_max, and floored so the inner solve does not undershoot half
    the outer stopping threshold.
    """
    if not trace.forcing_terms:
        return cfg.ew_eta_max
    r_k = trace.residual_norms[-1]
    r_prev = trace.residual_norms[-2]
    if r_prev <= 0.0:
        return cfg.ew_eta_max
    eta = cfg.ew_gamma * (r_k / r_prev) ** 2
    safeguard = cfg.ew_gamma * trace.forcing_terms[-1] ** 2
    if safeguard > 0.1:
        eta = max(eta, safeguard)
    eta = min(cfg.ew_eta_max, eta)
    if r_k > 0.0 and trace.threshold > 0.0:
        eta = min(cfg.ew_eta_max, max(eta, 0.5 * trace.threshold / r_k))
    return eta


def _require_burgers_midpoint(sys, what):
    scheme = getattr(sys, "scheme", None)
    if (sys.sd.equation_tag != "burgers" or scheme is None or scheme.name != "midpoint"
            or sys.sd.d1 is None):
        raise ValueError(f"{what} is specific to the Burgers midpoint stage system")


def _modified_jacobian(sys, U):
    # I + dt (diag(U) D + D diag(U)): the exact Jacobian minus the entropy-error terms
    d = sys.sd.d1.action
    return np.eye(sys.n) + sys.dt * (U[:, None] * d + d * U[None, :])


def _update_entropy(sys, U):
    u = sys.update(U)
    return 0.5 * sys.sd.grid.dx * float(u @ u)


def _engine(sys, cfg, U0, *, method, max_steps, use_stopping):
    if method in ("newton_type", "inexact_entropy"):
        _require_burgers_midpoint(sys, f"method {method!r}")
        if cfg is not None and cfg.linear_solver == "gmres":
            raise ValueError(f"method {method!r} only supports the direct linear solver")
    use_gmres = cfg is not None and cfg.linear_solver == "gmres"
    dx = sys.sd.grid.dx

    U = np.asarray(U0, dtype=float).copy() if U0 is not None else sys.initial_guess()
    if U.shape != (sys.unknown_size,):
        raise ValueError(f"initial guess of shape {U.shape}, expected ({sys.unknown_size},)")

    trace = IterationTrace()
    r = sys.residual(U)
    rnorm = weighted_norm(r, dx)
    trace.residual_norms.append(rnorm)
    trace.update_entropies.append(_update_entropy(sys, U))
    trace.iterates.append(U.copy())
    if use_stopping:
        trace.threshold = cfg.abs_tol + cfg.rel_tol * rnorm
    trace.converged = use_stopping and rnorm <= trace.threshold

    block_action = getattr(sys, "jacobian_action", None) if use_gmres else None
    steps = 0
    while not trace.converged and steps < max_steps:
        if use_gmres:
            eta = (eisenstat_walker_forcing(trace, cfg) if cfg.forcing == "eisenstat_walker"
                   else cfg.eta_fixed)
            trace.forcing_terms.append(eta)
            max_dim = cfg.gmres_max_dim or sys.unknown_size
            action = block_action(U) if block_action is not None else sys.jacobian(U).dot
            d, report = linalg.gmres(action, -r, rel_tol=eta, max_dim=max_dim)
            trace.gmres_iterations.append(report.iterations)
            if not report.converged and report.relative_residual >= 1.0 - 1e-12:
                raise NonConvergenceError("GMRES stagnated without residual reduction",
                                          trace=trace, last_iterate=U)
        else:
            if method == "newton_type":
                jac = _modified_jacobian(sys, U)
            else:
                jac = sys.jacobian(U)
            d = linalg.lu_solve(jac, -r)

        if method == "inexact_entropy":
            dnorm = weighted_norm(d, dx)
            if dnorm == 0.0:
                trace.converged = True
                break
            u_tilde = U + d
            alpha = alpha_entropy_root(d, u_tilde, U, sys.u_n)
            trace.alphas.append(alpha)
            d = alpha * d

        U = U + d
        steps += 1
        r = sys.residual(U)
        rnorm = weighted_norm(r, dx)
        trace.residual_norms.append(rnorm)
        trace.update_entropies.append(_update_entropy(sys, U))
        trace.step_norms.append(weighted_norm(d, dx))
        trace.iterates.append(U.copy())
        trace.converged = use_stopping and rnorm <= trace.threshold

    if use_stopping and not trace.converged:
        raise NonConvergenceError(
            f"no convergence within {max_steps} iterations "
            f"(residual {rnorm:.3e}, threshold {trace.threshold:.3e})",
            trace=trace, last_iterate=U)
    return U, trace


def newton_solve(sys, cfg: SolverConfig, U0=None):
    """Plain Newton iteration on the stage system with the stopping rule above."""
    return _engine(sys, cfg, U0, method="newton", max_steps=cfg.max_iters, use_stopping=True)


def newton_type_solve(sys, cfg: SolverConfig, U0=None):
    """Newton iteration with the entropy-clean modified Jacobian (linear convergence)."""
    return _engine(sys, cfg, U0, method="newton_type", max_steps=cfg.max_iters, use_stopping=True)


def inexact_newton_entropy(sys, cfg: SolverConfig, U0=None):
    """Newton iteration whose steps are rescaled onto the entropy shell."""
    return _engine(sys, cfg, U0, method="inexact_entropy", max_steps=cfg.max_iters,
                   use_stopping=True)


def newton_gmres_solve(sys, cfg: SolverConfig, U0=None):
    """Newton outer loop with GMRES inner solves driven by the forcing sequence."""
    if cfg.linear_solver != "gmres":
        raise ValueError("newton_gmres_solve requires linear_solver='gmres'")
    return _engine(sys, cfg, U0, method="newton", max_steps=cfg.max_iters, use_stopping=True)


def solve(sys, cfg: SolverConfig, U0=None):
    """Dispatch on cfg.method / cfg.linear_solver."""
    if cfg.method == "newton" and cfg.linear_solver == "gmres":
        return newton_gmres_solve(sys, cfg, U0)
    if cfg.method == "newton":
        return newton_solve(sys, cfg, U0)
    if cfg.method == "newton_type":
        return newton_type_solve(sys, cfg, U0)
    return inexact_newton_entropy(sys, cfg, U0)


def iterate_exactly(sys, iterations: int, method: str = "newton", cfg: SolverConfig | None = None):
    """Run exactly `iterations` solver steps with no stopping rule.

    Instrumentation entry for the iteration studies: never raises on
    non-convergence and records the full trace including every iterate.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    _, trace = _engine(sys, cfg, None, method=method, max_steps=iterations, use_stopping=False)
    return trace


def entropy_drift_quadratic_form(b_weights, d_matrix, dx, dt, U_prev, dU):
    """Entropy drift induced by one Newton step: -2 dx dt dU^T M dU.

    M = (B (x) D) diag(U_prev) + diag((B (x) D) U_prev) with B = diag(b); for a
    one-stage method this reduces to D diag(U) + diag(D U). The previous
    iterate U_prev lies in the kernel of M^T, which is what makes the final
    Newton step alone account for the whole drift.
    """
    b = np.atleast_1d(np.asarray(b_weights, dtype=float))
    u_prev = np.asarray(U_prev, dtype=float)
    du = np.asarray(dU, dtype=float)
    w = d_matrix if b.size == 1 and b[0] == 1.0 else np.kron(np.diag(b), d_matrix)
    m = w * u_prev[None, :] + np.diag(w @ u_prev)
    return -2.0 * dx * dt * float(du @ (m @ du))
