"""Relaxation of a completed time step onto a conserved functional.

After a step u_n -> u_{n+1}, the relaxed update

    u_gamma = u_n + gamma (u_{n+1} - u_n),   t_gamma = t_n + gamma dt,

is chosen so a target functional is conserved (or matches a prescribed
dissipative estimate). Advancing the clock by gamma dt rather than dt is what
preserves the order of the underlying method. For quadratic functionals gamma
solves a linear equation, for cubic ones a quadratic equation (the root
closer to unity is taken), and for general smooth functionals a safeguarded
scalar root finder is used. gamma stays near 1 for resolved steps; roots
outside the admissible interval signal a step-size problem and raise.
"""

from dataclasses import dataclass

import numpy as np

from .semidisc import CUBIC_KINDS, QUADRATIC_KINDS


class RelaxationError(Exception):
    """No admissible relaxation parameter; the step must be retried smaller."""


@dataclass(frozen=True)
class RelaxationPolicy:
    mode: str = "off"                  # off | quadratic | cubic | general
    eta_target: str = "conserve"       # conserve | rk_estimate
    gamma_bounds: tuple = (0.5, 1.5)
    root_tol: float = 1e-12
    functional_kind: str | None = None
    degenerate_threshold: float = 1e-14

    def __post_init__(self):
        if self.mode not in ("off", "quadratic", "cubic", "general"):
            raise ValueError(f"unknown relaxation mode {self.mode!r}")
        if self.eta_target not in ("conserve", "rk_estimate"):
            raise ValueError(f"unknown entropy target {self.eta_target!r}")
        lo, hi = self.gamma_bounds
        if not lo < 1.0 < hi:
            raise ValueError("gamma bounds must bracket 1")


def target_functional(policy: RelaxationPolicy, sd):
    """Pick the functional the policy should conserve for this discretization."""
    if policy.functional_kind is not None:
        return sd.functional(policy.functional_kind)
    if policy.mode == "quadratic":
        kinds = QUADRATIC_KINDS
    elif policy.mode == "cubic":
        kinds = CUBIC_KINDS
    else:
        kinds = tuple(f.kind for f in sd.invariants[1:]) or tuple(f.kind for f in sd.invariants)
    for f in sd.invariants:
        if f.kind in kinds:
            return f
    raise RelaxationError(
        f"no functional of kind {kinds} available for equation {sd.equation_tag!r}")


def _degenerate(u_n, d, threshold):
    return float(np.linalg.norm(d)) <= threshold * (1.0 + float(np.linalg.norm(u_n)))


def gamma_quadratic(u_n, stage, degenerate_threshold=1e-14):
    """Relaxation parameter conserving ||u||^2 for the midpoint update 2 U - u_n.

    gamma = (||u_n||^2 - <U, u_n>) / ||U - u_n||^2; for an exactly solved
    entropy-conservative stage the numerator equals the denominator and
    gamma = 1. A degenerate step returns gamma = 1 by convention. The value
    is invariant under uniform scaling of u_n and U.
    """
    u_n = np.asarray(u_n, dtype=float)
    stage = np.asarray(stage, dtype=float)
    d = stage - u_n
    if _degenerate(u_n, d, degenerate_threshold):
        return 1.0
    return (float(u_n @ u_n) - float(stage @ u_n)) / float(d @ d)


def _polynomial_gamma(u_n, u_next, functional, eta_delta, gamma_bounds, degenerate_threshold,
                      cubic):
    """Root near 1 of F(u_n + g d) - F(u_n) = g * eta_delta for polynomial F.

    Writing p(g) for the left-hand side, the trivial root g = 0 is removed and
    q(g) = p(g) / g is collocated at g in {0, 1, -1}: q(0) is the directional
    derivative of F, and q(+-1) come from two functional evaluations. The fit
    is exact for any functional of degree <= 3.
    """
    u_n = np.asarray(u_n, dtype=float)
    u_next = np.asarray(u_next, dtype=float)
    d = u_next - u_n
    if _degenerate(u_n, d, degenerate_threshold):
        return 1.0
    f0 = functional.value(u_n)
    c = float(functional.gradient(u_n) @ d)
    q_plus = functional.value(u_n + d) - f0
    q_minus = -(functional.value(u_n - d) - f0)
    a = 0.5 * (q_plus + q_minus) - c if cubic else 0.0
    b = 0.5 * (q_plus - q_minus) if cubic else q_plus - c
    c_eff = c - eta_delta

    scale = max(abs(a), abs(b), abs(c_eff), 1e-300)
    lo, hi = gamma_bounds
    if abs(a) <= 1e-14 * scale:
        if abs(b) <= 1e-14 * scale:
            # functional is flat along the step direction: any gamma conserves
            return 1.0
        roots = [-c_eff / b]
    else:
        disc = b * b - 4.0 * a * c_eff
        if disc < 0.0:
            raise RelaxationError("relaxation equation has no real root")
        sq = float(np.sqrt(disc))
        q = -0.5 * (b + np.copysign(sq, b)) if b != 0.0 else 0.5 * sq
        roots = [q / a]
        if q != 0.0:
            roots.append(c_eff / q)
    roots = [g for g in roots if lo < g < hi]
    if not roots:
        raise RelaxationError("no relaxation root inside the admissible interval")
    gamma = min(roots, key=lambda g: abs(g - 1.0))

    achieved = functional.value(u_n + gamma * d) - f0 - gamma * eta_delta
    if abs(achieved) > 1e-11 * (1.0 + abs(f0)):
        raise RelaxationError(f"relaxed step misses the target by {achieved:.3e}")
    return gamma


def gamma_cubic(u_n, u_next, functional, gamma_bounds=(0.5, 1.5), eta_delta=0.0,
                degenerate_threshold=1e-14):
    """Relaxation parameter for a cubic functional; root of a quadratic equation.

    The real root closer to unity is returned; no real root inside
    gamma_bounds raises RelaxationError (the caller should retry with a
    smaller step). A degenerate direction returns gamma = 1.
    """
    return _polynomial_gamma(u_n, u_next, functional, eta_delta, gamma_bounds,
                             degenerate_threshold, cubic=True)


def gamma_general(u_n, u_next, functional, eta_target=None, tol=1e-12,
                  gamma_bounds=(0.5, 1.5), degenerate_threshold=1e-14):
    """Safeguarded scalar root finding for arbitrary smooth functionals.

    Solves F(u_n + g d) = F(u_n) + g (eta_target - F(u_n)) by bracketing on a
    grid over gamma_bounds (sign change nearest 1) followed by a
    bisection/secant hybrid, down to |residual| <= tol.
    """
    u_n = np.asarray(u_n, dtype=float)
    u_next = np.asarray(u_next, dtype=float)
    d = u_next - u_n
    if _degenerate(u_n, d, degenerate_threshold):
        return 1.0
    f0 = functional.value(u_n)
    delta = 0.0 if eta_target is None else eta_target - f0

    def phi(g):
        return functional.value(u_n + g * d) - f0 - g * delta

    lo, hi = gamma_bounds
    grid = np.linspace(lo, hi, 33)
    values = [phi(g) for g in grid]
    bracket = None
    best = np.inf
    for i in range(len(grid) - 1):
        if values[i] == 0.0:
            return float(grid[i])
        if values[i] * values[i + 1] < 0.0:
            mid = 0.5 * (grid[i] + grid[i + 1])
            if abs(mid - 1.0) < best:
                best = abs(mid - 1.0)
                bracket = (grid[i], grid[i + 1], values[i], values[i + 1])
    if values[-1] == 0.0:
        return float(grid[-1])
    if bracket is None:
        raise RelaxationError("no sign change of the relaxation equation inside gamma bounds")

    a, b, fa, fb = bracket
    g, fg = a, fa
    for _ in range(200):
        # secant candidate, fall back to bisection when it leaves the bracket
        if fb != fa:
            g = b - fb * (b - a) / (fb - fa)
        if not a < g < b:
            g = 0.5 * (a + b)
        fg = phi(g)
        if abs(fg) <= tol or (b - a) <= 4.0 * np.finfo(float).eps * max(1.0, abs(g)):
            return float(g)
        if fa * fg < 0.0:
            b, fb = g, fg
        else:
            a, fa = g, fg
    return float(g)


def eta_estimate_rk(scheme, stage_values, stage_rhs, functional, u_n, dt):
    """Dissipative entropy target F(u_n) + dt sum_i b_i <F'(y_i), f(y_i)>.

    Requires nonnegative quadrature weights. For entropy-neutral right-hand
    sides every term vanishes and the estimate reduces to F(u_n).
    """
    if scheme is None or getattr(scheme, "b", None) is None:
        raise ValueError("eta_estimate_rk needs a scheme with quadrature weights")
    b = np.asarray(scheme.b, dtype=float)
    if np.any(b < 0.0):
        raise ValueError("entropy estimate requires nonnegative weights")
    total = 0.0
    for w, y, f in zip(b, stage_values, stage_rhs):
        total += w * float(functional.gradient(y) @ f)
    return functional.value(u_n) + dt * total


def apply_relaxation(t_n, dt, u_n, u_next, gamma):
    """Relaxed state and clock: (t_n + gamma dt, u_n + gamma (u_next - u_n))."""
    u_n = np.asarray(u_n, dtype=float)
    u_next = np.asarray(u_next, dtype=float)
    return t_n + gamma * dt, u_n + gamma * (u_next - u_n)


def compute_gamma(policy: RelaxationPolicy, sys, U, u_next, functional, eta_target=None):
    """Dispatch on the policy mode; eta_target None means conservation."""
    u_n = sys.u_n
    d = np.asarray(u_next, dtype=float) - u_n
    if _degenerate(u_n, d, policy.degenerate_threshold):
        return 1.0
    delta = 0.0 if eta_target is None else eta_target - functional.value(u_n)
    if policy.mode == "quadratic":
        if functional.kind == "quadratic_entropy" and delta == 0.0:
            # Euclidean entropy: the closed form in terms of the virtual midpoint stage
            return gamma_quadratic(u_n, u_n + 0.5 * d, policy.degenerate_threshold)
        return _polynomial_gamma(u_n, u_next, functional, delta, policy.gamma_bounds,
                                 policy.degenerate_threshold, cubic=False)
    if policy.mode == "cubic":
        return gamma_cubic(u_n, u_next, functional, policy.gamma_bounds, delta,
                           policy.degenerate_threshold)
    if policy.mode == "general":
        target = functional.value(u_n) + delta
        return gamma_general(u_n, u_next, functional, eta_target=target, tol=policy.root_tol,
                             gamma_bounds=policy.gamma_bounds,
                             degenerate_threshold=policy.degenerate_threshold)
    raise ValueError(f"relaxation mode {policy.mode!r} has no gamma")
