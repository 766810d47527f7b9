"""Implicit one-step methods posed as stage residual systems.

Each method produces a residual/Jacobian pair over its stage unknowns plus an
update map, so the nonlinear solvers can be swapped freely:

* implicit midpoint and 3-stage Lobatto IIIC through the generic coupled
  Runge-Kutta stage system F(U) = U - 1 (x) u_n - dt (A (x) I) f(U),
* the average-vector-field method in its Simpson-rule form (exact for
  Hamiltonians up to quartic degree), whose unknown is u_{n+1} itself.

`step` orchestrates one time step: solve the stage system, form the update,
then optionally relax it toward a conserved functional.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import nonlinear, relaxation
from .semidisc import SemiDiscretization


@dataclass(frozen=True)
class RKScheme:
    """Butcher data plus the stage-to-update vector v with A^T v = b."""

    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    v: np.ndarray
    symplectic: bool
    b_nonneg: bool
    sbp: bool

    def __post_init__(self):
        for name in ("A", "b", "c", "v"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def s(self) -> int:
        return self.b.size


MIDPOINT = RKScheme(
    name="midpoint",
    A=[[0.5]], b=[1.0], c=[0.5], v=[2.0],
    symplectic=True, b_nonneg=True, sbp=False,
)

LOBATTO_IIIC = RKScheme(
    name="lobatto_iiic",
    A=[[1 / 6, -1 / 3, 1 / 6],
       [1 / 6, 5 / 12, -1 / 12],
       [1 / 6, 2 / 3, 1 / 6]],
    b=[1 / 6, 2 / 3, 1 / 6],
    c=[0.0, 0.5, 1.0],
    v=[0.0, 0.0, 1.0],
    symplectic=False, b_nonneg=True, sbp=True,
)


class RungeKuttaSystem:
    """Coupled stage equations of an implicit RK method for one time step."""

    def __init__(self, sd: SemiDiscretization, scheme: RKScheme, u_n, dt: float):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        u_n = np.asarray(u_n, dtype=float)
        if u_n.shape != (sd.grid.n,):
            raise ValueError(f"state of shape {u_n.shape} does not match grid size {sd.grid.n}")
        self.sd = sd
        self.scheme = scheme
        self.u_n = u_n.copy()
        self.dt = float(dt)
        self.n = sd.grid.n
        self.s = scheme.s
        self.unknown_size = self.n * self.s

    def stages(self, U):
        return np.asarray(U).reshape(self.s, self.n)

    def rhs_at_stages(self, U):
        return np.stack([self.sd.rhs(y) for y in self.stages(U)])

    def initial_guess(self):
        # replicating u_n across stages keeps linear invariants intact
        return np.tile(self.u_n, self.s)

    def residual(self, U):
        U = np.asarray(U, dtype=float)
        f = self.rhs_at_stages(U)
        return U - np.tile(self.u_n, self.s) - self.dt * (self.scheme.A @ f).reshape(-1)

    def jacobian(self, U):
        blocks = [self.sd.jacobian(y) for y in self.stages(U)]
        jac = np.eye(self.unknown_size)
        a = self.scheme.A
        n = self.n
        for i in range(self.s):
            for j in range(self.s):
                if a[i, j] != 0.0:
                    jac[i * n:(i + 1) * n, j * n:(j + 1) * n] -= self.dt * a[i, j] * blocks[j]
        return jac

    def jacobian_action(self, U):
        """Matrix-free Jacobian product staying in per-stage blocks.

        Equivalent to jacobian(U) @ v but keeps each stage block in cache
        instead of streaming the full s*n x s*n matrix.
        """
        blocks = [self.sd.jacobian(y) for y in self.stages(U)]
        dt_a = self.dt * self.scheme.A
        s, n = self.s, self.n

        def action(v):
            stages = v.reshape(s, n)
            fprime = np.stack([blocks[j] @ stages[j] for j in range(s)])
            return v - (dt_a @ fprime).reshape(-1)

        return action

    def update(self, U):
        y = self.stages(U)
        return self.u_n + self.scheme.v @ (y - self.u_n)


class AvfSystem:
    """Average-vector-field step in Simpson-rule form; the unknown is u_{n+1}."""

    # Simpson nodes u_n, (u_n + u_{n+1})/2, u_{n+1} with these weights
    quadrature_weights = np.array([1 / 6, 2 / 3, 1 / 6])

    def __init__(self, sd: SemiDiscretization, u_n, dt: float):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        u_n = np.asarray(u_n, dtype=float)
        if u_n.shape != (sd.grid.n,):
            raise ValueError(f"state of shape {u_n.shape} does not match grid size {sd.grid.n}")
        self.sd = sd
        self.scheme = None
        self.u_n = u_n.copy()
        self.dt = float(dt)
        self.n = sd.grid.n
        self.s = 1
        self.unknown_size = self.n
        self._f_n = sd.rhs(self.u_n)

    def stages(self, w):
        w = np.asarray(w)
        return np.stack([self.u_n, 0.5 * (w + self.u_n), w])

    def rhs_at_stages(self, w):
        return np.stack([self.sd.rhs(y) for y in self.stages(w)])

    def initial_guess(self):
        return self.u_n.copy()

    def residual(self, w):
        w = np.asarray(w, dtype=float)
        mid = 0.5 * (w + self.u_n)
        return w - self.u_n - self.dt / 6.0 * (self._f_n + 4.0 * self.sd.rhs(mid) + self.sd.rhs(w))

    def jacobian(self, w):
        w = np.asarray(w, dtype=float)
        mid = 0.5 * (w + self.u_n)
        return np.eye(self.n) - self.dt / 6.0 * (2.0 * self.sd.jacobian(mid) + self.sd.jacobian(w))

    def update(self, w):
        return np.asarray(w, dtype=float).copy()


def midpoint_stage_system(sd, u_n, dt) -> RungeKuttaSystem:
    return RungeKuttaSystem(sd, MIDPOINT, u_n, dt)


def lobatto_iiic_stage_system(sd, u_n, dt) -> RungeKuttaSystem:
    return RungeKuttaSystem(sd, LOBATTO_IIIC, u_n, dt)


def avf_stage_system(sd, u_n, dt) -> AvfSystem:
    return AvfSystem(sd, u_n, dt)


@dataclass
class SolveReport:
    """Record of one time step: solver effort, entropy bookkeeping, relaxation."""

    iterations: int
    residual_norms: list
    entropy_before: float
    entropy_after: float
    gamma: float | None
    gmres_iterations: int
    wall_time: float
    converged: bool = True


def step(sys, t_n: float, solver_cfg, policy=None):
    """Advance one time step: solve, update, optionally relax.

    Returns (u_next, t_next, SolveReport). Solver non-convergence propagates
    as an exception carrying the iteration trace.
    """
    policy = policy or relaxation.RelaxationPolicy()
    tic = time.perf_counter()
    U, trace = nonlinear.solve(sys, solver_cfg)
    u_prop = sys.update(U)
    u_n = sys.u_n

    if policy.mode == "off":
        functional = sys.sd.invariants[-1] if sys.sd.invariants else None
        gamma = None
        u_next = u_prop
        t_next = t_n + sys.dt
    else:
        functional = relaxation.target_functional(policy, sys.sd)
        eta_target = None
        if policy.eta_target == "rk_estimate":
            eta_target = relaxation.eta_estimate_rk(
                sys.scheme, sys.stages(U), sys.rhs_at_stages(U), functional, u_n, sys.dt)
        gamma = relaxation.compute_gamma(policy, sys, U, u_prop, functional, eta_target)
        t_next, u_next = relaxation.apply_relaxation(t_n, sys.dt, u_n, u_prop, gamma)

    e_before = functional.value(u_n) if functional is not None else 0.0
    e_after = functional.value(u_next) if functional is not None else 0.0
    report = SolveReport(
        iterations=trace.iterations,
        residual_norms=list(trace.residual_norms),
        entropy_before=e_before,
        entropy_after=e_after,
        gamma=gamma,
        gmres_iterations=int(sum(trace.gmres_iterations)),
        wall_time=time.perf_counter() - tic,
        converged=trace.converged,
    )
    return u_next, t_next, report
