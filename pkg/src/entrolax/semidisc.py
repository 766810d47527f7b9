"""Right-hand sides, Jacobians, and conserved functionals of the model equations.

All equations live on a uniform periodic grid and are written as u_t = f(u):

* burgers:      f(u) = -2 (D u^2 + u .* D u), the skew-symmetric split form
                of u_t + 6 u u_x = 0 (elementwise square u^2 = diag(u) u),
* kdv:          f(u) = burgers f(u) - D3 u for u_t + 6 u u_x + u_xxx = 0,
* bbm-split:    f(u) = -(I - D2)^{-1} (D1 u^2 / 3 + u .* D1 u / 3 + D1 u),
* bbm-central:  f(u) = -(I - D2)^{-1} D1 (u^2 / 2 + u),

with D/D1 skew and D2 symmetric negative semidefinite. The split Burgers/KdV
forms conserve the quadratic entropy, the BBM split form conserves the mass
and H^1 functionals, and the BBM central form conserves mass, the cubic
functional, and the cubic Hamiltonian. Jacobians are returned as dense
matrices; the elliptic operator I - D2 is factored once per discretization.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import lu_factor, lu_solve_factored
from .operators import GridOperator, MassMatrix, uniform_mass

KIND_MASS = "mass"
KIND_QUADRATIC_ENTROPY = "quadratic_entropy"
KIND_J2 = "j2"
KIND_J3 = "j3"
KIND_HAMILTONIAN = "hamiltonian"

QUADRATIC_KINDS = (KIND_QUADRATIC_ENTROPY, KIND_J2)
CUBIC_KINDS = (KIND_J3, KIND_HAMILTONIAN)


@dataclass(frozen=True)
class Grid:
    n: int
    dx: float
    x_min: float = 0.0
    x_max: float | None = None

    @property
    def length(self) -> float:
        return self.n * self.dx

    @property
    def nodes(self):
        return self.x_min + self.dx * np.arange(1, self.n + 1)


@dataclass(frozen=True)
class Functional:
    """A conserved functional: scalar value and gradient vector."""

    kind: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


def mass_functional(mass: MassMatrix) -> Functional:
    w = mass.weights
    return Functional(KIND_MASS,
                      value=lambda u: float(w @ u),
                      gradient=lambda u: w.copy())


def quadratic_entropy_functional(mass: MassMatrix) -> Functional:
    w = mass.weights
    return Functional(KIND_QUADRATIC_ENTROPY,
                      value=lambda u: 0.5 * float(w @ (u * u)),
                      gradient=lambda u: w * u)


def bbm_j2_functional(mass: MassMatrix, d2: GridOperator) -> Functional:
    # 1/2 u^T M (I - D2) u; gradient M (I - D2) u since M(I - D2) is symmetric
    w = mass.weights
    d2m = d2.action
    return Functional(KIND_J2,
                      value=lambda u: 0.5 * float(w @ (u * (u - d2m @ u))),
                      gradient=lambda u: w * (u - d2m @ u))


def bbm_j3_functional(mass: MassMatrix) -> Functional:
    w = mass.weights
    return Functional(KIND_J3,
                      value=lambda u: float(w @ (1.0 + u) ** 3),
                      gradient=lambda u: 3.0 * w * (1.0 + u) ** 2)


def bbm_hamiltonian_functional(mass: MassMatrix) -> Functional:
    w = mass.weights
    return Functional(KIND_HAMILTONIAN,
                      value=lambda u: float(w @ (u ** 3 / 6.0 + u ** 2 / 2.0)),
                      gradient=lambda u: w * (u ** 2 / 2.0 + u))


@dataclass(frozen=True)
class SemiDiscretization:
    """rhs/Jacobian pair plus the functionals the semidiscretization conserves."""

    equation_tag: str
    grid: Grid
    rhs: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    invariants: tuple
    mass: MassMatrix
    d1: GridOperator | None = None
    d2: GridOperator | None = None
    d3: GridOperator | None = None

    def functional(self, kind: str) -> Functional:
        for f in self.invariants:
            if f.kind == kind:
                return f
        raise KeyError(f"no invariant of kind {kind!r} for equation {self.equation_tag!r}")


def _check_dim(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise ValueError(f"state of shape {u.shape} does not match grid size {n}")
    return u


def make_burgers(d1: GridOperator, grid: Grid | None = None) -> SemiDiscretization:
    d = d1.action
    n = d1.n
    grid = grid or Grid(n=n, dx=d1.dx)
    mass = uniform_mass(n, d1.dx)

    def rhs(u):
        u = _check_dim(u, n)
        return -2.0 * (d @ (u * u) + u * (d @ u))

    def jacobian(u):
        u = _check_dim(u, n)
        # -2 (diag(u) D + diag(D u) + 2 D diag(u))
        return -2.0 * (u[:, None] * d + np.diag(d @ u) + 2.0 * (d * u[None, :]))

    invariants = (mass_functional(mass), quadratic_entropy_functional(mass))
    return SemiDiscretization("burgers", grid, rhs, jacobian, invariants, mass, d1=d1)


def make_kdv(d1: GridOperator, d3: GridOperator, grid: Grid | None = None) -> SemiDiscretization:
    if d3.n != d1.n:
        raise ValueError("first- and third-derivative operators must share the grid")
    base = make_burgers(d1, grid)
    d3m = d3.action
    n = d1.n

    def rhs(u):
        u = _check_dim(u, n)
        return base.rhs(u) - d3m @ u

    def jacobian(u):
        return base.jacobian(u) - d3m

    return SemiDiscretization("kdv", base.grid, rhs, jacobian, base.invariants,
                              base.mass, d1=d1, d3=d3)


def _make_bbm(d1: GridOperator, d2: GridOperator, form: str,
              grid: Grid | None = None) -> SemiDiscretization:
    if d2.n != d1.n:
        raise ValueError("first- and second-derivative operators must share the grid")
    n = d1.n
    grid = grid or Grid(n=n, dx=d1.dx)
    mass = uniform_mass(n, d1.dx)
    d1m = d1.action
    elliptic = lu_factor(np.eye(n) - d2.action)

    if form == "bbm-split":
        def rhs(u):
            u = _check_dim(u, n)
            g = (d1m @ (u * u)) / 3.0 + u * (d1m @ u) / 3.0 + d1m @ u
            return -lu_solve_factored(elliptic, g)

        def jacobian(u):
            u = _check_dim(u, n)
            inner = (2.0 / 3.0) * (d1m * u[None, :]) + np.diag(d1m @ u) / 3.0 \
                + (u[:, None] * d1m) / 3.0 + d1m
            return -lu_solve_factored(elliptic, inner)

        invariants = (mass_functional(mass), bbm_j2_functional(mass, d2))
    elif form == "bbm-central":
        def rhs(u):
            u = _check_dim(u, n)
            return -lu_solve_factored(elliptic, d1m @ (0.5 * u * u + u))

        def jacobian(u):
            u = _check_dim(u, n)
            return -lu_solve_factored(elliptic, d1m * (u + 1.0)[None, :])

        invariants = (mass_functional(mass), bbm_j3_functional(mass),
                      bbm_hamiltonian_functional(mass))
    else:
        raise ValueError(f"unknown BBM form {form!r}")

    return SemiDiscretization(form, grid, rhs, jacobian, invariants, mass, d1=d1, d2=d2)


def make_bbm_split(d1, d2, grid=None):
    return _make_bbm(d1, d2, "bbm-split", grid)


def make_bbm_central(d1, d2, grid=None):
    return _make_bbm(d1, d2, "bbm-central", grid)


def make_custom_ode(rhs, jacobian, n, dx=1.0, invariants=(), tag="ode") -> SemiDiscretization:
    """Wrap a generic autonomous ODE so the time integrators can drive it."""
    grid = Grid(n=n, dx=dx)
    return SemiDiscretization(tag, grid, rhs, jacobian, tuple(invariants), uniform_mass(n, dx))
