import numpy as np
import pytest

from entrolax.nonlinear import (NonConvergenceError, SolverConfig, alpha_entropy_root,
                                eisenstat_walker_forcing, entropy_drift_quadratic_form,
                                inexact_newton_entropy, iterate_exactly, newton_gmres_solve,
                                newton_solve, newton_type_solve, IterationTrace)
from entrolax.integrators import midpoint_stage_system
from entrolax.operators import grid_nodes, make_central_fd
from entrolax.semidisc import make_burgers, make_custom_ode

N = 200
DX = 0.1
DT = 0.5


class GenericSystem:
    """Minimal stage-system stand-in for driving the solvers directly."""

    def __init__(self, residual, jacobian, guess, dx=1.0):
        self._residual = residual
        self._jacobian = jacobian
        self._guess = np.asarray(guess, dtype=float)
        self.unknown_size = self._guess.size
        self.u_n = self._guess.copy()
        self.dt = 1.0
        self.scheme = None
        self.sd = make_custom_ode(residual, jacobian, self._guess.size, dx=dx)

    def initial_guess(self):
        return self._guess.copy()

    def residual(self, u):
        return self._residual(u)

    def jacobian(self, u):
        return self._jacobian(u)

    def update(self, u):
        return np.asarray(u, dtype=float).copy()


@pytest.fixture(scope="module")
def burgers_midpoint():
    x = grid_nodes(-10.0, 10.0, N)
    u0 = 1.0 / np.cosh(x / np.sqrt(2.0)) ** 2
    sd = make_burgers(make_central_fd(1, N, DX, 4))
    return midpoint_stage_system(sd, u0, DT), u0


def test_newton_scalar_square_root_iterates():
    # x^2 - 4 = 0 from x0 = 3: hand iteration of Newton's map
    sys_ = GenericSystem(lambda u: u * u - 4.0, lambda u: np.array([[2.0 * u[0]]]),
                         np.array([3.0]))
    expected = [3.0]
    for _ in range(4):
        xk = expected[-1]
        expected.append(xk - (xk * xk - 4.0) / (2.0 * xk))
    assert expected[1] == pytest.approx(13.0 / 6.0, rel=1e-15)
    assert expected[2] == pytest.approx(313.0 / 156.0, rel=1e-15)

    _, trace = newton_solve(sys_, SolverConfig(abs_tol=1e-13, rel_tol=0.0, max_iters=10))
    for got, ref in zip(trace.iterates, expected):
        assert got[0] == pytest.approx(ref, rel=1e-14)
    # quadratic error ratios: e_{k+1} / e_k^2 stays bounded
    errors = [abs(v[0] - 2.0) for v in trace.iterates[:4]]
    ratios = [errors[k + 1] / errors[k] ** 2 for k in range(3)]
    assert max(ratios) < 1.0


def test_newton_returns_immediately_at_solution():
    sys_ = GenericSystem(lambda u: u * u - 4.0, lambda u: np.array([[2.0 * u[0]]]),
                         np.array([2.0]))
    _, trace = newton_solve(sys_, SolverConfig(abs_tol=1e-12, rel_tol=0.0))
    assert trace.iterations == 0
    assert trace.converged


def test_newton_nonconvergence_carries_trace():
    # exp(x) = 0 has no root; the iteration drifts left one unit per step
    sys_ = GenericSystem(lambda u: np.exp(u), lambda u: np.diag(np.exp(u)),
                         np.array([1.0]))
    with pytest.raises(NonConvergenceError) as excinfo:
        newton_solve(sys_, SolverConfig(abs_tol=1e-12, rel_tol=0.0, max_iters=5))
    assert excinfo.value.trace is not None
    assert excinfo.value.trace.iterations == 5
    assert excinfo.value.last_iterate is not None


def test_newton_quadratic_convergence_on_burgers(burgers_midpoint):
    sys_, _ = burgers_midpoint
    trace = iterate_exactly(sys_, 5, method="newton")
    res = trace.residual_norms
    logs = np.log(res[:5])
    second_diff = np.diff(logs, 2)
    assert np.all(second_diff < 0.0)


def test_newton_type_conserves_update_entropy(burgers_midpoint):
    sys_, u0 = burgers_midpoint
    eta0 = 0.5 * DX * (u0 @ u0)
    trace = iterate_exactly(sys_, 14, method="newton_type")
    assert max(abs(e - eta0) for e in trace.update_entropies) <= 1e-12


def test_newton_type_linear_convergence(burgers_midpoint):
    sys_, _ = burgers_midpoint
    trace = iterate_exactly(sys_, 14, method="newton_type")
    res = trace.residual_norms
    ratios = [res[k + 1] / res[k] for k in range(6, 13)]
    assert all(0.05 < r < 1.0 for r in ratios)
    assert np.std(ratios) < 0.05  # settles to a constant rate


def test_newton_type_requires_burgers_midpoint():
    sys_ = GenericSystem(lambda u: u, lambda u: np.eye(1), np.array([1.0]))
    with pytest.raises(ValueError):
        newton_type_solve(sys_, SolverConfig(abs_tol=1e-10, rel_tol=0.0))


def test_inexact_newton_entropy_condition_each_iterate(burgers_midpoint):
    sys_, u0 = burgers_midpoint
    trace = iterate_exactly(sys_, 8, method="inexact_entropy")
    for u in trace.iterates:
        assert abs(float(u @ u) - float(u @ u0)) <= 1e-12 * (1.0 + u @ u)


def test_inexact_newton_linear_convergence_with_alpha_below_one(burgers_midpoint):
    sys_, _ = burgers_midpoint
    trace = iterate_exactly(sys_, 7, method="inexact_entropy")
    assert all(0.0 < a <= 1.0 + 1e-12 for a in trace.alphas)
    # the scaling factor settles near 0.95 instead of approaching 1
    assert all(0.8 <= a <= 1.0 for a in trace.alphas[3:])
    res = trace.residual_norms
    ratios = [res[k + 1] / res[k] for k in range(4, 7)]
    assert all(r > 0.01 for r in ratios)  # linear, not quadratic


def test_alpha_entropy_root_hand_instance():
    # u_n = (1,0), U_k = (1,0) on the shell, full step to (0,1):
    # condition alpha (2 alpha - 1) = 0 has roots 0 and 1/2
    u_n = np.array([1.0, 0.0])
    u_k = np.array([1.0, 0.0])
    u_tilde = np.array([0.0, 1.0])
    alpha = alpha_entropy_root(u_tilde - u_k, u_tilde, u_k, u_n)
    assert alpha == pytest.approx(0.5, rel=1e-14)
    u_next = u_k + alpha * (u_tilde - u_k)
    assert float(u_next @ u_next) - float(u_next @ u_n) == pytest.approx(0.0, abs=1e-15)


def test_alpha_entropy_root_returns_step_already_on_shell():
    # if the full Newton target already satisfies the condition, alpha = 1
    u_n = np.array([2.0, 0.0])
    u_k = np.array([2.0, 0.0])
    u_tilde = np.array([1.0, 1.0])  # |u|^2 = 2 = <u, u_n>
    alpha = alpha_entropy_root(u_tilde - u_k, u_tilde, u_k, u_n)
    assert alpha == pytest.approx(1.0, rel=1e-14)


def test_alpha_entropy_root_scale_invariance():
    rng = np.random.default_rng(40)
    u_n = rng.standard_normal(6)
    u_k = u_n.copy()  # trivially on the shell
    u_tilde = rng.standard_normal(6)
    a1 = alpha_entropy_root(u_tilde - u_k, u_tilde, u_k, u_n)
    a2 = alpha_entropy_root(2.0 * (u_tilde - u_k), 2.0 * u_tilde, 2.0 * u_k, 2.0 * u_n)
    assert a1 == pytest.approx(a2, rel=1e-12)
    assert a1 != 0.0


def test_alpha_entropy_root_degenerate_step_raises():
    u = np.array([1.0, 0.0])
    with pytest.raises(ValueError):
        alpha_entropy_root(np.zeros(2), u, u, u)


def test_eisenstat_walker_first_call_returns_eta_max():
    cfg = SolverConfig(rel_tol=1e-8, linear_solver="gmres")
    trace = IterationTrace()
    trace.residual_norms = [1.0]
    assert eisenstat_walker_forcing(trace, cfg) == pytest.approx(0.9)


def test_eisenstat_walker_safeguard_kicks_in():
    # residual halved: candidate 0.9 * 0.25 = 0.225, safeguard 0.9 * 0.81 = 0.729
    cfg = SolverConfig(rel_tol=1e-8, linear_solver="gmres")
    trace = IterationTrace()
    trace.residual_norms = [1.0, 0.5]
    trace.forcing_terms = [0.9]
    trace.threshold = 1e-8
    assert eisenstat_walker_forcing(trace, cfg) == pytest.approx(0.729)


def test_eisenstat_walker_capped_at_eta_max():
    cfg = SolverConfig(rel_tol=1e-8, linear_solver="gmres")
    trace = IterationTrace()
    trace.residual_norms = [1.0, 2.0]  # residual grew: raw candidate is 3.6
    trace.forcing_terms = [0.9]
    trace.threshold = 1e-8
    assert eisenstat_walker_forcing(trace, cfg) <= 0.9


def test_eisenstat_walker_oversolve_floor():
    cfg = SolverConfig(rel_tol=1e-8, linear_solver="gmres")
    trace = IterationTrace()
    trace.residual_norms = [1.0, 1e-7]
    trace.forcing_terms = [1e-4]
    trace.threshold = 1e-7  # residual is at the threshold scale: do not oversolve
    eta = eisenstat_walker_forcing(trace, cfg)
    assert eta >= 0.5 * trace.threshold / 1e-7


def test_newton_gmres_linear_problem_single_iteration():
    rng = np.random.default_rng(41)
    a = rng.standard_normal((12, 12)) + 6.0 * np.eye(12)
    b = rng.standard_normal(12)
    sys_ = GenericSystem(lambda u: a @ u - b, lambda u: a, np.zeros(12))
    cfg = SolverConfig(abs_tol=1e-10, rel_tol=0.0, linear_solver="gmres",
                       forcing="fixed", eta_fixed=1e-12)
    _, trace = newton_gmres_solve(sys_, cfg)
    assert trace.iterations == 1
    assert trace.converged


def test_newton_gmres_matches_direct_newton_iteration_count(burgers_midpoint):
    sys_, _ = burgers_midpoint
    cfg_direct = SolverConfig(abs_tol=0.0, rel_tol=1e-10, max_iters=20)
    _, tr_direct = newton_solve(sys_, cfg_direct)
    cfg_gmres = SolverConfig(abs_tol=0.0, rel_tol=1e-10, max_iters=20,
                             linear_solver="gmres", forcing="fixed", eta_fixed=1e-12)
    _, tr_gmres = newton_gmres_solve(sys_, cfg_gmres)
    assert abs(tr_direct.iterations - tr_gmres.iterations) <= 1


def test_newton_gmres_eisenstat_walker_superlinear(burgers_midpoint):
    sys_, _ = burgers_midpoint
    cfg = SolverConfig(abs_tol=0.0, rel_tol=1e-11, max_iters=30, linear_solver="gmres",
                       forcing="eisenstat_walker")
    _, trace = newton_gmres_solve(sys_, cfg)
    assert trace.converged
    res = trace.residual_norms
    ratios = [res[k + 1] / res[k] for k in range(len(res) - 1)]
    # superlinear outer convergence: the contraction keeps improving until the
    # final step, where the forcing floor stops the inner solver early on purpose
    assert all(ratios[k + 1] < ratios[k] for k in range(len(ratios) - 2))


def test_newton_gmres_requires_gmres_config(burgers_midpoint):
    sys_, _ = burgers_midpoint
    with pytest.raises(ValueError):
        newton_gmres_solve(sys_, SolverConfig(rel_tol=1e-8))


def test_newton_gmres_stagnation_is_explicit_failure():
    # a rotation leaves the one-dimensional Krylov space without any residual
    # reduction, so a capped inner solver must stagnate and fail loudly
    rotation = np.array([[0.0, 1.0], [-1.0, 0.0]])
    b = np.array([1.0, 0.0])
    sys_ = GenericSystem(lambda u: rotation @ u - b, lambda u: rotation, np.zeros(2))
    cfg = SolverConfig(abs_tol=1e-12, rel_tol=0.0, linear_solver="gmres",
                       forcing="fixed", eta_fixed=1e-10, gmres_max_dim=1)
    with pytest.raises(NonConvergenceError, match="stagnated"):
        newton_gmres_solve(sys_, cfg)


def test_entropy_drift_quadratic_form_matches_direct_evaluation():
    rng = np.random.default_rng(42)
    n = 16
    d = make_central_fd(1, n, 0.2, 4).action
    u_prev = rng.standard_normal(n)
    du = rng.standard_normal(n)
    m = d @ np.diag(u_prev) + np.diag(d @ u_prev)
    expected = -2.0 * 0.2 * 0.3 * (du @ m @ du)
    got = entropy_drift_quadratic_form([1.0], d, 0.2, 0.3, u_prev, du)
    assert got == pytest.approx(expected, rel=1e-13)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(abs_tol=0.0, rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=1e-8, ew_eta_max=1.5)
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=1e-8, linear_solver="cg")
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=-1.0)
