import numpy as np
import pytest

from esdirk.errors import InconsistentInitialConditionsError, NotIndexOneError
from esdirk.integrator import Controls, solve, step
from esdirk.ivp import IvpProblem
from esdirk.problems import get_problem, van_der_pol
from esdirk.stage_solver import (ImplicitStageSolver, initial_derivative, numerical_jacobian,
                                 rms)
from esdirk.tableau import builtin


def _linear(lam=-2.0):
    return IvpProblem(lambda t, x: lam * x, [1.0], (0.0, 1.0),
                      jacobian=lambda t, x: np.array([[lam]]))


def test_linear_problem_solved_by_first_update():
    pr = _linear()
    t = builtin("ESDIRK34")
    solver = ImplicitStageSolver(pr)
    rec = step(t, pr, 0.0, pr.x0, 0.1, pr.f(0.0, pr.x0), solver)
    # the first update is exact; at most one more iteration confirms it
    assert all(r.converged and r.iterations <= 2 for r in rec.newton)
    for i in range(1, t.s):
        psi = pr.x0 + 0.1 * (t.A[i, :i] @ rec.K[:i])
        assert rec.X[i, 0] == pytest.approx(psi[0] / (1 + 2.0 * 0.1 * t.gamma), rel=1e-14)


def test_linear_problem_single_iteration_with_small_predictor_error():
    # once a zero rate has been measured, a displacement within KAPPA / floor
    # tolerance units is accepted after one iteration
    pr = _linear()
    t = builtin("ESDIRK34")
    solver = ImplicitStageSolver(pr)
    rec = step(t, pr, 0.0, pr.x0, 0.01, pr.f(0.0, pr.x0), solver,
               Controls(rtol=1e-3, atol=1e-3))
    its = [r.iterations for r in rec.newton]
    assert its[0] == 2 and its[1:] == [1, 1]


def test_carried_rate_cannot_certify_large_displacement():
    pr = van_der_pol(10.0, 1.0, "vdp10").problem
    t = builtin("ESDIRK34")
    solver = ImplicitStageSolver(pr)
    solver.prepare(0.0, pr.x0, 0.05, t.gamma)
    solver.eta = 0.0  # pretend an earlier solve measured a vanishing rate
    scale = np.full(2, 1e-8)
    psi = pr.x0 + 0.05 * t.gamma * initial_derivative(pr)
    X, K, rep = solver.solve_stage(0.05 * t.c[1], psi, 0.05, t.gamma, pr.x0, scale)
    assert rep.converged and rep.iterations >= 2
    resid = X - psi - 0.05 * t.gamma * pr.f(0.05 * t.c[1], X)
    assert np.sqrt(np.mean((resid / scale) ** 2)) <= 0.03


def test_stage_derivative_recovery_identity():
    tp = van_der_pol(10.0, 1.0, "vdp10")
    pr = tp.problem
    t = builtin("ESDIRK34")
    rec = step(t, pr, 0.0, pr.x0, 0.05, initial_derivative(pr), ImplicitStageSolver(pr),
               Controls(rtol=1e-10, atol=1e-10))
    for i in range(1, t.s):
        np.testing.assert_allclose(rec.K[i], pr.f(0.05 * t.c[i], rec.X[i]), rtol=1e-7,
                                   atol=1e-7)


def test_van_der_pol_stage_iterations_bounded():
    pr = van_der_pol(10.0, 1.0, "vdp10").problem
    t = builtin("ESDIRK34")
    rec = step(t, pr, 0.0, pr.x0, 0.05, initial_derivative(pr), ImplicitStageSolver(pr))
    assert rec.accepted
    assert all(r.converged and r.iterations <= 5 for r in rec.newton)


def test_zero_jacobian_diverges_on_stiff_linear_problem():
    lam = -1e6
    pr = IvpProblem(lambda t, x: lam * x, [1.0], (0.0, 1.0),
                    jacobian=lambda t, x: np.zeros((1, 1)))
    t = builtin("ESDIRK23")
    solver = ImplicitStageSolver(pr)
    rec = step(t, pr, 0.0, pr.x0, 1.0, pr.f(0.0, pr.x0), solver)
    assert not rec.accepted
    assert rec.failure.startswith("newton")
    assert not rec.newton[-1].converged
    assert solver.jacobian_stale and solver.itmat is None


def test_numerical_jacobian_matches_analytic():
    pr = van_der_pol(5.0, 1.0, "vdp5").problem
    x = np.array([1.3, -0.7])
    J = numerical_jacobian(pr.f, 0.0, x)
    np.testing.assert_allclose(J, pr.jacobian(0.0, x), rtol=1e-6, atol=1e-6)


def test_finite_difference_jacobian_gives_same_trajectory():
    tp = van_der_pol(5.0, 2.0, "vdp5")
    pr = tp.problem
    fd = IvpProblem(pr.rhs, pr.x0, pr.t_span)
    ctl = Controls(rtol=1e-6, atol=1e-6)
    a = solve(builtin("ESDIRK34"), pr, ctl)
    b = solve(builtin("ESDIRK34"), fd, ctl)
    np.testing.assert_allclose(a.x[-1], b.x[-1], rtol=1e-4, atol=1e-5)
    assert b.stats.nfev > a.stats.nfev


def test_initial_derivative_ode_and_mass():
    pr = _linear(-3.0)
    np.testing.assert_allclose(initial_derivative(pr), [-3.0])
    M = np.array([[2.0, 0.0], [0.0, 4.0]])
    pm = IvpProblem(lambda t, x: np.array([x[1], -x[0]]), [1.0, 2.0], (0.0, 1.0), mass=M)
    np.testing.assert_allclose(initial_derivative(pm), [1.0, -0.25])


def test_initial_derivative_dae():
    tp = get_problem("algebraic_square")
    xdot = initial_derivative(tp.problem)
    np.testing.assert_allclose(xdot, [-1.0, -2.0], atol=1e-8)


def test_inconsistent_algebraic_state_raises():
    tp = get_problem("algebraic_square")
    pr = tp.problem
    bad = IvpProblem(pr.rhs, [1.0, 2.0], pr.t_span, jacobian=pr.jacobian, mass=pr.mass)
    with pytest.raises(InconsistentInitialConditionsError) as exc:
        initial_derivative(bad)
    assert exc.value.residual == pytest.approx(1.0)


def test_higher_index_dae_rejected():
    # 0 = x1 - sin t does not involve the algebraic variable: not index one
    pr = IvpProblem(lambda t, x: np.array([x[1], x[0] - np.sin(t)]), [0.0, 1.0], (0.0, 1.0),
                    mass=np.diag([1.0, 0.0]))
    with pytest.raises(NotIndexOneError):
        initial_derivative(pr)


def test_identity_mass_equivalent_to_plain_ode():
    tp = van_der_pol(5.0, 2.0, "vdp5")
    pr = tp.problem
    pm = IvpProblem(pr.rhs, pr.x0, pr.t_span, jacobian=pr.jacobian, mass=np.eye(2))
    ctl = Controls(rtol=1e-7, atol=1e-7)
    a = solve(builtin("ESDIRK34"), pr, ctl)
    b = solve(builtin("ESDIRK34"), pm, ctl)
    assert a.stats.n_steps == b.stats.n_steps
    np.testing.assert_allclose(a.x, b.x, rtol=1e-12, atol=1e-12)


def test_factor_reuse_is_transparent():
    pr = van_der_pol(10.0, 5.0, "vdp10").problem
    base = dict(rtol=1e-6, atol=1e-6)
    a = solve(builtin("ESDIRK34"), pr, Controls(**base))
    b = solve(builtin("ESDIRK34"), pr, Controls(**base, always_refactor=True))
    np.testing.assert_allclose(a.x[-1], b.x[-1], rtol=1e-4, atol=1e-5)
    assert a.stats.n_lu < b.stats.n_lu


def test_refactor_on_step_change():
    pr = _linear()
    t = builtin("ESDIRK23")
    solver = ImplicitStageSolver(pr)
    step(t, pr, 0.0, pr.x0, 0.1, pr.f(0.0, pr.x0), solver)
    assert solver.nlu == 1
    step(t, pr, 0.1, pr.x0, 0.11, pr.f(0.0, pr.x0), solver)  # 10 % change: reuse
    assert solver.nlu == 1
    step(t, pr, 0.2, pr.x0, 0.15, pr.f(0.0, pr.x0), solver)  # 50 % change: refactor
    assert solver.nlu == 2


def test_rms():
    assert rms([3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    assert rms([]) == 0.0
