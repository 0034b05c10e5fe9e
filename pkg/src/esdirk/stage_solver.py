"""Modified Newton iteration for the implicit ESDIRK stages.

Stage i solves M (X - psi) = h gamma f(t_i, X) for X; the stage derivative
is recovered as K = (X - psi) / (h gamma), which stays well defined when M
is singular. One LU factorisation of M - h gamma J serves every implicit
stage of a step and is reused across steps while h changes little.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import InconsistentInitialConditionsError, NotIndexOneError
from .ivp import IvpProblem

EPS = np.finfo(float).eps
KAPPA = 0.03
MAX_NEWTON_ITER = 10
REFACTOR_RATIO = 0.2
MAX_FACTOR_AGE = 50
JACOBIAN_REFRESH_RATE = 0.5
CONSISTENCY_TOL = 1e-8
# Lower bound for a rate estimate carried over from an earlier solve: a first
# displacement above KAPPA / CARRIED_RATE_FLOOR tolerance units is always confirmed
# by a second iteration instead of trusting a rate measured elsewhere.
CARRIED_RATE_FLOOR = 1e-3
# Displacements within this many units of roundoff of the iterate carry no rate
# information; the iteration has converged as far as floating point allows.
ROUNDOFF_UNITS = 16


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    converged: bool
    rate_estimate: float
    final_residual_norm: float
    reason: str = ""


@dataclass
class IterationMatrix:
    """LU factors of M - h gamma J and the step size they were built for."""

    lu: tuple
    h_at_factorization: float
    t_at_factorization: float
    gamma: float
    age: int = 0

    def needs_refactor(self, h: float, max_age: int = MAX_FACTOR_AGE) -> bool:
        return (abs(h - self.h_at_factorization) > REFACTOR_RATIO * abs(self.h_at_factorization)
                or self.age > max_age)

    def solve(self, rhs):
        return lu_solve(self.lu, rhs)


def rms(v) -> float:
    v = np.asarray(v)
    return float(np.sqrt(np.mean(v * v))) if v.size else 0.0


def numerical_jacobian(fun, t, x, f0=None, typical_scale=1.0):
    """Forward-difference Jacobian with increment sqrt(eps) max(|x_j|, typical_scale)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(t, x), dtype=float) if f0 is None else f0
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        dx = np.sqrt(EPS) * max(abs(x[j]), typical_scale)
        xp = x.copy()
        xp[j] += dx
        dx = xp[j] - x[j]
        J[:, j] = (np.asarray(fun(t, xp), dtype=float) - f0) / dx
    return J


def _jacobian(problem: IvpProblem, t, x, f0=None):
    if problem.jacobian is not None:
        return np.atleast_2d(np.asarray(problem.jacobian(t, x), dtype=float)), 0
    return numerical_jacobian(problem.f, t, x, f0, problem.typical_scale), problem.n


def initial_derivative(problem: IvpProblem, t=None, x=None, tol: float = CONSISTENCY_TOL,
                       fun=None):
    """x'(t) consistent with M x' = f(t, x) (and, for DAEs, the differentiated constraints).

    ``fun`` replaces ``problem.f`` for the evaluations (e.g. a counting wrapper).
    """
    fun = problem.f if fun is None else fun
    t = problem.t_span[0] if t is None else t
    x = problem.x0 if x is None else np.asarray(x, dtype=float)
    f = fun(t, x)
    if problem.mass is None:
        return f
    alg = problem.algebraic
    if not np.any(alg):
        return np.linalg.solve(problem.mass, f)
    g = f[alg]
    g_norm = float(np.max(np.abs(g)))
    if g_norm > tol:
        raise InconsistentInitialConditionsError(g_norm, tol)
    J, _ = _jacobian(problem, t, x, f)
    dt = EPS ** (1 / 3) * max(1.0, abs(t))
    g_t = (fun(t + dt, x)[alg] - fun(t - dt, x)[alg]) / (2 * dt)
    lhs = np.vstack([problem.mass[~alg], J[alg]])
    rhs = np.concatenate([f[~alg], -g_t])
    if np.linalg.cond(lhs) > 1e12:
        raise NotIndexOneError("constraint Jacobian is singular; the DAE is not index one")
    return np.linalg.solve(lhs, rhs)


class ImplicitStageSolver:
    """Owns the Jacobian, the factored iteration matrix and Newton statistics."""

    def __init__(self, problem: IvpProblem, kappa: float = KAPPA,
                 max_iter: int = MAX_NEWTON_ITER, max_age: int = MAX_FACTOR_AGE,
                 always_refactor: bool = False):
        self.problem = problem
        self.M = problem.mass_matrix
        self.kappa = kappa
        self.max_iter = max_iter
        self.max_age = max_age
        self.always_refactor = always_refactor
        self.J = None
        self.itmat: IterationMatrix | None = None
        self.jacobian_stale = True
        self.eta = None
        self.nfev = 0
        self.njev = 0
        self.nlu = 0
        self.newton_iterations = 0

    def f(self, t, x):
        self.nfev += 1
        return self.problem.f(t, x)

    def refresh_jacobian(self, t, x):
        self.J, extra = _jacobian(self.problem, t, x)
        self.nfev += extra
        self.njev += 1
        self.jacobian_stale = False
        self.itmat = None

    def factor(self, t, h, gamma):
        lu = lu_factor(self.M - h * gamma * self.J, check_finite=False)
        self.itmat = IterationMatrix(lu, h, t, gamma)
        self.nlu += 1
        self.eta = None

    def prepare(self, t, x, h, gamma):
        """Ensure J and an iteration matrix suitable for step size h exist."""
        if self.J is None or self.jacobian_stale:
            self.refresh_jacobian(t, x)
        if (self.itmat is None or self.always_refactor or self.itmat.gamma != gamma
                or self.itmat.needs_refactor(h, self.max_age)):
            self.factor(t, h, gamma)
        else:
            self.itmat.age += 1

    def invalidate(self, jacobian: bool = True):
        """Force a refactorisation (and optionally a new Jacobian) before the next stage."""
        self.itmat = None
        if jacobian:
            self.jacobian_stale = True

    def solve_stage(self, t_i, psi, h, gamma, x_guess, scale):
        """Newton-solve one implicit stage; returns (X, K, NewtonReport).

        ``scale`` holds the per-component weights atol + rtol |x|; the
        iteration stops when the rate-corrected displacement is below kappa
        in that weighted RMS norm.
        """
        itmat = self.itmat
        X = np.array(x_guess, dtype=float)
        hg = h * gamma
        eta = None if self.eta is None else max(max(self.eta, EPS) ** 0.8, CARRIED_RATE_FLOOR)
        prev = None
        rate = 0.0
        dnorm = np.inf
        for it in range(1, self.max_iter + 1):
            F = self.M @ (X - psi) - hg * self.f(t_i, X)
            dX = -itmat.solve(F)
            self.newton_iterations += 1
            dnorm = rms(dX / scale)
            if not np.isfinite(dnorm):
                self._on_failure(rate)
                return X, None, NewtonReport(it, False, rate, dnorm, "non-finite iterate")
            at_roundoff = np.all(np.abs(dX) <= ROUNDOFF_UNITS * EPS * (np.abs(X) + np.abs(psi)))
            X = X + dX
            if at_roundoff:
                dnorm = 0.0
            elif prev is not None:
                rate = min(dnorm / prev, 2.0) if prev > 0 else 0.0
                if rate >= 1.0:
                    self._on_failure(rate)
                    return X, None, NewtonReport(it, False, rate, dnorm, "diverging")
                eta = rate / (1.0 - rate)
            if dnorm == 0.0 or (eta is not None and eta * dnorm <= self.kappa):
                self.eta = eta if eta is not None else 0.0
                if rate > JACOBIAN_REFRESH_RATE:
                    self.jacobian_stale = True
                K = (X - psi) / hg
                return X, K, NewtonReport(it, True, rate, dnorm)
            prev = dnorm
        self._on_failure(rate)
        return X, None, NewtonReport(self.max_iter, False, rate, dnorm, "iteration cap")

    def _on_failure(self, rate):
        self.jacobian_stale = True
        self.itmat = None
        self.eta = None
