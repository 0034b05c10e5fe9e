"""Test problems with analytic or tight-tolerance numerical references."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ivp import EventSpec, IvpProblem

BASELINE_RTOL = 1e-11
BASELINE_ATOL = 1e-13
GRAVITY = 9.81
RESTITUTION = 0.9


@dataclass(frozen=True, eq=False)
class TestProblem:
    __test__ = False  # not a pytest class

    name: str
    problem: IvpProblem
    exact: Callable[[float], np.ndarray] | None = None
    exact_dot: Callable[[float], np.ndarray] | None = None
    stiff: bool = False
    notes: str = ""
    event_times: tuple[float, ...] = ()
    baseline_atol: float = BASELINE_ATOL
    # DAE only: maps the differential variables to the full state (for the baseline)
    complete_state: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def has_analytic(self) -> bool:
        return self.exact is not None

    def reference(self, t) -> np.ndarray:
        """Reference state at t (analytic when available, numerical baseline otherwise)."""
        if self.exact is not None:
            return np.asarray(self.exact(t), dtype=float)
        return _baseline(self.name)(t)

    @property
    def baseline_metadata(self) -> dict:
        return {"solver": "scipy.integrate.solve_ivp(method='Radau')",
                "rtol": BASELINE_RTOL, "atol": self.baseline_atol}


def analytic_residual(tp: TestProblem, n: int = 100) -> float:
    """max |M x'(t) - f(t, x(t))| of the analytic reference over an n-point grid."""
    if tp.exact is None or tp.exact_dot is None:
        raise ValueError(f"{tp.name} has no analytic reference")
    pr = tp.problem
    M = pr.mass_matrix
    worst = 0.0
    for t in np.linspace(*pr.t_span, n):
        r = M @ np.asarray(tp.exact_dot(t)) - pr.f(t, np.asarray(tp.exact(t)))
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def _arr(*v):
    return np.array(v, dtype=float)


def linear(lam: float = -1.0, name: str = "linear", t_end: float = 2.0) -> TestProblem:
    pr = IvpProblem(lambda t, x: lam * x, [1.0], (0.0, t_end),
                    jacobian=lambda t, x: np.array([[lam]]), name=name)
    return TestProblem(name, pr, lambda t: _arr(math.exp(lam * t)),
                       lambda t: _arr(lam * math.exp(lam * t)), stiff=lam < -1e3,
                       notes=f"x' = {lam:g} x")


def forced() -> TestProblem:
    c = 1.5  # x0 = 1
    pr = IvpProblem(lambda t, x: -x + math.sin(t), [1.0], (0.0, 2.0),
                    jacobian=lambda t, x: np.array([[-1.0]]), name="forced")
    return TestProblem(
        "forced", pr,
        lambda t: _arr(c * math.exp(-t) + (math.sin(t) - math.cos(t)) / 2),
        lambda t: _arr(-c * math.exp(-t) + (math.cos(t) + math.sin(t)) / 2),
        notes="x' = -x + sin t")


def van_der_pol(mu: float, t_end: float, name: str) -> TestProblem:
    def rhs(t, x):
        return _arr(x[1], mu * (1 - x[0] ** 2) * x[1] - x[0])

    def jac(t, x):
        return np.array([[0.0, 1.0],
                         [-2 * mu * x[0] * x[1] - 1.0, mu * (1 - x[0] ** 2)]])

    pr = IvpProblem(rhs, [2.0, 0.0], (0.0, t_end), jacobian=jac, name=name)
    return TestProblem(name, pr, stiff=mu > 10, notes=f"Van der Pol, mu = {mu:g}")


def prothero_robinson(lam: float = -1e6) -> TestProblem:
    pr = IvpProblem(lambda t, x: lam * (x - math.sin(t)) + math.cos(t), [0.0], (0.0, 1.0),
                    jacobian=lambda t, x: np.array([[lam]]), name="prothero_robinson")
    return TestProblem("prothero_robinson", pr, lambda t: _arr(math.sin(t)),
                       lambda t: _arr(math.cos(t)), stiff=True,
                       notes=f"x' = lambda (x - sin t) + cos t, lambda = {lam:g}")


def robertson() -> TestProblem:
    def rhs(t, x):
        return _arr(-0.04 * x[0] + 1e4 * x[1] * x[2],
                    0.04 * x[0] - 1e4 * x[1] * x[2] - 3e7 * x[1] ** 2,
                    x[0] + x[1] + x[2] - 1.0)

    def jac(t, x):
        return np.array([[-0.04, 1e4 * x[2], 1e4 * x[1]],
                         [0.04, -1e4 * x[2] - 6e7 * x[1], -1e4 * x[1]],
                         [1.0, 1.0, 1.0]])

    pr = IvpProblem(rhs, [1.0, 0.0, 0.0], (0.0, 1e4), jacobian=jac,
                    mass=np.diag([1.0, 1.0, 0.0]), name="robertson")

    def complete(y):
        y = np.asarray(y, dtype=float)
        return np.concatenate([y, [1.0 - y[0] - y[1]]], axis=0)

    return TestProblem("robertson", pr, stiff=True, baseline_atol=1e-14,
                       notes="Robertson kinetics, conservation row x1 + x2 + x3 = 1",
                       complete_state=complete)


def algebraic_square() -> TestProblem:
    pr = IvpProblem(lambda t, x: _arr(-x[0], x[1] - x[0] ** 2), [1.0, 1.0], (0.0, 2.0),
                    jacobian=lambda t, x: np.array([[-1.0, 0.0], [-2 * x[0], 1.0]]),
                    mass=np.diag([1.0, 0.0]), name="algebraic_square")
    return TestProblem("algebraic_square", pr,
                       lambda t: _arr(math.exp(-t), math.exp(-2 * t)),
                       lambda t: _arr(-math.exp(-t), -2 * math.exp(-2 * t)),
                       notes="x' = -x, 0 = y - x^2")


def bounce_times(h0: float = 1.0, g: float = GRAVITY, e: float = RESTITUTION,
                 t_end: float = 3.5) -> tuple[float, ...]:
    """Impact times of a ball dropped from rest at height h0."""
    t = math.sqrt(2 * h0 / g)
    v = math.sqrt(2 * g * h0)
    out = []
    while t <= t_end:
        out.append(t)
        v *= e
        t += 2 * v / g
    return tuple(out)


def bouncing_ball(t_end: float = 3.5) -> TestProblem:
    impact = EventSpec(lambda t, x: x[0], "down", False,
                       lambda t, x: _arr(x[0], -RESTITUTION * x[1]), name="impact")
    pr = IvpProblem(lambda t, x: _arr(x[1], -GRAVITY), [1.0, 0.0], (0.0, t_end),
                    jacobian=lambda t, x: np.array([[0.0, 1.0], [0.0, 0.0]]),
                    events=(impact,), name="bouncing_ball")
    times = bounce_times(t_end=t_end)

    def exact(t):
        t_prev, x_prev, v = 0.0, 1.0, 0.0
        for k, tb in enumerate(times):
            if t < tb:
                break
            t_prev, x_prev, v = tb, 0.0, math.sqrt(2 * GRAVITY) * RESTITUTION ** (k + 1)
        dt = t - t_prev
        return _arr(x_prev + v * dt - GRAVITY * dt * dt / 2, v - GRAVITY * dt)

    return TestProblem("bouncing_ball", pr, exact, lambda t: _arr(exact(t)[1], -GRAVITY),
                       event_times=times, notes="x'' = -g with impacts v <- -0.9 v")


def _unit_drift(name, x0, guard, direction, times, notes, rhs=None, exact=None, exact_dot=None):
    rhs = rhs or (lambda t, x: _arr(1.0))
    exact = exact or (lambda t: _arr(x0 + t))
    exact_dot = exact_dot or (lambda t: _arr(1.0))
    spec = EventSpec(guard, direction, False, None, name=name)
    pr = IvpProblem(rhs, [x0], (0.0, 1.0), jacobian=lambda t, x: np.zeros((1, 1)),
                    events=(spec,), name=name)
    return TestProblem(name, pr, exact, exact_dot, event_times=times, notes=notes)


def ramp_crossing() -> TestProblem:
    return _unit_drift("ramp_crossing", -0.5, lambda t, x: x[0], "any", (0.5,),
                       "x' = 1, x0 = -0.5, guard x")


def double_crossing() -> TestProblem:
    return _unit_drift("double_crossing", 0.0, lambda t, x: (x[0] - 0.3) * (x[0] - 0.6),
                       "any", (0.3, 0.6), "x' = 1, guard (x - 0.3)(x - 0.6) crosses twice")


def sine_crossing() -> TestProblem:
    return _unit_drift("sine_crossing", 0.0, lambda t, x: x[0] - 0.5, "up", (math.pi / 6,),
                       "x' = cos t, guard x - 1/2",
                       rhs=lambda t, x: _arr(math.cos(t)),
                       exact=lambda t: _arr(math.sin(t)),
                       exact_dot=lambda t: _arr(math.cos(t)))


_FACTORIES = {
    "linear": lambda: linear(-1.0, "linear"),
    "linear_stiff": lambda: linear(-1e6, "linear_stiff", 1.0),
    "forced": forced,
    "vdp1": lambda: van_der_pol(1.0, 20.0, "vdp1"),
    "vdp1000": lambda: van_der_pol(1000.0, 3000.0, "vdp1000"),
    "prothero_robinson": prothero_robinson,
    "robertson": robertson,
    "algebraic_square": algebraic_square,
    "bouncing_ball": bouncing_ball,
    "ramp_crossing": ramp_crossing,
    "double_crossing": double_crossing,
    "sine_crossing": sine_crossing,
}

PROBLEM_NAMES = tuple(_FACTORIES)


@functools.cache
def get_problem(name: str) -> TestProblem:
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(PROBLEM_NAMES)}") \
            from None


def corpus() -> list[TestProblem]:
    return [get_problem(name) for name in PROBLEM_NAMES]


@functools.cache
def _baseline(name: str):
    """Dense numerical reference computed once per process with a tight Radau run."""
    from scipy.integrate import solve_ivp

    tp = get_problem(name)
    pr = tp.problem
    if pr.is_dae:
        if tp.complete_state is None:
            raise ValueError(f"{name}: DAE baseline needs complete_state")
        diff = ~pr.algebraic
        x0 = pr.x0[diff]
        sol = solve_ivp(lambda t, y: pr.f(t, tp.complete_state(y))[diff], pr.t_span, x0,
                        method="Radau", rtol=BASELINE_RTOL, atol=tp.baseline_atol,
                        dense_output=True)
    else:
        sol = solve_ivp(pr.f, pr.t_span, pr.x0, method="Radau", rtol=BASELINE_RTOL,
                        atol=tp.baseline_atol, jac=pr.jacobian, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"baseline for {name} failed: {sol.message}")
    if pr.is_dae:
        return lambda t: tp.complete_state(sol.sol(t))
    return lambda t: np.asarray(sol.sol(t), dtype=float)
