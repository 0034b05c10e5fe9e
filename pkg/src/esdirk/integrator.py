"""Adaptive ESDIRK integration: stages, error estimate, step-size control.

One step evaluates the explicit first stage from the cached derivative K_1
(first-same-as-last), solves stages 2..s with the modified Newton solver and
forms

    x_{n+1} = x_n + h sum_j b_j K_j       (= X_k for stiffly accurate b)
    e_{n+1} = h sum_j d_j K_j,            d = b - b_hat.

The lower-order advancing solution is propagated (no local extrapolation),
so the controller exponent uses k = min(p, p_hat) + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dense_output import ExtensionMatrix, default_extension, eval_extension
from .errors import (BudgetExceededError, ConvergenceError, StepSizeUnderflowError,
                     UnknownMethodError, UnsupportedMethodError)
from .ivp import IvpProblem
from .order_conditions import attained_order
from .stage_solver import EPS, ImplicitStageSolver, NewtonReport, initial_derivative, rms
from .tableau import ButcherTableau

NEWTON_FAILURE_CUT = 0.25
ERR_FLOOR = 1e-10


@dataclass(frozen=True)
class Controls:
    rtol: float = 1e-6
    atol: float | np.ndarray = 1e-6
    h_init: float | None = None
    h_min: float = 0.0
    h_max: float = math.inf
    max_steps: int = 100_000
    safety: float = 0.9
    facmin: float = 0.2
    facmax: float = 5.0
    pi_proportional: float = 0.4
    pi_integral: float = 0.3
    kappa: float = 0.03
    newton_max_iter: int = 10
    max_factor_age: int = 50
    always_refactor: bool = False
    allow_uncertain_estimator: bool = False
    extension: ExtensionMatrix | None = None

    def __post_init__(self):
        if not self.rtol >= 1e-14:
            raise ValueError(f"rtol must be >= 1e-14, got {self.rtol}")
        atol = np.asarray(self.atol, dtype=float)
        if not np.all(atol > 0):
            raise ValueError("atol must be positive componentwise")
        if self.h_init is not None and not self.h_init > 0:
            raise ValueError("h_init must be positive")
        if not 0 < self.facmin < 1 < self.facmax or not 0 < self.safety <= 1:
            raise ValueError("controller constants must satisfy 0<facmin<1<facmax, 0<safety<=1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def scale(self, *states) -> np.ndarray:
        mag = np.max(np.abs(np.vstack(states)), axis=0)
        return np.asarray(self.atol, dtype=float) + self.rtol * mag


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: float
    h: float
    x: np.ndarray
    K: np.ndarray | None
    X: np.ndarray | None
    x_next: np.ndarray | None
    error: np.ndarray | None
    err_norm: float
    accepted: bool
    newton: tuple[NewtonReport, ...] = ()
    failure: str = ""

    @property
    def t_next(self) -> float:
        return self.t + self.h


@dataclass(frozen=True, eq=False)
class DenseSegment:
    """Interpolant over one accepted step, optionally truncated at theta_end."""

    t: float
    h: float
    x: np.ndarray
    K: np.ndarray
    extension: ExtensionMatrix
    theta_end: float = 1.0
    event_safe: bool = True

    @property
    def t_end(self) -> float:
        return self.t + self.theta_end * self.h

    def at_theta(self, theta: float) -> np.ndarray:
        return eval_extension(self.extension, self.x, self.h, self.K, theta)

    def __call__(self, t: float) -> np.ndarray:
        theta = (t - self.t) / self.h
        if -1e-12 <= theta < 0.0 or 1.0 < theta <= 1.0 + 1e-12:
            theta = min(max(theta, 0.0), 1.0)  # absorb roundoff at the segment ends
        return self.at_theta(theta)


@dataclass
class SolveStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_error_rejections: int = 0
    n_newton_failures: int = 0
    nfev: int = 0
    njev: int = 0
    n_lu: int = 0
    newton_iterations: int = 0
    fsal_restarts: int = 0
    n_events: int = 0

    @property
    def rejection_fraction(self) -> float:
        total = self.n_steps + self.n_rejected
        return self.n_rejected / total if total else 0.0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["rejection_fraction"] = self.rejection_fraction
        return d


@dataclass(frozen=True, eq=False)
class TrajectoryRow:
    """One output row: an accepted point or a rejected attempt (x = candidate or None)."""

    t: float
    h: float
    err_norm: float
    accepted: bool
    x: np.ndarray | None


@dataclass
class SolveResult:
    method: str
    t: np.ndarray
    x: np.ndarray
    records: list[StepRecord]
    segments: list[DenseSegment]
    stats: SolveStats
    status: str = "finished"
    events: list = field(default_factory=list)
    log: list[TrajectoryRow] = field(default_factory=list)

    @property
    def accepted(self) -> list[StepRecord]:
        return [r for r in self.records if r.accepted]

    def dense(self, t: float) -> np.ndarray:
        """Interpolated state at t using the stored segments."""
        for seg in self.segments:
            if seg.t <= t <= seg.t_end:
                return seg(t)
        raise ValueError(f"t = {t} not covered by dense segments")


def step(t: ButcherTableau, problem: IvpProblem, t_n: float, x_n, h: float, K1,
         solver: ImplicitStageSolver, controls: Controls | None = None,
         with_error: bool = True) -> StepRecord:
    """One ESDIRK step from (t_n, x_n) with cached first-stage derivative K1."""
    controls = controls or Controls()
    x_n = np.asarray(x_n, dtype=float)
    K1 = np.asarray(K1, dtype=float)
    s, n = t.s, x_n.size
    K = np.empty((s, n))
    X = np.empty((s, n))
    K[0] = K1
    X[0] = x_n
    scale = controls.scale(x_n)
    solver.prepare(t_n, x_n, h, t.gamma)
    reports = []
    for i in range(1, s):
        psi = x_n + h * (t.A[i, :i] @ K[:i])
        guess = x_n + h * t.c[i] * K1
        Xi, Ki, rep = solver.solve_stage(t_n + t.c[i] * h, psi, h, t.gamma, guess, scale)
        reports.append(rep)
        if not rep.converged:
            return StepRecord(t_n, h, x_n, None, None, None, None, math.inf, False,
                              tuple(reports), f"newton: {rep.reason} at stage {i + 1}")
        X[i], K[i] = Xi, Ki
    k = t.advancing_stage
    x_next = X[k] if k is not None else x_n + h * (t.b @ K)
    if with_error and t.has_embedded:
        err = h * (t.d @ K)
        if problem.is_dae:
            # Raw algebraic components carry the Newton residual divided by h gamma;
            # filtering through the iteration matrix keeps only the error the
            # constraints inherit from the differential components.
            err = solver.itmat.solve(solver.M @ err)
        err_norm = rms(err / controls.scale(x_next))
    else:
        err, err_norm = None, 0.0
    return StepRecord(t_n, h, x_n, K, X, x_next, err, err_norm, True, tuple(reports))


def _next_first_stage(t: ButcherTableau, rec: StepRecord):
    k = t.advancing_stage
    if k is not None and t.fsal:
        return rec.K[k]
    return None


def _initial_step(problem, solver, t0, x0, K1, tf, order, controls):
    scale = controls.scale(x0)
    d0 = rms(x0 / scale)
    d1 = rms(K1 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, tf - t0)
    x1 = x0 + h0 * K1
    diff = ~problem.algebraic
    f0 = solver.f(t0, x0)
    f1 = solver.f(t0 + h0, x1)
    d2 = rms(((f1 - f0)[diff]) / scale[diff]) / h0 if np.any(diff) else 0.0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / order)
    return min(100 * h0, h1)


def _check_method(t: ButcherTableau, controls: Controls):
    if not t.has_embedded:
        raise UnsupportedMethodError(f"{t.name} has no embedded weights; use solve_fixed")
    if t.embedded_order_uncertain and not controls.allow_uncertain_estimator:
        raise UnsupportedMethodError(
            f"{t.name}: the embedded estimator order is uncertain; adaptive stepping requires "
            "allow_uncertain_estimator=True (fixed-step mode is always available)")


class _Controller:
    """PI step-size controller in the error-per-step form.

    factor = safety * err^-(kI + kP) * err_prev^kP with kI = 0.3/k, kP = 0.4/k;
    the plain factor err^(-1/k) is used on the first step and after a rejection.
    """

    def __init__(self, order: int, controls: Controls):
        self.k = order
        self.c = controls
        self.reset()

    def reset(self):
        self.err_prev = None
        self.after_reject = False

    def accept_factor(self, err: float) -> float:
        c, k = self.c, self.k
        err = max(err, ERR_FLOOR)
        if self.err_prev is None or self.after_reject:
            fac = c.safety * err ** (-1.0 / k)
        else:
            kP, kI = c.pi_proportional / k, c.pi_integral / k
            fac = c.safety * err ** (-(kI + kP)) * self.err_prev ** kP
        facmax = 1.0 if self.after_reject else c.facmax
        self.err_prev = err
        self.after_reject = False
        return min(facmax, max(c.facmin, fac))

    def reject_factor(self, err: float) -> float:
        c = self.c
        self.after_reject = True
        return min(1.0, max(c.facmin, c.safety * max(err, ERR_FLOOR) ** (-1.0 / self.k)))


def _extension_for(t: ButcherTableau, controls: Controls):
    if controls.extension is not None:
        if controls.extension.s != t.s:
            raise ValueError("extension stage count does not match the tableau")
        return controls.extension
    try:
        return default_extension(t.name)
    except UnknownMethodError:
        return None


def solve(t: ButcherTableau, problem: IvpProblem, controls: Controls | None = None,
          keep_rejected: bool = True) -> SolveResult:
    """Adaptive integration over problem.t_span with event handling."""
    from .events import restart_after_event, scan_segment

    controls = controls or Controls()
    _check_method(t, controls)
    extension = _extension_for(t, controls)
    if problem.events and (extension is None or not t.event_safe):
        raise UnsupportedMethodError(
            f"{t.name} has no event-safe continuous extension; event location is unavailable")
    order = min(t.p or attained_order(t, t.b), t.p_hat or attained_order(t, t.b_hat)) + 1
    t0, tf = problem.t_span
    solver = ImplicitStageSolver(problem, controls.kappa, controls.newton_max_iter,
                                 controls.max_factor_age, controls.always_refactor)
    stats = SolveStats()
    tn, xn = t0, problem.x0.copy()
    K1 = initial_derivative(problem, fun=solver.f)
    h = controls.h_init or _initial_step(problem, solver, tn, xn, K1, tf, order, controls)
    h = min(h, controls.h_max, tf - t0)
    ctrl = _Controller(order, controls)
    ts, xs, records, segments, hits, log = [], [], [], [], [], []

    def point(t_p, x_p, h_p, err_p):
        ts.append(t_p)
        xs.append(np.array(x_p, copy=True))
        log.append(TrajectoryRow(t_p, h_p, err_p, True, xs[-1]))

    point(t0, xn, 0.0, 0.0)
    status = "finished"
    span = tf - t0

    while tn < tf:
        if stats.n_steps >= controls.max_steps:
            raise BudgetExceededError(controls.max_steps, tn)
        h_floor = max(controls.h_min, 10 * EPS * max(abs(tn), span))
        if h < h_floor:
            raise StepSizeUnderflowError(tn, h, xn)
        last = tn + 1.01 * h >= tf
        if last:
            h = tf - tn
        rec = step(t, problem, tn, xn, h, K1, solver, controls)
        if not rec.accepted:
            stats.n_newton_failures += 1
            stats.n_rejected += 1
            if keep_rejected:
                records.append(rec)
                log.append(TrajectoryRow(tn + h, h, math.inf, False, None))
            ctrl.after_reject = True
            h *= NEWTON_FAILURE_CUT
            continue
        if rec.err_norm > 1.0:
            stats.n_rejected += 1
            stats.n_error_rejections += 1
            if keep_rejected:
                records.append(StepRecord(rec.t, rec.h, rec.x, rec.K, rec.X, rec.x_next,
                                          rec.error, rec.err_norm, False, rec.newton,
                                          "error test"))
                log.append(TrajectoryRow(tn + h, h, rec.err_norm, False, rec.x_next))
            h *= ctrl.reject_factor(rec.err_norm)
            continue

        records.append(rec)
        stats.n_steps += 1
        t_next = tf if last else tn + h
        x_next = rec.x_next
        seg = None
        if extension is not None:
            seg = DenseSegment(tn, h, xn, rec.K, extension, 1.0, t.event_safe)
        fac = ctrl.accept_factor(rec.err_norm)

        if problem.events:
            found = scan_segment(seg, problem.events)
            if found:
                first = found[0]
                t_tie = first.t_event + 1e-12 * max(1.0, abs(first.t_event))
                same = [hit for hit in found if hit.t_event <= t_tie]
                hits.extend(same)
                stats.n_events += len(same)
                seg = DenseSegment(tn, h, xn, rec.K, extension, first.theta, t.event_safe)
                segments.append(seg)
                point(first.t_event, first.x_event, first.theta * h, rec.err_norm)
                terminal = any(problem.events[hit.spec_index].terminal for hit in same)
                if terminal:
                    status = "event"
                    tn, xn = first.t_event, first.x_event
                    break
                tn, xn, K1 = restart_after_event(problem, same, problem.events, fun=solver.f)
                if not np.array_equal(xn, xs[-1]):
                    point(tn, xn, 0.0, 0.0)
                stats.fsal_restarts += 1
                ctrl.reset()
                solver.invalidate(jacobian=True)
                h = controls.h_init or _initial_step(problem, solver, tn, xn, K1, tf, order,
                                                      controls)
                h = min(h, controls.h_max, tf - tn)
                continue
        if seg is not None:
            segments.append(seg)
        tn, xn = t_next, x_next
        point(tn, xn, h, rec.err_norm)
        nxt = _next_first_stage(t, rec)
        K1 = nxt if nxt is not None else initial_derivative(problem, tn, xn, fun=solver.f)
        h = min(h * fac, controls.h_max)

    stats.nfev += solver.nfev
    stats.njev = solver.njev
    stats.n_lu = solver.nlu
    stats.newton_iterations = solver.newton_iterations
    return SolveResult(t.name, np.array(ts), np.array(xs), records, segments, stats,
                       status, hits, log)


def solve_fixed(t: ButcherTableau, problem: IvpProblem, h: float, n_steps: int,
                controls: Controls | None = None) -> SolveResult:
    """Constant-step integration without error control (any tableau)."""
    controls = controls or Controls()
    t0, tf = problem.t_span
    if n_steps < 1 or not math.isclose(h * n_steps, tf - t0, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"h * n_steps = {h * n_steps} does not span {problem.t_span}")
    solver = ImplicitStageSolver(problem, controls.kappa, controls.newton_max_iter,
                                 controls.max_factor_age, controls.always_refactor)
    extension = _extension_for(t, controls)
    stats = SolveStats()
    xn = problem.x0.copy()
    K1 = initial_derivative(problem, fun=solver.f)
    ts, xs, records, segments = [t0], [xn.copy()], [], []
    for i in range(n_steps):
        tn = t0 + i * h
        rec = step(t, problem, tn, xn, h, K1, solver, controls, with_error=t.has_embedded)
        if not rec.accepted:
            raise ConvergenceError(i, tn, rec.failure)
        records.append(rec)
        if extension is not None:
            segments.append(DenseSegment(tn, h, xn, rec.K, extension, 1.0, t.event_safe))
        stats.n_steps += 1
        xn = rec.x_next
        ts.append(tf if i == n_steps - 1 else t0 + (i + 1) * h)
        xs.append(xn.copy())
        nxt = _next_first_stage(t, rec)
        K1 = nxt if nxt is not None else initial_derivative(problem, ts[-1], xn, fun=solver.f)
    stats.nfev = solver.nfev
    stats.njev = solver.njev
    stats.n_lu = solver.nlu
    stats.newton_iterations = solver.newton_iterations
    return SolveResult(t.name, np.array(ts), np.array(xs), records, segments, stats)
