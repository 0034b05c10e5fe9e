"""Zero-crossing location on dense-output segments and restart after events.

Guards are sampled at equally spaced theta in [0, 1]; every sign change that
matches the requested direction is refined on theta by an Illinois
(modified regula falsi) iteration with a bisection safeguard. The reported
point is the end of the final bracket that lies past the crossing, so the
guard has already changed sign (or vanished) at the returned state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedMethodError
from .stage_solver import initial_derivative

N_SAMPLES = 9
T_RTOL = 1e-10
GUARD_RTOL = 1e-12
MAX_REFINE = 200


@dataclass(frozen=True, eq=False)
class EventHit:
    t_event: float
    x_event: np.ndarray
    spec_index: int
    iterations: int
    theta: float
    guard_value: float


def _crossing(g_left, g_right, direction):
    """Sign pattern test for a crossing in (left, right]; a zero at left never counts."""
    if g_left == 0.0:
        return False
    if g_right == 0.0:
        rising = g_left < 0.0
    elif (g_left < 0.0) != (g_right < 0.0):
        rising = g_left < 0.0
    else:
        return False
    return direction == "any" or (direction == "up") == rising


def _refine(fun, a, fa, b, fb, t_tol_theta, guard_tol):
    """Illinois iteration on [a, b] with fa * fb < 0 (or fb == 0)."""
    it = 0
    side = 0
    while it < MAX_REFINE and fb != 0.0:
        if b - a <= t_tol_theta or abs(fb) <= guard_tol:
            break
        it += 1
        m = b - fb * (b - a) / (fb - fa)
        if not a < m < b or it % 4 == 0:
            m = 0.5 * (a + b)  # bisection safeguard
        fm = fun(m)
        if fm == 0.0 or (fm < 0.0) == (fb < 0.0):
            b, fb = m, fm
            if side == +1:
                fa *= 0.5
            side = +1
        else:
            a, fa = m, fm
            if side == -1:
                fb *= 0.5
            side = -1
    return b, it


def scan_segment(segment, specs, n_samples: int = N_SAMPLES):
    """All guard crossings inside one dense segment, sorted by time."""
    ext = segment.extension
    if ext is None or not segment.event_safe:
        raise UnsupportedMethodError("event location needs an event-safe continuous extension")
    if ext.q < 1:
        raise UnsupportedMethodError("continuous extension of order >= 1 required")
    thetas = np.linspace(0.0, segment.theta_end, n_samples)
    states = [segment.at_theta(th) for th in thetas]
    hits = []
    for idx, spec in enumerate(specs):
        def g(theta, _spec=spec):
            return float(_spec.guard(segment.t + theta * segment.h, segment.at_theta(theta)))

        vals = [float(spec.guard(segment.t + th * segment.h, x)) for th, x in zip(thetas, states)]
        scale = max(1.0, max(abs(v) for v in vals))
        t_ref = max(1.0, abs(segment.t))
        t_tol_theta = T_RTOL * t_ref / abs(segment.h)
        for j in range(n_samples - 1):
            if not _crossing(vals[j], vals[j + 1], spec.direction):
                continue
            theta, its = _refine(g, thetas[j], vals[j], thetas[j + 1], vals[j + 1],
                                 t_tol_theta, GUARD_RTOL * scale)
            x = segment.at_theta(theta)
            hits.append(EventHit(segment.t + theta * segment.h, x, idx, its, theta,
                                 float(spec.guard(segment.t + theta * segment.h, x))))
    hits.sort(key=lambda hit: (hit.t_event, hit.spec_index))
    return hits


def restart_after_event(problem, hits, specs, fun=None):
    """Apply event actions and return (t, x, K1) to resume integration.

    The first-stage derivative is recomputed because the right-hand side may be
    discontinuous across the event; DAE states must remain consistent.
    """
    t = hits[0].t_event
    x = np.array(hits[0].x_event, dtype=float)
    for hit in hits:
        action = specs[hit.spec_index].action
        if action is not None:
            x = np.asarray(action(t, x), dtype=float)
    return t, x, initial_derivative(problem, t, x, fun=fun)
