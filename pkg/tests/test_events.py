import math

import numpy as np
import pytest

from esdirk.dense_output import default_extension
from esdirk.errors import UnsupportedMethodError
from esdirk.events import restart_after_event, scan_segment
from esdirk.integrator import Controls, DenseSegment, solve
from esdirk.ivp import EventSpec, IvpProblem
from esdirk.problems import get_problem
from esdirk.tableau import builtin


def _drift(guard, direction="any", terminal=False, action=None, x0=0.0, t_end=1.0):
    spec = EventSpec(guard, direction, terminal, action)
    return IvpProblem(lambda t, x: np.array([1.0]), [x0], (0.0, t_end),
                      jacobian=lambda t, x: np.zeros((1, 1)), events=(spec,))


def _ramp_segment(x0=-0.5, h=1.0):
    # x' = 1 on one step: all stage derivatives equal one, the interpolant is exact
    em = default_extension("ESDIRK34")
    return DenseSegment(0.0, h, np.array([x0]), np.ones((em.s, 1)), em)


def test_ramp_root_exact():
    tp = get_problem("ramp_crossing")
    r = solve(builtin("ESDIRK34"), tp.problem, Controls(rtol=1e-6, atol=1e-6))
    assert len(r.events) == 1
    assert abs(r.events[0].t_event - 0.5) <= 1e-10


def test_sine_crossing_time():
    tp = get_problem("sine_crossing")
    r = solve(builtin("ESDIRK34"), tp.problem, Controls(rtol=1e-8, atol=1e-8))
    assert len(r.events) == 1
    assert abs(r.events[0].t_event - math.pi / 6) <= 1e-7


def test_double_crossing_in_one_segment():
    hits = scan_segment(_ramp_segment(0.0), [EventSpec(lambda t, x: (x[0] - 0.3) * (x[0] - 0.6))])
    assert [h.t_event for h in hits] == pytest.approx([0.3, 0.6], abs=1e-10)


def test_double_crossing_problem():
    tp = get_problem("double_crossing")
    r = solve(builtin("ESDIRK34"), tp.problem, Controls(rtol=1e-6, atol=1e-6))
    np.testing.assert_allclose([e.t_event for e in r.events], [0.3, 0.6], atol=1e-10)


def test_no_sign_change_no_events():
    assert scan_segment(_ramp_segment(), [EventSpec(lambda t, x: x[0] + 10.0)]) == []


def test_direction_filter():
    seg = _ramp_segment()
    assert len(scan_segment(seg, [EventSpec(lambda t, x: x[0], "up")])) == 1
    assert scan_segment(seg, [EventSpec(lambda t, x: x[0], "down")]) == []
    assert len(scan_segment(seg, [EventSpec(lambda t, x: -x[0], "down")])) == 1


def test_zero_at_segment_start_is_not_a_crossing():
    seg = _ramp_segment(0.0)
    assert scan_segment(seg, [EventSpec(lambda t, x: x[0])]) == []


def test_reported_point_is_past_the_crossing():
    # the returned state lies where the guard has already changed sign (or vanished)
    seg = _ramp_segment(-1.0 / 3.0)
    for direction, sign in (("up", 1.0), ("down", -1.0)):
        spec = EventSpec(lambda t, x, s=sign: s * (x[0] - 0.1) * (1 + x[0] ** 2), direction)
        hit, = scan_segment(seg, [spec])
        assert sign * hit.guard_value >= 0.0
        assert hit.t_event == pytest.approx(0.1 + 1 / 3, abs=1e-10)


def test_bouncing_ball_impacts():
    tp = get_problem("bouncing_ball")
    r = solve(builtin("ESDIRK34"), tp.problem, Controls(rtol=1e-8, atol=1e-8))
    got = [e.t_event for e in r.events]
    assert len(got) == len(tp.event_times) >= 5
    np.testing.assert_allclose(got, tp.event_times, atol=1e-6)
    assert r.stats.fsal_restarts == len(got)
    assert r.stats.n_events == len(got)


def test_terminal_event_stops_integration():
    pr = _drift(lambda t, x: x[0] - 0.25, terminal=True)
    r = solve(builtin("ESDIRK23"), pr, Controls(rtol=1e-6, atol=1e-6))
    assert r.status == "event"
    assert r.t[-1] == pytest.approx(0.25, abs=1e-10)
    assert r.stats.fsal_restarts == 0


def test_action_applied_at_event():
    pr = _drift(lambda t, x: x[0] - 0.5, action=lambda t, x: x - 1.0)
    r = solve(builtin("ESDIRK34"), pr, Controls(rtol=1e-8, atol=1e-8))
    assert r.stats.fsal_restarts == 1
    assert r.x[-1, 0] == pytest.approx(0.0, abs=1e-9)


def test_restart_recomputes_first_stage_derivative():
    pr = IvpProblem(lambda t, x: np.array([-2.0 * x[0]]), [1.0], (0.0, 1.0),
                    events=(EventSpec(lambda t, x: x[0], action=lambda t, x: x + 3.0),))
    seg = _ramp_segment()
    hits = scan_segment(seg, pr.events)
    t, x, K1 = restart_after_event(pr, hits, pr.events)
    assert t == pytest.approx(0.5)
    np.testing.assert_allclose(K1, -2.0 * x)
    assert x[0] == pytest.approx(3.0, abs=1e-9)


@pytest.mark.parametrize("name", ["ESDIRK32c", "ESDIRK45c"])
def test_methods_without_event_safe_extension_refused(name):
    tp = get_problem("ramp_crossing")
    with pytest.raises(UnsupportedMethodError):
        solve(builtin(name), tp.problem, Controls(allow_uncertain_estimator=True))


def test_segment_not_event_safe_refused():
    em = default_extension("ESDIRK34")
    seg = DenseSegment(0.0, 1.0, np.array([-0.5]), np.ones((em.s, 1)), em, event_safe=False)
    with pytest.raises(UnsupportedMethodError):
        scan_segment(seg, [EventSpec(lambda t, x: x[0])])


def test_tighter_tolerance_locates_more_accurately():
    tp = get_problem("sine_crossing")
    errs = [abs(solve(builtin("ESDIRK34"), tp.problem,
                      Controls(rtol=tol, atol=tol)).events[0].t_event - math.pi / 6)
            for tol in (1e-4, 1e-6, 1e-8)]
    assert errs[2] < errs[0]
    assert errs[2] <= 1e-7


def test_invalid_direction():
    with pytest.raises(ValueError):
        EventSpec(lambda t, x: x[0], "sideways")
