import math

import numpy as np
import pytest

from esdirk.dense_output import (EXTENSION_CATALOG, builtin_extension, condition_residuals,
                                 default_extension, derivative_match, endpoint_b, endpoint_bhat,
                                 eval_extension, eval_extension_derivative, expected_derivation,
                                 psi_bar, solve_extension, stage_match, variants_for)
from esdirk.errors import InfeasibleError, OutOfRangeError, UnknownExtensionError
from esdirk.integrator import Controls, step
from esdirk.problems import get_problem, van_der_pol
from esdirk.stage_solver import ImplicitStageSolver, initial_derivative
from esdirk.tableau import builtin

TIGHT = Controls(rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("key", EXTENSION_CATALOG, ids=lambda k: f"{k[0]}/{k[1]}")
def test_catalog_satisfies_its_conditions(key):
    name, variant = key
    em = builtin_extension(name, variant)
    res = condition_residuals(builtin(name), em)
    assert max(res.values()) <= 1e-10, res
    assert em.solution_mode == "stored_from_paper"


@pytest.mark.parametrize("key", EXTENSION_CATALOG, ids=lambda k: f"{k[0]}/{k[1]}")
def test_catalog_re_derivation(key):
    name, variant = key
    mode = expected_derivation(name, variant)
    if mode == "stored_only":
        pytest.skip("curvature-minimising variant is stored, not re-derived")
    em = builtin_extension(name, variant)
    fresh = solve_extension(builtin(name), em.q, em.side_conditions)
    assert fresh.solution_mode == mode
    tol = 1e-10 if mode == "unique" else 1e-8
    np.testing.assert_allclose(fresh.b_bar, em.b_bar, atol=tol)


def test_psi_bar_rows():
    t = builtin("ESDIRK23")
    P = psi_bar(t)
    assert P.shape == (8, 3)
    np.testing.assert_array_equal(P[0], np.ones(3))
    np.testing.assert_allclose(P[1], t.c)
    np.testing.assert_allclose(P[3], t.A @ t.c)


def test_endpoint_reproduces_weights():
    for name, variant in EXTENSION_CATALOG:
        em = builtin_extension(name, variant)
        if any(c.kind == "endpoint_b" for c in em.side_conditions):
            np.testing.assert_allclose(em.weights(1.0), builtin(name).b, atol=1e-10)
        np.testing.assert_array_equal(em.weights(0.0), np.zeros(em.s))


def test_unique_order2_esdirk12():
    em = solve_extension(builtin("ESDIRK12"), 2)
    assert em.solution_mode == "unique"
    np.testing.assert_allclose(em.b_bar, [[1.0, -0.5], [0.0, 0.5]], atol=1e-14)


def test_min_norm_mode_reported():
    em = solve_extension(builtin("ESDIRK34"), 3, (endpoint_b(),))
    assert em.solution_mode == "min_norm"
    assert em.rank < em.s * em.q


@pytest.mark.parametrize("name, q, conds", [
    ("ESDIRK34", 2, (stage_match(2), stage_match(3), stage_match(4))),
    ("ESDIRK34", 3, (stage_match(2), stage_match(4))),
    ("ESDIRK34", 3, (stage_match(3), stage_match(4))),
    ("ESDIRK34", 4, ()),
    ("ESDIRK23", 3, (endpoint_b(),)),
    ("ESDIRK43b", 3, (endpoint_b(), stage_match(2))),
    ("ESDIRK43b", 3, (endpoint_bhat(), stage_match(3))),
])
def test_infeasible_systems(name, q, conds):
    with pytest.raises(InfeasibleError) as exc:
        solve_extension(builtin(name), q, conds)
    assert exc.value.block is not None
    assert exc.value.residual > 1e-9


def test_order_range_and_side_condition_validation():
    with pytest.raises(ValueError):
        solve_extension(builtin("ESDIRK34"), 5)
    with pytest.raises(ValueError):
        stage_match(1)


def test_unknown_extension_lists_catalog():
    with pytest.raises(UnknownExtensionError) as exc:
        builtin_extension("ESDIRK34", "o9")
    assert "ESDIRK34/o3_deriv" in str(exc.value)
    with pytest.raises(UnknownExtensionError):
        builtin_extension("nope", "o1")


def test_defaults():
    assert default_extension("ESDIRK34").variant == "o3_deriv"
    assert default_extension("ESDIRK32c") is None
    assert default_extension("ESDIRK45c") is None
    assert set(variants_for("ESDIRK34")) == {"o2_24", "o2_34", "o3_minnorm", "o3_mincurv",
                                             "o3_deriv"}


def _one_vdp_step(name, h=0.05):
    tp = van_der_pol(10.0, 1.0, "vdp10")
    pr = tp.problem
    t = builtin(name)
    rec = step(t, pr, 0.0, pr.x0, h, initial_derivative(pr), ImplicitStageSolver(pr), TIGHT)
    return t, rec


def test_interpolant_endpoints_on_a_real_step():
    t, rec = _one_vdp_step("ESDIRK34")
    em = builtin_extension("ESDIRK34", "o3_deriv")
    np.testing.assert_array_equal(eval_extension(em, rec.x, rec.h, rec.K, 0.0), rec.x)
    np.testing.assert_allclose(eval_extension(em, rec.x, rec.h, rec.K, 1.0), rec.x_next,
                               atol=1e-12)
    # derivative matching at the last stage: slope at theta = 1 equals K4
    np.testing.assert_allclose(eval_extension_derivative(em, rec.K, 1.0), rec.K[3], atol=1e-9)


def test_stage_matching_interpolant():
    t, rec = _one_vdp_step("ESDIRK23")
    em = builtin_extension("ESDIRK23", "o2")
    th = t.c[1]
    np.testing.assert_allclose(eval_extension(em, rec.x, rec.h, rec.K, th), rec.X[1],
                               atol=1e-12)


def test_weight_derivative_matches_finite_difference():
    em = builtin_extension("ESDIRK43b", "o3_deriv")
    for th in (0.1, 0.5, 0.9):
        fd = (em.weights(th + 1e-6) - em.weights(th - 1e-6)) / 2e-6
        np.testing.assert_allclose(em.weights_derivative(th), fd, atol=1e-8)


def test_theta_outside_unit_interval_refused():
    t, rec = _one_vdp_step("ESDIRK34")
    em = builtin_extension("ESDIRK34", "o3_deriv")
    for th in (-1e-3, 1.0 + 1e-12):
        with pytest.raises(OutOfRangeError):
            eval_extension(em, rec.x, rec.h, rec.K, th)
        with pytest.raises(OutOfRangeError):
            eval_extension_derivative(em, rec.K, th)


@pytest.mark.parametrize("name, variant", [
    ("ESDIRK12", "o1"), ("ESDIRK12", "o2"), ("ESDIRK23", "o2"), ("ESDIRK23", "o3"),
    ("ESDIRK34", "o2_24"), ("ESDIRK34", "o3_deriv"), ("ESDIRK34", "o3_mincurv"),
    ("ESDIRK32a", "o3_deriv"), ("ESDIRK32b", "o2"), ("ESDIRK43b", "o3_deriv"),
])
def test_local_interpolation_order(name, variant):
    t = builtin(name)
    em = builtin_extension(name, variant)
    pr = get_problem("linear").problem
    errs = []
    for k in range(4):
        h = 0.2 / 2 ** k
        x0 = np.array([1.0])
        rec = step(t, pr, 0.0, x0, h, -x0, ImplicitStageSolver(pr), TIGHT)
        errs.append(max(abs(eval_extension(em, x0, h, rec.K, th)[0] - math.exp(-th * h))
                        for th in np.linspace(0, 1, 21)))
    order = math.log2(errs[-2] / errs[-1])
    assert abs(order - (em.q + 1)) <= 0.3


def test_side_condition_labels():
    assert str(stage_match(3)) == "stage_match(3)"
    assert str(derivative_match(4)) == "derivative_match(4)"
