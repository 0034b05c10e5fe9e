"""Linear stability analysis of ESDIRK tableaus.

The numerator of R(z) = det(I - zA + z e w') / det(I - zA) is recovered by
evaluating the determinant at s + 1 real points and interpolating; the
denominator is (1 - gamma z)^(s-1) by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateTableauError

TRUNCATION_RTOL = 1e-11
A_SCAN_TOL = 1e-9


@dataclass(frozen=True)
class StabilityFunction:
    p_coeffs: np.ndarray
    q_coeffs: np.ndarray
    r_inf: float

    @property
    def deg_p(self) -> int:
        return _degree(self.p_coeffs)

    @property
    def deg_q(self) -> int:
        return _degree(self.q_coeffs)

    def __call__(self, z):
        z = np.asarray(z)
        return np.polynomial.polynomial.polyval(z, self.p_coeffs) / \
            np.polynomial.polynomial.polyval(z, self.q_coeffs)


def _degree(coeffs):
    nz = np.flatnonzero(coeffs)
    return int(nz[-1]) if nz.size else -1


def default_sample_points(n: int) -> np.ndarray:
    """0, 1/2, -1/2, 1, -1, 2, -2, 4, -4, ... truncated to n points."""
    pts = [0.0]
    mag = 0.5
    while len(pts) < n:
        pts += [mag, -mag]
        mag *= 2
    return np.array(pts[:n])


def _divided_differences_to_monomial(x, y):
    x = np.asarray(x, dtype=float)
    coef = np.array(y, dtype=float)
    n = len(x)
    for j in range(1, n):
        coef[j:] = (coef[j:] - coef[j - 1:-1]) / (x[j:] - x[: n - j])
    # expand the Newton form by Horner on polynomials
    poly = np.zeros(n)
    poly[0] = coef[-1]
    for k in range(n - 2, -1, -1):
        shifted = np.zeros(n)
        shifted[1:] = poly[:-1]
        poly = shifted - x[k] * poly
        poly[0] += coef[k]
    return poly


def _truncate(coeffs, rtol=TRUNCATION_RTOL):
    out = np.array(coeffs, dtype=float)
    scale = np.max(np.abs(out)) if out.size else 0.0
    out[np.abs(out) < rtol * scale] = 0.0
    return out


def stability_function(t, weights=None, sample_points=None) -> StabilityFunction:
    w = t.b if weights is None else np.asarray(weights, dtype=float)
    s = t.s
    A = t.A
    e = np.ones(s)
    pts = default_sample_points(s + 1) if sample_points is None else np.asarray(sample_points)
    if len(pts) != s + 1:
        raise ValueError(f"need exactly {s + 1} sample points")
    vals = [np.linalg.det(np.eye(s) - z * A + z * np.outer(e, w)) for z in pts]
    P = _truncate(_divided_differences_to_monomial(pts, vals))
    Q = np.array([math.comb(s - 1, k) * (-t.gamma) ** k for k in range(s)])
    dp, dq = _degree(P), _degree(Q)
    if dp < dq:
        r_inf = 0.0
    elif dp > dq:
        r_inf = math.inf
    else:
        r_inf = abs(P[dp] / Q[dq])
    return StabilityFunction(P, Q, r_inf)


def r_infinity_stiffly_accurate(t, weights=None) -> float:
    """Signed R(inf) for weights equal to a row of A with c = 1.

    Uses the leading k x k block of A for the stiffly accurate stage k.
    """
    w = t.b if weights is None else np.asarray(weights, dtype=float)
    k = t.stiffly_accurate_stage(w)
    if k is None:
        raise ValueError(f"weights are not stiffly accurate for {t.name}")
    if k == 0:
        raise DegenerateTableauError("stiffly accurate stage is the explicit first stage")
    A_t = t.A[1:k + 1, 1:k + 1]
    a_t = t.A[1:k + 1, 0]
    if np.any(np.diag(A_t) == 0.0):
        raise DegenerateTableauError("singular stage block (gamma = 0)")
    y = solve_triangular(A_t, a_t, lower=True)
    return float(-y[-1])


def laguerre(n: int, x: float) -> float:
    if not 0 <= n <= 8:
        raise ValueError("laguerre degree must be in 0..8")
    return float(sum((-1) ** j * math.comb(n, j) * x ** j / math.factorial(j)
                     for j in range(n + 1)))


@dataclass(frozen=True)
class ScanReport:
    min_e: float
    min_e_normalized: float
    y_at_min: float
    deg_p: int
    deg_q: int
    a_stable_consistent: bool
    n_samples: int


def _abs2_on_imag_axis(coeffs):
    """Coefficients (in y) of |p(iy)|^2 for real coefficients p."""
    n = len(coeffs)
    re = np.zeros(n)
    im = np.zeros(n)
    for k, a in enumerate(coeffs):
        unit = (1, 1, -1, -1)[k % 4]
        if k % 2 == 0:
            re[k] = unit * a
        else:
            im[k] = unit * a
    P = np.polynomial.polynomial
    return P.polyadd(P.polymul(re, re), P.polymul(im, im))


def a_stability_scan(sf: StabilityFunction, n_samples: int = 400) -> ScanReport:
    """Boundary test E(y) = |Q(iy)|^2 - |P(iy)|^2 >= 0 on log-spaced y plus y = 0.

    E is assembled as a polynomial in y and small coefficients are zeroed
    before evaluation. The verdict uses E / |Q(iy)|^2 = 1 - |R(iy)|^2 so the
    test is scale free; a necessary condition only.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    P = np.polynomial.polynomial
    E = P.polysub(_abs2_on_imag_axis(sf.q_coeffs), _abs2_on_imag_axis(sf.p_coeffs))
    E = _truncate(E)
    y = np.concatenate(([0.0], np.logspace(-3, 6, n_samples)))
    e_vals = P.polyval(y, E)
    q2 = P.polyval(y, _abs2_on_imag_axis(sf.q_coeffs))
    normalized = e_vals / q2
    i = int(np.argmin(normalized))
    ok = normalized[i] >= -A_SCAN_TOL and sf.deg_p <= sf.deg_q
    return ScanReport(float(np.min(e_vals)), float(normalized[i]), float(y[i]),
                      sf.deg_p, sf.deg_q, bool(ok), n_samples)
