"""Butcher tableaus for stiffly accurate ESDIRK methods.

The builtin coefficient sets are built from closed forms where one exists
(the gamma-parameterised families and the L-stable diagonal obtained from a
Laguerre root) and from tabulated decimals otherwise.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import laguerre as npl

from .errors import DegenerateTableauError, TableauParseError, UnknownMethodError

ROW_SUM_TOL = 1e-13
STAGE_ORDER_TOL = 1e-13


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    residual: float
    tol: float
    details: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Coefficients of an s-stage method with optional embedded weights.

    ``d`` is always derived as ``b - b_hat``. Arrays are made read-only so a
    tableau can be shared freely.
    """

    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    b_hat: np.ndarray | None = None
    p: int | None = None
    p_hat: int | None = None
    embedded_order_uncertain: bool = False

    def __post_init__(self):
        A = _frozen(self.A)
        s = A.shape[0]
        if A.ndim != 2 or A.shape != (s, s) or s < 2:
            raise ValueError(f"A must be square with s >= 2, got shape {A.shape}")
        b = _frozen(self.b)
        c = _frozen(self.c)
        if b.shape != (s,) or c.shape != (s,):
            raise ValueError("b and c must have length s")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        if self.b_hat is not None:
            b_hat = _frozen(self.b_hat)
            if b_hat.shape != (s,):
                raise ValueError("b_hat must have length s")
            object.__setattr__(self, "b_hat", b_hat)
            object.__setattr__(self, "d", _frozen(b - b_hat))
        else:
            object.__setattr__(self, "d", None)

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def gamma(self) -> float:
        return float(self.A[1, 1])

    @property
    def has_embedded(self) -> bool:
        return self.b_hat is not None

    @property
    def esdirk(self) -> bool:
        A = self.A
        return (A[0, 0] == 0.0 and self.c[0] == 0.0
                and not np.any(np.triu(A, 1))
                and bool(np.all(np.diag(A)[1:] == self.gamma)) and self.gamma != 0.0)

    def stiffly_accurate_stage(self, weights) -> int | None:
        """Index k (0-based) with A[k] == weights, weights[k+1:] == 0 and c[k] == 1."""
        w = np.asarray(weights, dtype=float)
        for k in range(self.s - 1, -1, -1):
            if np.any(w[k + 1:] != 0.0):
                break
            if abs(self.c[k] - 1.0) <= ROW_SUM_TOL and np.array_equal(self.A[k], w):
                return k
        return None

    @property
    def advancing_stage(self) -> int | None:
        return self.stiffly_accurate_stage(self.b)

    @property
    def embedded_stage(self) -> int | None:
        return None if self.b_hat is None else self.stiffly_accurate_stage(self.b_hat)

    @property
    def stiffly_accurate(self) -> bool:
        return self.advancing_stage is not None

    @property
    def fsal(self) -> bool:
        return self.esdirk and self.stiffly_accurate

    @property
    def event_safe(self) -> bool:
        return bool(np.all((self.c >= 0.0) & (self.c <= 1.0)))

    def __repr__(self):
        return f"ButcherTableau({self.name!r}, s={self.s}, gamma={self.gamma:.10g})"


def _frozen(a):
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


def lstable_gamma(n: int, lo: float = 0.0, hi: float = 0.5) -> float:
    """Diagonal entry gamma with L_n(1/gamma) = 0 and gamma in (lo, hi]."""
    roots = npl.lagroots([0.0] * n + [1.0])
    cands = [1.0 / r for r in roots.real if r > 0 and lo < 1.0 / r <= hi]
    if len(cands) != 1:
        raise DegenerateTableauError(f"no unique Laguerre root for n={n} in ({lo}, {hi}]")
    x = 1.0 / cands[0]
    coeffs = [0.0] * n + [1.0]
    dcoeffs = npl.lagder(coeffs)
    for _ in range(3):
        x -= npl.lagval(x, coeffs) / npl.lagval(x, dcoeffs)
    return 1.0 / x


def _esdirk12():
    return ButcherTableau(
        "ESDIRK12",
        A=[[0, 0], [0, 1]],
        b=[0, 1],
        b_hat=[0.5, 0.5],
        c=[0, 1],
        p=1, p_hat=2)


def _esdirk23():
    g = (2 - math.sqrt(2)) / 2
    w = (1 - g) / 2
    return ButcherTableau(
        "ESDIRK23",
        A=[[0, 0, 0], [g, g, 0], [w, w, g]],
        b=[w, w, g],
        b_hat=[(6 * g - 1) / (12 * g),
               1 / (12 * g * (1 - 2 * g)),
               (1 - 3 * g) / (3 * (1 - 2 * g))],
        c=[0, 2 * g, 1],
        p=2, p_hat=3)


# Tabulated with 20 significant digits; parsed from strings to keep the digits.
_E34 = {
    "gamma": "0.43586652150845899942",
    "a31": "0.14073777472470619619",
    "a32": "-0.1083655513813208000",
    "c3": "0.46823874485184439565",
    "b": ("0.10239940061991099768", "-0.3768784522555561061",
          "0.83861253012718610911", "0.43586652150845899942"),
    "b_hat": ("0.15702489786032493710", "0.11733044137043884870",
              "0.61667803039212146434", "0.10896663037711474985"),
}


def _esdirk34():
    g = float(_E34["gamma"])
    a31, a32 = float(_E34["a31"]), float(_E34["a32"])
    b = [float(v) for v in _E34["b"]]
    return ButcherTableau(
        "ESDIRK34",
        A=[[0, 0, 0, 0], [g, g, 0, 0], [a31, a32, g, 0], b],
        b=b,
        b_hat=[float(v) for v in _E34["b_hat"]],
        c=[0, 2 * g, float(_E34["c3"]), 1],
        p=3, p_hat=4)


def _kvaerno32_rows(g):
    """Rows 3 and 4 of the 4-stage family; both are stiffly accurate quadratures."""
    row3 = [(-4 * g * g + 6 * g - 1) / (4 * g), (1 - 2 * g) / (4 * g), g, 0.0]
    row4 = [(6 * g - 1) / (12 * g), -1 / (12 * g * (2 * g - 1)),
            (-6 * g * g + 6 * g - 1) / (3 * (2 * g - 1)), g]
    return row3, row4


def _esdirk32a():
    g = lstable_gamma(3, lo=1 / 3)
    row3, row4 = _kvaerno32_rows(g)
    return ButcherTableau(
        "ESDIRK32a",
        A=[[0, 0, 0, 0], [g, g, 0, 0], row3, row4],
        b=row4, b_hat=row3, c=[0, 2 * g, 1, 1],
        p=3, p_hat=2)


def _esdirk32b():
    g = (2 - math.sqrt(2)) / 2
    row3, row4 = _kvaerno32_rows(g)
    return ButcherTableau(
        "ESDIRK32b",
        A=[[0, 0, 0, 0], [g, g, 0, 0], row3, row4],
        b=row3, b_hat=row4, c=[0, 2 * g, 1, 1],
        p=2, p_hat=3)


def _esdirk43b():
    # transcribed at the printed 14 digits; b_hat[3] keeps its printed sign
    A = [
        [0, 0, 0, 0, 0],
        [0.43586652150846, 0.43586652150846, 0, 0, 0],
        [0.14073777472471, -0.10836555138132, 0.43586652150846, 0, 0],
        [0.10239940061991, -0.37687845225556, 0.83861253012719, 0.43586652150846, 0],
        [0.15702489786032, 0.11733044137044, 0.61667803039212, -0.32689989113134,
         0.43586652150846],
    ]
    return ButcherTableau(
        "ESDIRK43b",
        A=A, b=A[3], b_hat=A[4],
        c=[0, 0.87173304301692, 0.46823874485185, 1, 1],
        p=3, p_hat=4)


def _esdirk32c():
    F = Fraction
    A = [[0, 0, 0, 0],
         [F(1, 2), F(1, 2), 0, 0],
         [F(5, 8), F(3, 8), F(1, 2), 0],
         [F(7, 18), F(1, 3), F(-2, 9), F(1, 2)]]
    A = [[float(v) for v in row] for row in A]
    return ButcherTableau(
        "ESDIRK32c",
        A=A, b=A[3], b_hat=[0.5, 0.5, 0, 0], c=[0, 1, 1.5, 1],
        p=3, p_hat=2)


def _esdirk45c():
    F = Fraction
    A = [[0] * 6,
         [F(1, 4), F(1, 4), 0, 0, 0, 0],
         [F(1, 16), F(-1, 16), F(1, 4), 0, 0, 0],
         [F(-7, 36), F(-4, 9), F(8, 9), F(1, 4), 0, 0],
         [F(-5, 48), F(-257, 768), F(5, 6), F(27, 256), F(1, 4), 0],
         [F(1, 4), F(2, 3), F(-1, 3), F(1, 2), F(-1, 3), F(1, 4)]]
    A = [[float(v) for v in row] for row in A]
    # The second weight row sums to one: it is the estimator quadrature itself.
    b_hat = [float(F(*r)) for r in ((7, 90), (3, 20), (16, 45), (-1, 60), (16, 45), (7, 90))]
    return ButcherTableau(
        "ESDIRK45c",
        A=A, b=A[5], b_hat=b_hat, c=[0, 0.5, 0.25, 0.5, 0.75, 1],
        p=4, p_hat=5, embedded_order_uncertain=True)


_BUILDERS = {
    "ESDIRK12": _esdirk12,
    "ESDIRK23": _esdirk23,
    "ESDIRK34": _esdirk34,
    "ESDIRK32a": _esdirk32a,
    "ESDIRK32b": _esdirk32b,
    "ESDIRK43b": _esdirk43b,
    "ESDIRK32c": _esdirk32c,
    "ESDIRK45c": _esdirk45c,
}

METHODS = tuple(_BUILDERS)


@dataclass(frozen=True)
class MethodProperties:
    """Published summary row for one method (inf marks an unbounded R(inf))."""

    s: int
    gamma: float
    p: int
    a_stable: bool
    r_inf: float
    stiffly_accurate: bool
    p_hat: int
    a_stable_hat: bool
    r_inf_hat: float
    stiffly_accurate_hat: bool


INF = math.inf
REFERENCE_PROPERTIES = {
    "ESDIRK12": MethodProperties(2, 1.0, 1, True, 0.0, True, 2, False, INF, False),
    "ESDIRK23": MethodProperties(3, 0.2929, 2, True, 0.0, True, 3, False, INF, False),
    "ESDIRK34": MethodProperties(4, 0.4359, 3, True, 0.0, True, 4, False, INF, False),
    "ESDIRK32a": MethodProperties(4, 0.4359, 3, True, 0.0, True, 2, True, 0.9569, True),
    "ESDIRK32b": MethodProperties(4, 0.2929, 2, True, 0.0, True, 3, True, 1.609, True),
    "ESDIRK43b": MethodProperties(5, 0.4359, 3, True, 0.0, True, 4, True, 0.7175, True),
    "ESDIRK32c": MethodProperties(4, 0.5, 3, True, 0.0, True, 2, True, 1.0, True),
    "ESDIRK45c": MethodProperties(6, 0.25, 4, True, 0.0, True, 5, False, INF, False),
}


def canonical_name(name: str) -> str:
    for key in _BUILDERS:
        if key.lower() == str(name).strip().lower():
            return key
    raise UnknownMethodError(name, METHODS)


def builtin(name: str) -> ButcherTableau:
    """Return one of the shipped tableaus (name match is case-insensitive)."""
    return _builtin(canonical_name(name))


@functools.cache
def _builtin(key):
    return _BUILDERS[key]()


def check_consistency(t: ButcherTableau, tol: float = ROW_SUM_TOL) -> CheckReport:
    rows = np.abs(t.A.sum(axis=1) - t.c)
    worst = float(rows.max())
    return CheckReport("consistency", worst <= tol, worst, tol,
                       {"row_residuals": rows.tolist()})


def check_stage_order_2(t: ButcherTableau, tol: float = STAGE_ORDER_TOL) -> CheckReport:
    """Check sum_j a_ij c_j = c_i^2 / 2 on the interior stages 2..s-1.

    Stages at c = 0 or c = 1 are excluded, as are duplicate stages at c = 1 used
    only by an embedded method.
    """
    A, c = t.A, t.c
    interior = [i for i in range(1, t.s - 1) if abs(c[i] - 1.0) > tol]
    res = {i + 1: float(abs(A[i] @ c - 0.5 * c[i] ** 2)) for i in interior}
    worst = max(res.values(), default=0.0)
    details = {"stage_residuals": res}
    if t.esdirk and 1 in interior:
        c2 = float(abs(c[1] - 2 * t.gamma))
        details["c2_minus_2gamma"] = c2
        worst = max(worst, c2)
    return CheckReport("stage_order_2", worst <= tol, worst, tol, details)


_NUMBER = re.compile(r"\S+")


def _parse_number(tok, lineno, col):
    try:
        if "/" in tok:
            return float(Fraction(tok))
        return float(tok)
    except (ValueError, ZeroDivisionError):
        raise TableauParseError(f"cannot parse number {tok!r}", lineno, col) from None


def parse_tableau_text(text: str, name: str = "custom") -> ButcherTableau:
    """Parse the plain-text tableau format.

    Lower-triangular rows of A come first (row i holds i entries), followed by
    ``b:``, ``bhat:`` and ``c:`` lines. Optional ``p:``/``phat:`` lines give
    claimed orders. Entries may be decimals or rationals ``p/q``; ``#`` starts
    a comment.
    """
    rows, vectors, orders = [], {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = re.match(r"\s*([A-Za-z_]+)\s*:", line)
        if m:
            key = m.group(1).lower()
            body_start = m.end()
            toks = [(mm.group(), body_start + mm.start() + 1)
                    for mm in _NUMBER.finditer(line[body_start:])]
            if key in ("p", "phat"):
                if len(toks) != 1 or not toks[0][0].isdigit():
                    raise TableauParseError(f"{key}: expects one integer", lineno, body_start + 1)
                orders[key] = int(toks[0][0])
            elif key in ("b", "bhat", "c"):
                if key in vectors:
                    raise TableauParseError(f"duplicate {key}: line", lineno, 1)
                vectors[key] = (lineno, [_parse_number(tk, lineno, col) for tk, col in toks])
            else:
                raise TableauParseError(f"unknown key {key!r}", lineno, m.start(1) + 1)
            continue
        if vectors:
            raise TableauParseError("matrix row after vector lines", lineno, 1)
        toks = [(mm.group(), mm.start() + 1) for mm in _NUMBER.finditer(line)]
        expected = len(rows) + 1
        if len(toks) != expected:
            col = toks[expected][1] if len(toks) > expected else len(line) + 1
            raise TableauParseError(
                f"row {expected} of A needs {expected} entries, found {len(toks)}", lineno, col)
        rows.append([_parse_number(tk, lineno, col) for tk, col in toks])
    s = len(rows)
    if s < 2:
        raise TableauParseError("need at least two rows of A", 1)
    for key in ("b", "c"):
        if key not in vectors:
            raise TableauParseError(f"missing {key}: line", len(text.splitlines()) or 1)
    for key, (lineno, vals) in vectors.items():
        if len(vals) != s:
            raise TableauParseError(f"{key}: has {len(vals)} entries, expected {s}", lineno)
    A = np.zeros((s, s))
    for i, row in enumerate(rows):
        A[i, : i + 1] = row
    return ButcherTableau(
        name, A=A, b=vectors["b"][1], c=vectors["c"][1],
        b_hat=vectors["bhat"][1] if "bhat" in vectors else None,
        p=orders.get("p"), p_hat=orders.get("phat"))


def format_tableau_text(t: ButcherTableau) -> str:
    def fmt(v):
        return format(float(v), ".17g")

    lines = [" ".join(fmt(v) for v in t.A[i, : i + 1]) for i in range(t.s)]
    lines.append("b: " + " ".join(map(fmt, t.b)))
    if t.b_hat is not None:
        lines.append("bhat: " + " ".join(map(fmt, t.b_hat)))
    lines.append("c: " + " ".join(map(fmt, t.c)))
    if t.p is not None:
        lines.append(f"p: {t.p}")
    if t.p_hat is not None:
        lines.append(f"phat: {t.p_hat}")
    return "\n".join(lines) + "\n"
