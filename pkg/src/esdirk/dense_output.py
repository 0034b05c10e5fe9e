"""Continuous extensions (dense output) x(t_n + theta h) = x_n + h K' b(theta).

The weight polynomial b(theta) = sum_k B[:, k-1] theta^k has no constant
term, so the interpolant always starts at x_n. Coefficient matrices are
derived from the stacked linear system

    (I_q kron Psi_bar) vec(B) = vec(Gamma_bar)     order conditions
    side-condition rows                            endpoint / stage / slope

where Psi_bar stacks Psi(tau)' for the 8 trees and Gamma_bar places
1/gamma(tau) in column r(tau). Under-determined systems get the minimum
2-norm solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (InfeasibleError, OutOfRangeError, UnknownExtensionError,
                     UnknownMethodError)
from .order_conditions import TREES, psi_vector
from .tableau import ButcherTableau, builtin, canonical_name

INFEASIBLE_RTOL = 1e-9
RANK_RTOL = 1e-12
MAX_EXTENSION_ORDER = 4

ENDPOINT_B = "endpoint_b"
ENDPOINT_BHAT = "endpoint_bhat"
STAGE_MATCH = "stage_match"
DERIVATIVE_MATCH = "derivative_match"


@dataclass(frozen=True)
class SideCondition:
    """Extra interpolation constraint; ``stage`` is 1-based like the tableau rows."""

    kind: str
    stage: int | None = None

    def __post_init__(self):
        if self.kind in (ENDPOINT_B, ENDPOINT_BHAT):
            if self.stage is not None:
                raise ValueError(f"{self.kind} takes no stage index")
        elif self.kind in (STAGE_MATCH, DERIVATIVE_MATCH):
            if self.stage is None or self.stage < 1:
                raise ValueError(f"{self.kind} needs a 1-based stage index")
            if self.kind == STAGE_MATCH and self.stage < 2:
                raise ValueError("stage_match requires stage >= 2")
        else:
            raise ValueError(f"unknown side condition kind {self.kind!r}")

    def __str__(self):
        return self.kind if self.stage is None else f"{self.kind}({self.stage})"


def endpoint_b() -> SideCondition:
    return SideCondition(ENDPOINT_B)


def endpoint_bhat() -> SideCondition:
    return SideCondition(ENDPOINT_BHAT)


def stage_match(i: int) -> SideCondition:
    return SideCondition(STAGE_MATCH, i)


def derivative_match(i: int) -> SideCondition:
    return SideCondition(DERIVATIVE_MATCH, i)


@dataclass(frozen=True, eq=False)
class ExtensionMatrix:
    b_bar: np.ndarray
    side_conditions: tuple[SideCondition, ...] = ()
    solution_mode: str = "unique"
    method: str = ""
    variant: str = ""
    rank: int | None = None
    residual: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        B = np.array(self.b_bar, dtype=float)
        if B.ndim != 2:
            raise ValueError("b_bar must be an s x q matrix")
        B.flags.writeable = False
        object.__setattr__(self, "b_bar", B)
        object.__setattr__(self, "side_conditions", tuple(self.side_conditions))

    @property
    def s(self) -> int:
        return self.b_bar.shape[0]

    @property
    def q(self) -> int:
        return self.b_bar.shape[1]

    def weights(self, theta: float) -> np.ndarray:
        """b(theta) by Horner's rule; b(0) = 0."""
        acc = np.zeros(self.s)
        for k in range(self.q - 1, -1, -1):
            acc = (acc + self.b_bar[:, k]) * theta
        return acc

    def weights_derivative(self, theta: float) -> np.ndarray:
        """d b / d theta."""
        acc = np.zeros(self.s)
        for k in range(self.q - 1, -1, -1):
            acc = acc * theta + (k + 1) * self.b_bar[:, k]
        return acc

    def __repr__(self):
        label = f"{self.method}/{self.variant}" if self.variant else self.method
        return f"ExtensionMatrix({label!r}, s={self.s}, q={self.q}, mode={self.solution_mode})"


def psi_bar(t: ButcherTableau) -> np.ndarray:
    return np.array([psi_vector(t, tree) for tree in TREES])


def _blocks(t: ButcherTableau, q: int, conds):
    """Row blocks (name, matrix, rhs) over unknowns vec(B) in column-major order."""
    s = t.s
    psi = psi_bar(t)
    blocks = []
    for k in range(1, q + 1):
        rows, rhs = [], []
        for tree, psi_row in zip(TREES, psi):
            if tree.order > q:
                continue
            row = np.zeros(q * s)
            row[(k - 1) * s:k * s] = psi_row
            rows.append(row)
            rhs.append(1.0 / tree.density if tree.order == k else 0.0)
        blocks.append((f"order(theta^{k})", np.array(rows), np.array(rhs)))
    eye = np.eye(s)
    for cond in conds:
        if cond.stage is not None and cond.stage > s:
            raise ValueError(f"{cond} refers to a stage beyond s = {s}")
        if cond.kind in (ENDPOINT_B, ENDPOINT_BHAT):
            target = t.b if cond.kind == ENDPOINT_B else t.b_hat
            if target is None:
                raise ValueError(f"{t.name} has no embedded weights for {cond}")
            coeffs = np.ones(q)
        else:
            ci = t.c[cond.stage - 1]
            if cond.kind == STAGE_MATCH:
                coeffs = ci ** np.arange(1, q + 1)
                target = t.A[cond.stage - 1]
            else:
                coeffs = np.arange(1, q + 1) * ci ** np.arange(q)
                target = eye[cond.stage - 1]
        blocks.append((str(cond), np.kron(coeffs, eye), np.asarray(target, dtype=float)))
    return blocks


def extension_system(t: ButcherTableau, q: int, conds=()):
    """Stacked matrix, right-hand side and block names of the extension system."""
    blocks = _blocks(t, q, conds)
    return (np.vstack([b[1] for b in blocks]), np.concatenate([b[2] for b in blocks]),
            [(b[0], len(b[2])) for b in blocks])


def solve_extension(t: ButcherTableau, q: int, conds=()) -> ExtensionMatrix:
    if not 1 <= q <= MAX_EXTENSION_ORDER:
        raise ValueError(f"extension order q must be in 1..{MAX_EXTENSION_ORDER}")
    conds = tuple(conds)
    blocks = _blocks(t, q, conds)
    M = np.vstack([b[1] for b in blocks])
    rhs = np.concatenate([b[2] for b in blocks])
    x, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=RANK_RTOL)
    r = M @ x - rhs
    rel = float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1.0))
    if rel > INFEASIBLE_RTOL:
        worst, worst_val, start = None, -1.0, 0
        for name, _, brhs in blocks:
            val = float(np.linalg.norm(r[start:start + len(brhs)]))
            if val > worst_val:
                worst, worst_val = name, val
            start += len(brhs)
        raise InfeasibleError(
            f"no order-{q} extension for {t.name} with "
            f"[{', '.join(map(str, conds)) or 'no side conditions'}]; "
            f"relative residual {rel:.3g}, largest violation in {worst}",
            rel, worst)
    n = M.shape[1]
    if rank == n:
        mode = "unique"
    elif any(c.kind == DERIVATIVE_MATCH for c in conds):
        mode = "min_norm_with_derivative"
    else:
        mode = "min_norm"
    B = x.reshape(q, t.s).T
    return ExtensionMatrix(B, conds, mode, t.name, rank=int(rank), residual=rel)


def condition_residuals(t: ButcherTableau, em: ExtensionMatrix) -> dict[str, float]:
    """Max violation of each block of the system (order blocks and side conditions)."""
    x = em.b_bar.T.reshape(-1)
    return {name: float(np.max(np.abs(M @ x - rhs), initial=0.0))
            for name, M, rhs in _blocks(t, em.q, em.side_conditions)}


def eval_extension(em: ExtensionMatrix, x_n, h: float, K, theta: float) -> np.ndarray:
    if not 0.0 <= theta <= 1.0:
        raise OutOfRangeError(f"theta = {theta!r} outside [0, 1]; extrapolation refused")
    K = np.asarray(K, dtype=float)
    return np.asarray(x_n, dtype=float) + h * (em.weights(theta) @ K)


def eval_extension_derivative(em: ExtensionMatrix, K, theta: float) -> np.ndarray:
    """d x / dt of the interpolant (theta in [0, 1])."""
    if not 0.0 <= theta <= 1.0:
        raise OutOfRangeError(f"theta = {theta!r} outside [0, 1]; extrapolation refused")
    return em.weights_derivative(theta) @ np.asarray(K, dtype=float)


# ---------------------------------------------------------------------------
# Tabulated extensions

_R2 = math.sqrt(2.0)
_SQRT2_ORDER2 = [[_R2 / 2, -_R2 / 4], [_R2 / 2, -_R2 / 4], [1 - _R2, _R2 / 2]]


@dataclass(frozen=True)
class _CatalogEntry:
    rows: tuple
    conds: tuple
    derivation: str  # mode solve_extension is expected to report, or "stored_only"


_CATALOG = {
    ("ESDIRK12", "o1"): _CatalogEntry(((0.0,), (1.0,)), (endpoint_b(),), "unique"),
    ("ESDIRK12", "o2"): _CatalogEntry(((1.0, -0.5), (0.0, 0.5)), (), "unique"),
    ("ESDIRK23", "o2"): _CatalogEntry(
        tuple(map(tuple, _SQRT2_ORDER2)), (endpoint_b(), stage_match(2)), "unique"),
    ("ESDIRK23", "o3"): _CatalogEntry((
        (1.0, -1.35355339059327, 0.569035593728849),
        (0.0, 2.06066017177982, -1.37377344785321),
        (0.0, -0.707106781186547, 0.804737854124365),
    ), (), "unique"),
    ("ESDIRK34", "o2_24"): _CatalogEntry((
        (3.20218915732655, -3.09978975670664),
        (6.45947654423207, -6.83635499648762),
        (-5.69941214787150, 6.53802467799868),
        (-2.96225355368712, 3.39812007519558),
    ), (stage_match(2), stage_match(4)), "unique"),
    ("ESDIRK34", "o2_34"): _CatalogEntry((
        (0.47506477777383, -0.372665377153919),
        (-0.103360609602923, -0.273517842652633),
        (1.01209512329345, -0.173482593166265),
        (-0.383799291464359, 0.819665812972817),
    ), (stage_match(3), stage_match(4)), "unique"),
    ("ESDIRK34", "o3_minnorm"): _CatalogEntry((
        (0.969611875176691, -1.53835725968354, 0.671144785126761),
        (-0.274928052044991, 0.266658367468879, -0.368608767679444),
        (0.123462002567514, 1.88835458133267, -1.173204053773),
        (0.181854174300786, -0.61665568911801, 0.870668036325683),
    ), (endpoint_b(),), "min_norm"),
    ("ESDIRK34", "o3_mincurv"): _CatalogEntry((
        (0.927166003679448, -1.64140141649749, 0.816634813437953),
        (-0.658945191501327, -0.665604793624494, 0.947671532870265),
        (0.29591266631342, 2.30700621012198, -1.76430634630822),
        (0.43586652150846, 0.0, 0.0),
    ), (endpoint_b(),), "stored_only"),
    ("ESDIRK34", "o3_deriv"): _CatalogEntry((
        (0.92277773077164, -1.53835725968353, 0.71797892953181),
        (-0.69864686211777, 0.26665836746888, 0.05511004239334),
        (0.31374150452444, 1.88835458133266, -1.36348355572992),
        (0.46212762682169, -0.61665568911801, 0.59039458380477),
    ), (endpoint_b(), derivative_match(4)), "min_norm_with_derivative"),
    ("ESDIRK32a", "o3_deriv"): _CatalogEntry((
        (1.00000000000000, -1.07357009006975, 0.38238006004650),
        (0.00000000000000, 4.47169016526534, -2.98112677684356),
        (-0.86407093427697, -1.97757777116702, 1.60640882553700),
        (0.86407093427697, -1.42054230402855, 0.99233789126005),
    ), (endpoint_b(), derivative_match(4)), "min_norm_with_derivative"),
    ("ESDIRK32b", "o2"): _CatalogEntry(
        tuple(map(tuple, _SQRT2_ORDER2)) + ((0.0, 0.0),),
        (stage_match(2), endpoint_b(), derivative_match(3)), "unique"),
    ("ESDIRK43b", "o3_deriv"): _CatalogEntry((
        (0.91305667617487, -1.51891515049001, 0.70825787493505),
        (-0.78659538212849, 0.44255540749030, -0.03283847761737),
        (0.35323656631463, 1.80936445775230, -1.32398849393974),
        (0.30072875082513, -0.29385793712489, 0.42899570780821),
        (0.21957338881385, -0.43914677762771, 0.21957338881385),
    ), (endpoint_b(), derivative_match(4)), "min_norm_with_derivative"),
}

EXTENSION_CATALOG = tuple(_CATALOG)

_DEFAULT_VARIANT = {
    "ESDIRK12": "o1",
    "ESDIRK23": "o2",
    "ESDIRK34": "o3_deriv",
    "ESDIRK32a": "o3_deriv",
    "ESDIRK32b": "o2",
    "ESDIRK43b": "o3_deriv",
}


def builtin_extension(name: str, variant: str) -> ExtensionMatrix:
    try:
        key = (canonical_name(name), variant)
        entry = _CATALOG[key]
    except (KeyError, UnknownMethodError):
        raise UnknownExtensionError(name, variant, EXTENSION_CATALOG) from None
    return ExtensionMatrix(np.array(entry.rows), entry.conds, "stored_from_paper",
                           key[0], variant, details={"derivation": entry.derivation})


def expected_derivation(name: str, variant: str) -> str:
    return _CATALOG[(canonical_name(name), variant)].derivation


def default_extension(name: str) -> ExtensionMatrix | None:
    """Extension used for dense output and event location, or None if the method has none."""
    key = canonical_name(name)
    variant = _DEFAULT_VARIANT.get(key)
    return None if variant is None else builtin_extension(key, variant)


def variants_for(name: str) -> tuple[str, ...]:
    key = canonical_name(name)
    return tuple(v for m, v in _CATALOG if m == key)


def tableau_for(em: ExtensionMatrix) -> ButcherTableau:
    return builtin(em.method)
