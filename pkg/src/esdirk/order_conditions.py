"""Rooted-tree order conditions up to order four.

Each tree carries a recipe of diagonal-C and A multiplications; applying it
right to left to the ones vector gives the stage vector Psi(tau), and the
elementary weight is w' Psi(tau). A weight vector has order p when
Phi(tau) = 1/gamma(tau) for every tree with at most p nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, UnsupportedOrderError

MAX_ORDER = 4
ORDER_TOL = 1e-12
CONSISTENT_RESIDUAL = 1e-10
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class RootedTree:
    id: str
    order: int
    sigma: int
    density: int
    recipe: tuple[str, ...]

    @property
    def label(self) -> str:
        """Matrix word of the recipe, e.g. ``'CAC'`` (``'I'`` for the root)."""
        if not self.recipe:
            return "I"
        out, run = [], 1
        for prev, cur in zip(self.recipe, self.recipe[1:] + ("",)):
            if cur == prev:
                run += 1
                continue
            out.append(prev if run == 1 else f"{prev}^{run}")
            run = 1
        return "".join(out)


TREES = (
    RootedTree("t1", 1, 1, 1, ()),
    RootedTree("t2", 2, 1, 2, ("C",)),
    RootedTree("t3", 3, 2, 3, ("C", "C")),
    RootedTree("t4", 3, 1, 6, ("A", "C")),
    RootedTree("t5", 4, 6, 4, ("C", "C", "C")),
    RootedTree("t6", 4, 1, 8, ("C", "A", "C")),
    RootedTree("t7", 4, 2, 12, ("A", "C", "C")),
    RootedTree("t8", 4, 1, 24, ("A", "A", "C")),
)


def trees_up_to(p: int) -> tuple[RootedTree, ...]:
    if p > MAX_ORDER:
        raise UnsupportedOrderError(f"order {p} requested; tree table stops at {MAX_ORDER}")
    return tuple(tr for tr in TREES if tr.order <= p)


def psi_vector(t, tree: RootedTree) -> np.ndarray:
    v = np.ones(t.s)
    for op in reversed(tree.recipe):
        v = t.c * v if op == "C" else t.A @ v
    return v


def elementary_weight(t, weights, tree: RootedTree) -> float:
    return float(np.asarray(weights, dtype=float) @ psi_vector(t, tree))


@dataclass(frozen=True)
class ConditionRow:
    tree: RootedTree
    phi: float
    target: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class OrderReport:
    claimed_p: int
    rows: tuple[ConditionRow, ...]
    next_rows: tuple[ConditionRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def max_residual(self) -> float:
        return max((r.residual for r in self.rows), default=0.0)

    @property
    def next_order_holds(self) -> bool | None:
        """True when every condition of order claimed_p + 1 also holds."""
        if not self.next_rows:
            return None
        return all(r.passed for r in self.next_rows)


def _row(t, weights, tree, tol):
    phi = elementary_weight(t, weights, tree)
    target = 1.0 / tree.density
    res = abs(phi - target)
    return ConditionRow(tree, phi, target, res, res <= tol)


def verify_order(t, weights, claimed_p: int, tol: float = ORDER_TOL) -> OrderReport:
    if claimed_p > MAX_ORDER:
        raise UnsupportedOrderError(
            f"cannot verify order {claimed_p}; conditions are tabulated up to {MAX_ORDER}")
    rows = tuple(_row(t, weights, tr, tol) for tr in trees_up_to(claimed_p))
    nxt = ()
    if claimed_p < MAX_ORDER:
        nxt = tuple(_row(t, weights, tr, tol) for tr in TREES if tr.order == claimed_p + 1)
    return OrderReport(claimed_p, rows, nxt)


def attained_order(t, weights, tol: float = ORDER_TOL) -> int:
    """Largest p <= 4 for which all conditions hold (0 if even b'e = 1 fails)."""
    p = 0
    for q in range(1, MAX_ORDER + 1):
        if not verify_order(t, weights, q, tol).passed:
            break
        p = q
    return p


@dataclass(frozen=True)
class EmbeddedSolution:
    weights: np.ndarray
    residual: float
    rank: int
    unique: bool


def solve_embedded_weights(t, target_p: int) -> EmbeddedSolution:
    """Least-squares weights satisfying all order conditions up to ``target_p``.

    Rank deficiency yields the minimum-norm solution with ``unique=False``; an
    inconsistent system raises :class:`InfeasibleError`.
    """
    trees = trees_up_to(target_p)
    M = np.array([psi_vector(t, tr) for tr in trees])
    rhs = np.array([1.0 / tr.density for tr in trees])
    w, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=RANK_RTOL)
    residual = float(np.linalg.norm(M @ w - rhs))
    if residual > CONSISTENT_RESIDUAL:
        raise InfeasibleError(f"no weights of order {target_p} for {t.name}", residual)
    return EmbeddedSolution(w, residual, rank, rank == t.s)
