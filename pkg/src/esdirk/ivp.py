"""Initial value problem description shared by the solver modules.

Problems take the form M x' = f(t, x). A singular mass matrix must be
semi-explicit: each zero row of M marks an algebraic equation 0 = f_i(t, x).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DIRECTIONS = ("any", "up", "down")


@dataclass(frozen=True)
class EventSpec:
    """Zero crossing of ``guard(t, x)``; ``up`` means negative to positive."""

    guard: Callable[[float, np.ndarray], float]
    direction: str = "any"
    terminal: bool = False
    action: Callable[[float, np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


@dataclass(frozen=True, eq=False)
class IvpProblem:
    rhs: Callable[[float, np.ndarray], np.ndarray]
    x0: np.ndarray
    t_span: tuple[float, float]
    jacobian: Callable[[float, np.ndarray], np.ndarray] | None = None
    mass: np.ndarray | None = None
    events: tuple[EventSpec, ...] = ()
    name: str = ""
    typical_scale: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.atleast_1d(np.array(self.x0, dtype=float))
        object.__setattr__(self, "x0", x0)
        t0, tf = (float(v) for v in self.t_span)
        if not t0 < tf:
            raise ValueError(f"t_span must satisfy t0 < tf, got {self.t_span}")
        object.__setattr__(self, "t_span", (t0, tf))
        object.__setattr__(self, "events", tuple(self.events))
        if self.mass is not None:
            M = np.array(self.mass, dtype=float)
            if M.shape != (x0.size, x0.size):
                raise ValueError(f"mass matrix must be {x0.size}x{x0.size}")
            zero_rows = ~np.any(M, axis=1)
            if np.linalg.matrix_rank(M[~zero_rows]) < np.count_nonzero(~zero_rows):
                raise ValueError("singular mass matrix must be semi-explicit "
                                 "(algebraic equations as zero rows)")
            object.__setattr__(self, "mass", M)

    @property
    def n(self) -> int:
        return self.x0.size

    @property
    def mass_matrix(self) -> np.ndarray:
        return np.eye(self.n) if self.mass is None else self.mass

    @property
    def algebraic(self) -> np.ndarray:
        """Boolean mask of algebraic equations (zero rows of M)."""
        if self.mass is None:
            return np.zeros(self.n, dtype=bool)
        return ~np.any(self.mass, axis=1)

    @property
    def is_dae(self) -> bool:
        return bool(np.any(self.algebraic))

    def f(self, t, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.rhs(t, x), dtype=float))
