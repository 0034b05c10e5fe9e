"""Stiffly accurate ESDIRK integrators with embedded error estimation,
continuous extensions, event location and tableau verification."""

from .errors import EsdirkError
from .tableau import ButcherTableau, METHODS, builtin, check_consistency, check_stage_order_2
from .order_conditions import TREES, attained_order, elementary_weight, psi_vector, verify_order
from .stability import a_stability_scan, r_infinity_stiffly_accurate, stability_function
from .dense_output import ExtensionMatrix, builtin_extension, eval_extension, solve_extension

__all__ = [
    "EsdirkError", "ButcherTableau", "METHODS", "builtin", "check_consistency",
    "check_stage_order_2", "TREES", "attained_order", "elementary_weight", "psi_vector",
    "verify_order", "a_stability_scan", "r_infinity_stiffly_accurate", "stability_function",
    "ExtensionMatrix", "builtin_extension", "eval_extension", "solve_extension",
]
