"""Command-line interface: verify, solve, convergence and events subcommands.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import dense_output as do
from .errors import (EsdirkError, InfeasibleError, TableauParseError, UnknownMethodError,
                     UnsupportedMethodError, UnsupportedOrderError)
from .integrator import Controls, solve, solve_fixed
from .order_conditions import attained_order, verify_order
from .problems import PROBLEM_NAMES, get_problem
from .stability import a_stability_scan, laguerre, r_infinity_stiffly_accurate, stability_function
from .tableau import (METHODS, REFERENCE_PROPERTIES, builtin, canonical_name, check_consistency,
                      check_stage_order_2, parse_tableau_text)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
R_INF_TOL = 1e-3
R_INF_AGREE_TOL = 1e-10
EXTENSION_ORDER_TOL = 1e-10
UNIQUE_REDERIVE_TOL = 1e-10
MIN_NORM_REDERIVE_TOL = 1e-8

PASS, FAIL, INFO, DISCREPANCY = "PASS", "FAIL", "INFO", "DISCREPANCY"


class UsageError(Exception):
    pass


def fmt(v) -> str:
    """Numbers with 17 significant digits; everything else as str."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(float(v), ".17g")
    return "" if v is None else str(v)


# ---------------------------------------------------------------------------
# verify


def _row(method, check, value, expected, status, detail=""):
    return {"method": method, "check": check, "value": value, "expected": expected,
            "status": status, "detail": detail}


def _order_rows(t, label, weights, claimed):
    if weights is None or claimed is None:
        return []
    try:
        rep = verify_order(t, weights, claimed)
    except UnsupportedOrderError:
        got = attained_order(t, weights)
        return [_row(t.name, f"order_{label}", got, claimed, INFO,
                     f"claimed order {claimed} exceeds the tabulated trees; "
                     f"conditions hold through order {got}")]
    rows = [_row(t.name, f"order_{label}", claimed if rep.passed else attained_order(t, weights),
                 claimed, PASS if rep.passed else FAIL, f"max residual {rep.max_residual:.3e}")]
    if rep.passed and rep.next_order_holds:
        rows.append(_row(t.name, f"order_{label}_understated", claimed + 1, claimed, INFO,
                         "all conditions of the next order also hold"))
    return rows


def _stability_rows(t, label, weights, ref_r_inf, ref_a_stable, ref_sa):
    if weights is None:
        return []
    name = t.name
    sf = stability_function(t, weights)
    scan = a_stability_scan(sf)
    rows = []
    k = t.stiffly_accurate_stage(weights)
    sa = k is not None
    if sa and k >= 1:
        r_sa = abs(r_infinity_stiffly_accurate(t, weights))
        agree = abs(r_sa - sf.r_inf) <= R_INF_AGREE_TOL
        rows.append(_row(name, f"r_inf_{label}_paths_agree", abs(r_sa - sf.r_inf), 0.0,
                         PASS if agree else FAIL))
    if ref_r_inf is None:
        rows.append(_row(name, f"r_inf_{label}", sf.r_inf, "", INFO))
    else:
        if math.isinf(ref_r_inf):
            ok = math.isinf(sf.r_inf)
        else:
            ok = abs(sf.r_inf - ref_r_inf) <= R_INF_TOL
        rows.append(_row(name, f"r_inf_{label}", sf.r_inf, ref_r_inf, PASS if ok else FAIL))
    if ref_sa is None:
        rows.append(_row(name, f"stiffly_accurate_{label}", sa, "", INFO))
    else:
        rows.append(_row(name, f"stiffly_accurate_{label}", sa, ref_sa,
                         PASS if sa == ref_sa else FAIL))
    verdict = scan.a_stable_consistent
    if ref_a_stable is None:
        status = INFO
    elif verdict == ref_a_stable:
        status = PASS
    elif ref_a_stable and not math.isinf(sf.r_inf) and sf.r_inf > 1.0:
        # the reference marks A-stable yet |R(inf)| > 1 is measured: contradictory source data
        status = DISCREPANCY
    else:
        status = FAIL
    rows.append(_row(name, f"a_stable_{label}", verdict, "" if ref_a_stable is None
                     else ref_a_stable, status, f"min 1-|R(iy)|^2 = {scan.min_e_normalized:.3e}"))
    return rows


def _laguerre_row(t):
    k = t.advancing_stage
    if k is None or k == 0:
        return []
    val = laguerre(k, 1.0 / t.gamma)
    return [_row(t.name, f"laguerre_L{k}(1/gamma)", val, 0.0, INFO,
                 "zero iff gamma gives R(inf) = 0 for the advancing method")]


def _extension_rows(t):
    rows = []
    try:
        variants = do.variants_for(t.name)
    except UnknownMethodError:
        return rows
    for v in variants:
        em = do.builtin_extension(t.name, v)
        res = do.condition_residuals(t, em)
        worst = max(res.values())
        rows.append(_row(t.name, f"extension_{v}_conditions", worst, 0.0,
                         PASS if worst <= EXTENSION_ORDER_TOL else FAIL))
        derivation = do.expected_derivation(t.name, v)
        if derivation == "stored_only":
            rows.append(_row(t.name, f"extension_{v}_rederived", "", "", INFO,
                             "objective not specified precisely; stored matrix is the oracle"))
            continue
        try:
            got = do.solve_extension(t, em.q, em.side_conditions)
        except InfeasibleError as exc:
            rows.append(_row(t.name, f"extension_{v}_rederived", exc.residual, 0.0, FAIL,
                             str(exc)))
            continue
        diff = float(np.max(np.abs(got.b_bar - em.b_bar)))
        tol = UNIQUE_REDERIVE_TOL if derivation == "unique" else MIN_NORM_REDERIVE_TOL
        ok = diff <= tol and got.solution_mode == derivation
        rows.append(_row(t.name, f"extension_{v}_rederived", diff, 0.0, PASS if ok else FAIL,
                         got.solution_mode))
    return rows


def verify_rows(t, reference=None) -> list[dict]:
    rows = []
    cons = check_consistency(t)
    rows.append(_row(t.name, "consistency", cons.residual, 0.0, PASS if cons.passed else FAIL))
    if t.esdirk:
        so = check_stage_order_2(t)
        rows.append(_row(t.name, "stage_order_2", so.residual, 0.0,
                         PASS if so.passed else FAIL))
    rows.append(_row(t.name, "esdirk_structure", t.esdirk, True, PASS if t.esdirk else FAIL))
    rows.append(_row(t.name, "event_safe", t.event_safe, "", INFO))
    ref = reference
    if ref is not None:
        rows.append(_row(t.name, "gamma", t.gamma, ref.gamma,
                         PASS if abs(t.gamma - ref.gamma) <= 5e-4 else FAIL))
    rows += _order_rows(t, "b", t.b, t.p)
    rows += _order_rows(t, "bhat", t.b_hat, t.p_hat)
    if t.p is not None and t.p < 4 and (ref is None or ref.p == t.p):
        fails_next = not verify_order(t, t.b, t.p + 1).passed
        rows.append(_row(t.name, "order_b_next_fails", fails_next, True,
                         PASS if fails_next else FAIL))
    rows += _stability_rows(t, "b", t.b, ref and ref.r_inf, ref and ref.a_stable,
                            ref and ref.stiffly_accurate)
    rows += _stability_rows(t, "bhat", t.b_hat, ref and ref.r_inf_hat, ref and ref.a_stable_hat,
                            ref and ref.stiffly_accurate_hat)
    rows += _laguerre_row(t)
    if ref is not None:
        rows += _extension_rows(t)
    return rows


def _load_tableaus(target):
    if target.lower() == "all":
        return [(builtin(m), REFERENCE_PROPERTIES[m]) for m in METHODS]
    path = Path(target)
    if path.is_file():
        return [(parse_tableau_text(path.read_text(), path.stem), None)]
    try:
        key = canonical_name(target)
    except UnknownMethodError as exc:
        raise UsageError(f"{exc} (or pass a tableau file path)") from None
    return [(builtin(key), REFERENCE_PROPERTIES[key])]


def _emit(rows, columns, out, fmt_name):
    if fmt_name == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])
    else:
        table = [[fmt(r[c]) for c in columns] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in table)) if table else len(c)
                  for i, c in enumerate(columns)]
        out.write("  ".join(c.ljust(wd) for c, wd in zip(columns, widths)).rstrip() + "\n")
        for row in table:
            out.write("  ".join(v.ljust(wd) for v, wd in zip(row, widths)).rstrip() + "\n")


def cmd_verify(args, out) -> int:
    try:
        items = _load_tableaus(args.target)
    except TableauParseError as exc:
        print(f"error: {args.target}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    if args.stability:
        rows = []
        for t, _ in items:
            for label, w in (("b", t.b), ("bhat", t.b_hat)):
                if w is None:
                    continue
                sf = stability_function(t, w)
                scan = a_stability_scan(sf)
                k = t.stiffly_accurate_stage(w)
                rows.append({
                    "method": t.name, "weights": label,
                    "p_coeffs": " ".join(fmt(v) for v in sf.p_coeffs),
                    "q_coeffs": " ".join(fmt(v) for v in sf.q_coeffs),
                    "r_inf": sf.r_inf,
                    "laguerre_residual": laguerre(k, 1 / t.gamma) if k else None,
                    "a_stable_consistent": scan.a_stable_consistent,
                    "min_e": scan.min_e,
                })
        _emit(rows, list(rows[0]), out, args.format)
        return EXIT_OK
    if args.orders:
        rows = []
        for t, _ in items:
            for label, w, p in (("b", t.b, t.p), ("bhat", t.b_hat, t.p_hat)):
                if w is None:
                    continue
                rep = verify_order(t, w, min(p or 4, 4))
                for r in rep.rows + rep.next_rows:
                    rows.append({"method": t.name, "weights": label, "tree": r.tree.id,
                                 "order": r.tree.order, "phi": r.phi, "target": r.target,
                                 "residual": r.residual, "pass": r.passed})
        _emit(rows, list(rows[0]), out, args.format)
        return EXIT_OK
    rows = []
    for t, ref in items:
        rows += verify_rows(t, ref)
    _emit(rows, ["method", "check", "value", "expected", "status", "detail"], out, args.format)
    failed = [f"{r['method']}:{r['check']}" for r in rows if r["status"] == FAIL]
    if failed:
        print("verification failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve / convergence / events


def _controls(args, **extra):
    kw = dict(rtol=args.rtol, atol=args.atol, allow_uncertain_estimator=args.allow_uncertain)
    if args.h0 is not None:
        kw["h_init"] = args.h0
    kw.update(extra)
    try:
        return Controls(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _method(name):
    try:
        return builtin(name)
    except UnknownMethodError as exc:
        raise UsageError(str(exc)) from None


def _problem(name):
    try:
        return get_problem(name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def cmd_solve(args, out) -> int:
    t = _method(args.method)
    tp = _problem(args.problem)
    result = solve(t, tp.problem, _controls(args))
    n = tp.problem.n
    cols = ["t", "h", "err_norm", "accepted"] + [f"x_{i + 1}" for i in range(n)]
    dense = args.dense or 0
    if dense and not result.segments:
        raise UsageError(f"{t.name} has no continuous extension; --dense is unavailable")
    if dense:
        cols.append("interp")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    seg_by_start = {}
    for seg in result.segments:
        seg_by_start.setdefault(seg.t, seg)
    for row in result.log:
        xs = [fmt(v) for v in row.x] if row.x is not None else [""] * n
        line = [fmt(row.t), fmt(row.h), fmt(row.err_norm), fmt(row.accepted)] + xs
        w.writerow(line + (["0"] if dense else []))
        if dense and row.accepted:
            seg = seg_by_start.get(row.t)
            if seg is not None:
                for j in range(1, dense + 1):
                    theta = seg.theta_end * j / (dense + 1)
                    x = seg.at_theta(theta)
                    w.writerow([fmt(seg.t + theta * seg.h), fmt(seg.h), "", "1"]
                               + [fmt(v) for v in x] + ["1"])
    _write_stats(args, result)
    return EXIT_OK


def _write_stats(args, result):
    stats = result.stats.as_dict()
    stats["status"] = result.status
    if args.stats:
        with open(args.stats, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(stats))
            w.writerow([fmt(v) for v in stats.values()])
    else:
        print(",".join(stats), file=sys.stderr)
        print(",".join(fmt(v) for v in stats.values()), file=sys.stderr)


def convergence_table(t, tp, h0, halvings):
    t0, tf = tp.problem.t_span
    rows = []
    prev = None
    x_ref = tp.reference(tf)
    for k in range(halvings + 1):
        h = h0 / 2 ** k
        n = round((tf - t0) / h)
        if not math.isclose(n * h, tf - t0, rel_tol=1e-9):
            raise UsageError(f"h0 = {h0} does not divide the interval {tp.problem.t_span}")
        res = solve_fixed(t, tp.problem, (tf - t0) / n, n)
        err = float(np.max(np.abs(res.x[-1] - x_ref)))
        order = math.log2(prev / err) if prev is not None and err > 0 else None
        est = [float(np.max(np.abs(r.error))) for r in res.records if r.error is not None]
        rows.append({"h": (tf - t0) / n, "n_steps": n, "error": err, "observed_order": order,
                     "max_error_estimate": max(est) if est else None})
        prev = err
    return rows


def cmd_convergence(args, out) -> int:
    t = _method(args.method)
    tp = _problem(args.problem)
    h0 = args.h0 if args.h0 is not None else 0.1
    try:
        rows = convergence_table(t, tp, h0, args.halvings)
    except EsdirkError as exc:
        print(f"error: {exc}; try a smaller --h0", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(rows, ["h", "n_steps", "error", "observed_order", "max_error_estimate"], out,
          args.format)
    return EXIT_OK


def cmd_events(args, out) -> int:
    t = _method(args.method)
    tp = _problem(args.problem)
    if not tp.problem.events:
        raise UsageError(f"problem {tp.name} defines no events")
    result = solve(t, tp.problem, _controls(args))
    n = tp.problem.n
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t_event", "spec_index", "terminal"] + [f"x_{i + 1}" for i in range(n)])
    for hit in result.events:
        spec = tp.problem.events[hit.spec_index]
        w.writerow([fmt(hit.t_event), hit.spec_index, fmt(spec.terminal)]
                   + [fmt(v) for v in hit.x_event])
    _write_stats(args, result)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esdirk", description="ESDIRK integrators: verification, solving, events.")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check tableaus against their published properties")
    v.add_argument("target", nargs="?", default="all",
                   help="method name, tableau file, or 'all' (default)")
    v.add_argument("--method", dest="method_opt", help="method name (alternative to TARGET)")
    group = v.add_mutually_exclusive_group()
    group.add_argument("--stability", action="store_true",
                       help="print stability polynomials and scan verdicts")
    group.add_argument("--orders", action="store_true", help="print per-tree order conditions")
    v.add_argument("--format", choices=("csv", "text"), default="text")
    v.add_argument("--out", help="write the report to this file")

    def common(p, default_problem):
        p.add_argument("--method", default="ESDIRK34", help=f"one of {', '.join(METHODS)}")
        p.add_argument("--problem", default=default_problem,
                       help=f"one of {', '.join(PROBLEM_NAMES)}")
        p.add_argument("--rtol", type=float, default=1e-6)
        p.add_argument("--atol", type=float, default=1e-6)
        p.add_argument("--h0", type=float, default=None, help="initial (or coarsest) step")
        p.add_argument("--out", help="write CSV output to this file")
        p.add_argument("--stats", help="write the statistics CSV to this file")
        p.add_argument("--format", choices=("csv", "text"), default="csv")
        p.add_argument("--allow-uncertain", action="store_true",
                       help="permit adaptive stepping with an uncertain error estimator")

    s = sub.add_parser("solve", help="adaptive integration; trajectory CSV")
    common(s, "vdp1")
    s.add_argument("--dense", type=int, default=0,
                   help="interpolated points per accepted step")

    c = sub.add_parser("convergence", help="fixed-step convergence study")
    common(c, "forced")
    c.add_argument("--halvings", type=int, default=5)

    e = sub.add_parser("events", help="integrate a hybrid problem and list located events")
    common(e, "bouncing_ball")
    return parser


@contextmanager
def _output(path):
    if path:
        with open(path, "w", newline="") as fh:
            yield fh
    else:
        yield sys.stdout


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "verify" and args.method_opt:
        args.target = args.method_opt
    if getattr(args, "halvings", 0) < 0 or getattr(args, "dense", 0) < 0:
        parser.print_usage(sys.stderr)
        print("error: --halvings and --dense must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    handler = {"verify": cmd_verify, "solve": cmd_solve, "convergence": cmd_convergence,
               "events": cmd_events}[args.command]
    try:
        with _output(args.out) as out:
            return handler(args, out)
    except (UsageError, UnsupportedMethodError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EsdirkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
