"""Command-line entry point.

Five subcommands cover the pipeline: ``estimate`` inverts observed
sessions into demand, ``generate`` builds synthetic instances, ``evaluate``
scores an instance (optionally under a plan), ``optimize`` searches for the
best plan within a budget, and ``sweep`` repeats the search over a budget
grid.  All outputs are files; exit code 0 means success, 2 a rejected
input, and 3 a search stopped by a limit with the incumbent still written.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

from . import estimate as est
from . import instgen
from .geo import demand_map_layer
from .maxflow import evaluate
from .model import (
    InvalidInstanceError,
    InvalidPlanError,
    dump_json,
    load_instance,
    load_json,
    plan_from_obj,
    plan_to_obj,
    result_to_obj,
    save_instance,
    uniform_periods,
    with_budget,
)
from .placement import (
    STATUS_OPTIMAL,
    SearchParams,
    optimize,
    plan_map_layer,
    report_to_obj,
    sweep,
    sweep_to_obj,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_LIMIT = 3

THREADS_ENV = "EVFLOW_THREADS"


class _InputRejected(Exception):
    """Wraps any input problem destined for exit code 2."""


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_budget_span(spec: str) -> list[float]:
    """Budget grids come as start:stop:step (inclusive) or a comma list."""
    try:
        if ":" in spec:
            start_s, stop_s, step_s = spec.split(":")
            start, stop, step = float(start_s), float(stop_s), float(step_s)
            if step <= 0 or stop < start:
                raise ValueError
            out = []
            value = start
            while value <= stop + 1e-9:
                out.append(round(value, 9))
                value += step
            return out
        return [float(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError:
        raise _InputRejected(
            f"budget spec {spec!r} is neither start:stop:step nor a comma list"
        ) from None


def _load_instance_arg(path):
    try:
        return load_instance(path)
    except FileNotFoundError:
        raise _InputRejected(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise _InputRejected(f"{path}:{exc.lineno}: {exc.msg}") from None
    except InvalidInstanceError as exc:
        raise _InputRejected(str(exc)) from None


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def cmd_estimate(args) -> int:
    try:
        sessions = est.read_sessions(args.sessions)
        matrix = est.read_od_matrix(args.matrix)
        assignment = est.read_assignment(args.assignment)
    except FileNotFoundError as exc:
        raise _InputRejected(f"{exc.filename}: no such file") from None
    except est.InputFormatError as exc:
        raise _InputRejected(str(exc)) from None

    for sid, borough in sorted(assignment.items()):
        if borough not in matrix.boroughs:
            raise _InputRejected(
                f"station {sid} assigned to unknown borough {borough}")
    if not sessions:
        _warn("no sessions recorded; all demand estimates are zero")

    day = uniform_periods(1)[0]
    try:
        supplied = est.borough_supply_kw(sessions, assignment, day)
    except KeyError as exc:
        raise _InputRejected(str(exc.args[0])) from None
    full = {b: supplied.get(b, Fraction(0)) for b in matrix.boroughs}
    try:
        demand = est.estimate_borough_demand(matrix, full)
    except est.DegenerateSystemError as exc:
        raise _InputRejected(str(exc)) from None
    pairs = est.all_pair_demands_kw(demand.q_kw, matrix)

    report = {
        "supplied_kw": {b: float(v) for b, v in sorted(full.items())},
        "q_kw": {b: float(v) for b, v in sorted(demand.q_kw.items())},
        "q_kw_exact": {b: str(v) for b, v in sorted(demand.q_kw.items())},
        "pair_demand_kw": {f"{a}-{b}": float(v)
                           for (a, b), v in sorted(pairs.items())},
        "exact": demand.exact,
        "clamped": list(demand.clamped),
    }
    if not demand.exact:
        _warn("trip-fraction system was singular; least-squares demand is inexact")

    if args.points:
        try:
            points = est.read_points(args.points)
        except FileNotFoundError as exc:
            raise _InputRejected(f"{exc.filename}: no such file") from None
        except est.InputFormatError as exc:
            raise _InputRejected(str(exc)) from None
        ods = instgen.enumerate_ods(points, n_periods=1)
        ods_by_pair: dict[tuple[str, str], list[str]] = {}
        for od in ods:
            ods_by_pair.setdefault(od.borough_pair, []).append(od.id)
        split = est.split_demand_to_ods(pairs, ods_by_pair, [Fraction(1)])
        report["od_demand_kw"] = {
            od_id: float(sum(vec)) for od_id, vec in sorted(split.od_demand_kw.items())}
        report["lost_kw"] = {f"{a}-{b}": float(v)
                             for (a, b), v in sorted(split.lost_kw.items())}

    dump_json(report, args.out)
    print(f"wrote demand report to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.radius <= 0:
        raise _InputRejected(f"radius must be positive, got {args.radius}")
    if args.points < 2:
        raise _InputRejected(f"need at least 2 points, got {args.points}")
    if args.periods < 1:
        raise _InputRejected(f"periods must be at least 1, got {args.periods}")
    if args.budget < 0:
        raise _InputRejected(f"budget must be nonnegative, got {args.budget}")

    if args.template:
        try:
            template = instgen.load_template(args.template)
        except FileNotFoundError:
            raise _InputRejected(f"{args.template}: no such file") from None
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise _InputRejected(f"{args.template}: {exc}") from None
        template_ref = {"template_path": os.path.abspath(args.template)}
    else:
        template = instgen.toy_city()
        template_ref = {"template": template.name}

    try:
        instance = instgen.build_instance(
            template, w=args.points, seed=args.seed, radius_m=args.radius,
            n_periods=args.periods, budget=args.budget)
    except (ValueError, instgen.EmptyPolygonError) as exc:
        raise _InputRejected(str(exc)) from None

    from .model import instance_to_obj

    obj = instance_to_obj(instance)
    obj["meta"] = dict(template_ref,
                       w=args.points, seed=args.seed, radius_m=args.radius,
                       periods=args.periods, budget=args.budget)
    dump_json(obj, args.out)
    print(f"wrote instance with {len(instance.ods)} ODs and "
          f"{len(instance.candidates)} candidates to {args.out}")
    return EXIT_OK


def _load_plan_arg(path, instance):
    try:
        plan = plan_from_obj(load_json(path))
    except FileNotFoundError:
        raise _InputRejected(f"{path}: no such file") from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise _InputRejected(f"{path}: {exc}") from None
    from .model import validate_plan

    violations = validate_plan(instance, plan)
    if violations:
        raise _InputRejected("; ".join(v.message for v in violations))
    return plan


def cmd_evaluate(args) -> int:
    instance = _load_instance_arg(args.instance)
    plan = _load_plan_arg(args.plan, instance) if args.plan else None
    try:
        result = evaluate(instance, plan, threads=args.threads,
                          check_certificates=args.certify)
    except InvalidPlanError as exc:
        raise _InputRejected(str(exc)) from None

    if result.total_demand_kw == 0:
        _warn("instance has zero total demand; 100% satisfied by convention")

    report = result_to_obj(result)
    dump_json(report, args.report)
    if args.map:
        dump_json(demand_map_layer(instance, result), args.map)
    print(f"satisfied {result.satisfied_kw:.3f} kW of {result.total_demand_kw:.3f} "
          f"({result.satisfied_pct():.2f}%), unsatisfied {result.unsatisfied_kw:.3f}, "
          f"impossible {result.impossible_kw:.3f}")
    return EXIT_OK


def _search_params(args) -> SearchParams:
    if args.gap_tol < 0:
        raise _InputRejected(f"gap tolerance must be nonnegative, got {args.gap_tol}")
    if args.time_limit <= 0:
        raise _InputRejected(f"time limit must be positive, got {args.time_limit}")
    if args.node_limit is not None and args.node_limit < 1:
        raise _InputRejected(f"node limit must be at least 1, got {args.node_limit}")
    return SearchParams(gap_tol=args.gap_tol, time_limit_s=args.time_limit,
                        node_limit=args.node_limit)


def _cross_eval_periods(spec: str) -> int:
    key, _, value = spec.partition("=")
    if key.strip() != "periods" or not value.strip().isdigit():
        raise _InputRejected(
            f"cross-eval spec {spec!r} must look like periods=4")
    n = int(value)
    if n < 2:
        raise _InputRejected("cross-eval needs at least 2 periods")
    return n


def _regenerate(meta, n_periods: int):
    if not meta:
        raise _InputRejected(
            "cross-eval needs a generated instance (no meta block found)")
    if "template_path" in meta:
        template = instgen.load_template(meta["template_path"])
    elif meta.get("template") == "toyville":
        template = instgen.toy_city()
    else:
        raise _InputRejected(f"unknown template reference {meta.get('template')!r}")
    return instgen.build_instance(
        template, w=int(meta["w"]), seed=int(meta["seed"]),
        radius_m=float(meta["radius_m"]), n_periods=n_periods,
        budget=float(meta.get("budget", 0.0)))


def cmd_optimize(args) -> int:
    instance = _load_instance_arg(args.instance)
    if args.budget is not None:
        if args.budget < 0:
            raise _InputRejected(f"budget must be nonnegative, got {args.budget}")
        instance = with_budget(instance, args.budget)
    params = _search_params(args)

    if args.sweep:
        budgets = _parse_budget_span(args.sweep)
        rows = sweep(instance, budgets, params, threads=args.threads)
        dump_json(sweep_to_obj(rows), args.sweep_out)
        print(f"wrote {len(rows)} sweep rows to {args.sweep_out}")
        limited = [r for r in rows if r.status != STATUS_OPTIMAL]
        if limited:
            _warn(f"{len(limited)} sweep cells stopped at a limit")
            return EXIT_LIMIT
        return EXIT_OK

    plan, result, report = optimize(instance, params, threads=args.threads)
    obj = report_to_obj(report)

    if args.cross_eval:
        n = _cross_eval_periods(args.cross_eval)
        meta = load_json(args.instance).get("meta")
        refined = _regenerate(meta, n)
        refined = with_budget(refined, instance.costs.budget)
        cross = evaluate(refined, plan, threads=args.threads)
        _, _, refined_report = optimize(refined, params, threads=args.threads)
        obj["cross_eval"] = {
            "periods": n,
            "plan_satisfied_kw": cross.satisfied_kw,
            "optimum_satisfied_kw": refined_report.objective_kw,
            "shortfall_kw": refined_report.objective_kw - cross.satisfied_kw,
        }

    dump_json(plan_to_obj(plan), args.plan_out)
    dump_json(obj, args.report_out)
    if args.map:
        dump_json(plan_map_layer(instance, plan), args.map)
    print(f"{report.status}: satisfied {report.objective_kw:.3f} kW "
          f"({report.satisfied_pct:.2f}%), bound {report.bound_kw:.3f}, "
          f"gap {report.gap:.2e}, {report.nodes} nodes in {report.wall_time_s:.2f}s")
    if report.opened_l3:
        print(f"note: plan opens {report.opened_l3} level-3 stations")
    return EXIT_OK if report.status == STATUS_OPTIMAL else EXIT_LIMIT


def cmd_sweep(args) -> int:
    instance = _load_instance_arg(args.instance)
    params = _search_params(args)
    budgets = _parse_budget_span(args.budgets)
    rows = sweep(instance, budgets, params, threads=args.threads)
    dump_json(sweep_to_obj(rows), args.out)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    limited = [r for r in rows if r.status != STATUS_OPTIMAL]
    if limited:
        _warn(f"{len(limited)} sweep cells stopped at a limit")
        return EXIT_LIMIT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evflow",
        description="EV charging demand assignment and station placement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="invert sessions into borough and OD demand")
    p.add_argument("--sessions", required=True, help="session CSV")
    p.add_argument("--matrix", required=True, help="trip-fraction CSV")
    p.add_argument("--assignment", required=True, help="station-to-borough CSV")
    p.add_argument("--points", help="optional demand-point CSV for per-OD splits")
    p.add_argument("--out", default="demand.json", help="report path")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("generate", help="build a synthetic instance")
    p.add_argument("-W", "--points", type=int, required=True, help="demand point count")
    p.add_argument("-R", "--radius", type=float, required=True, help="service radius, m")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--periods", type=int, default=1, help="periods per day (1 or 4)")
    p.add_argument("--budget", type=float, default=0.0)
    p.add_argument("--template", help="city template JSON (default: bundled toy city)")
    p.add_argument("--out", default="instance.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score an instance, optionally under a plan")
    p.add_argument("instance")
    p.add_argument("--plan", help="plan JSON to apply before scoring")
    p.add_argument("--report", default="result.json")
    p.add_argument("--map", help="optional GeoJSON demand layer")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--certify", action="store_true",
                   help="verify a min-cut certificate for every flow solve")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="search for the best plan within budget")
    p.add_argument("instance")
    p.add_argument("--budget", type=float, help="override the instance budget")
    p.add_argument("--gap-tol", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=1800.0)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--plan-out", default="plan.json")
    p.add_argument("--report-out", default="report.json")
    p.add_argument("--map", help="optional GeoJSON layer of the plan")
    p.add_argument("--sweep", metavar="START:STOP:STEP",
                   help="solve a budget grid instead of a single budget")
    p.add_argument("--sweep-out", default="sweep.json")
    p.add_argument("--cross-eval", metavar="periods=N",
                   help="rescore the plan under a finer period split")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="optimize across a budget grid")
    p.add_argument("instance")
    p.add_argument("--budgets", default="0:700:100", metavar="START:STOP:STEP")
    p.add_argument("--gap-tol", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=1800.0)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out", default="sweep.json")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _InputRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
