"""Exact station placement under a budget.

Best-first branch-and-bound over the purchase decisions: outlets added to
existing stations, candidates opened at level 2 or 3, and their outlet
counts.  Node bounds come from the LP relaxation; every incumbent is a
concrete plan re-scored exactly by the max-flow engine, so the returned
objective never inherits LP tolerance noise.  Budget feasibility is checked
in rational arithmetic throughout.

Attainable objectives are integer milli-kW by construction, which gives a
clean fathoming rule: a node is dead once its safety-padded bound cannot
clear the incumbent by a full quantum.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .geo import ARC_DEMAND
from .lp import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, Relaxation, build_relaxation
from .maxflow import evaluate_on_network
from .model import (
    LEVEL_FAST,
    LEVEL_RAPID,
    AssignmentResult,
    EMPTY_PLAN,
    Instance,
    InvalidInstanceError,
    PlacementPlan,
    make_plan,
    plan_cost,
    validate_instance,
    with_budget,
)

log = logging.getLogger(__name__)

STATUS_OPTIMAL = "Optimal"
STATUS_TIME_LIMIT = "TimeLimit"
STATUS_NODE_LIMIT = "NodeLimit"

INT_TOL = 1e-6
QUANTUM_KW = 1e-3  # objectives are integral in milli-kW
GAP_DENOM_EPS = 1e-9
# padding over the certified LP bound, absorbing the float error of the
# certificate arithmetic itself; far below the milli-kW fathoming slack
SAFE_PAD_KW = 1e-5


@dataclass(frozen=True)
class SearchParams:
    gap_tol: float = 1e-4
    time_limit_s: float = 1800.0
    node_limit: int | None = None


@dataclass(frozen=True)
class Node:
    """One open subproblem: bound overrides on integer variables."""

    seq: int
    bounds: Mapping[str, tuple[float, float]]
    bound_kw: float


@dataclass(frozen=True)
class SolveReport:
    objective_kw: float
    satisfied_pct: float
    bound_kw: float
    gap: float
    nodes: int
    wall_time_s: float
    status: str
    opened_l2: int
    opened_l3: int


def report_to_obj(report: SolveReport) -> dict:
    return {
        "objective_kw": report.objective_kw,
        "satisfied_pct": report.satisfied_pct,
        "bound_kw": report.bound_kw,
        "gap": report.gap,
        "nodes": report.nodes,
        "wall_time_s": report.wall_time_s,
        "status": report.status,
        "opened_l2": report.opened_l2,
        "opened_l3": report.opened_l3,
    }


def _node_var_bounds(relax: Relaxation, node: Node) -> tuple[list[float], list[float]]:
    lower = list(relax.lp.lower)
    upper = list(relax.lp.upper)
    cols = relax.int_columns()
    for name, (lo, hi) in node.bounds.items():
        col = cols[name]
        lower[col] = max(lower[col], lo)
        upper[col] = min(upper[col], hi)
    return lower, upper


def _int_values(relax: Relaxation, x: Sequence[float]) -> dict[str, float]:
    return {v.name: x[v.column] for v in relax.int_vars}


def _most_fractional(relax: Relaxation, values: Mapping[str, float]) -> str | None:
    """Branching variable per the fixed rule, or None when integral.

    Most fractional first; ties resolved by the registry order, which is
    z before y before x and then owner id.
    """
    best_name = None
    best_score = math.inf
    for var in relax.int_vars:
        v = values[var.name]
        frac = abs(v - round(v))
        if frac <= INT_TOL:
            continue
        score = abs(frac - 0.5)
        if score < best_score - 1e-12:
            best_score = score
            best_name = var.name
    return best_name


def branch(relax: Relaxation, node: Node,
           values: Mapping[str, float]) -> tuple[Node, Node] | None:
    """Split a node on its most fractional purchase variable.

    Returns None for integral solutions.  Child sequence numbers are
    placeholders; the search loop stamps real ones.
    """
    name = _most_fractional(relax, values)
    if name is None:
        return None
    v = values[name]
    lo_child = dict(node.bounds)
    hi_child = dict(node.bounds)
    old = node.bounds.get(name, (0.0, math.inf))
    lo_child[name] = (old[0], float(math.floor(v)))
    hi_child[name] = (float(math.ceil(v)), old[1])
    down = Node(seq=-1, bounds=lo_child, bound_kw=node.bound_kw)
    up = Node(seq=-1, bounds=hi_child, bound_kw=node.bound_kw)
    return down, up


def _plan_from_values(instance: Instance, values: Mapping[str, float],
                      relax: Relaxation) -> PlacementPlan:
    """Plan for an integral relaxation solution."""
    added = {}
    opened = {}
    for var in relax.int_vars:
        v = round(values[var.name])
        if v <= 0:
            continue
        if var.kind == "x":
            added[var.owner] = int(v)
        elif var.kind == "y":
            opened[var.owner] = (var.level, int(v))
    return make_plan(instance, added, opened)


def _rounded_plan(instance: Instance, relax: Relaxation,
                  values: Mapping[str, float],
                  x_full: Sequence[float]) -> PlacementPlan:
    """Rounding heuristic: floor x and y, open where y survived, then drop
    the least productive purchases until the budget holds."""
    added = {}
    for var in relax.int_vars:
        if var.kind == "x":
            n = int(math.floor(values[var.name] + INT_TOL))
            if n > 0:
                added[var.owner] = n
    y_rounded: dict[str, dict[int, int]] = {}
    for var in relax.int_vars:
        if var.kind == "y":
            n = int(math.floor(values[var.name] + INT_TOL))
            if n > 0:
                y_rounded.setdefault(var.owner, {})[var.level] = n
    opened = {}
    for cid, by_level in y_rounded.items():
        # one level per candidate: keep the bigger rounded count, level 2
        # on ties since it is the cheaper hardware
        level = max(sorted(by_level), key=lambda lv: by_level[lv])
        opened[cid] = (level, by_level[level])

    costs = instance.costs
    budget = Fraction(costs.budget)

    def throughput_per_outlet(site_id: str, cols, outlets: int) -> float:
        if outlets <= 0:
            return 0.0
        return sum(x_full[c] for c in cols) / outlets

    while True:
        current = Fraction(0)
        for sid, n in added.items():
            current += Fraction(costs.add_outlet_cost[sid]) * n
        for cid, (level, n) in opened.items():
            cand = instance.candidate(cid)
            current += Fraction(cand.open_cost(level)) + Fraction(cand.outlet_cost(level)) * n
        if current <= budget:
            break
        # drop the outlet with the least LP throughput per unit of refund
        choices = []
        for sid in sorted(added):
            value = throughput_per_outlet(
                sid, relax.station_flow_cols[sid],
                instance.station(sid).outlets + added[sid])
            refund = Fraction(costs.add_outlet_cost[sid])
            choices.append((value / float(refund) if refund else math.inf,
                            1, sid))
        for cid in sorted(opened):
            level, n = opened[cid]
            cand = instance.candidate(cid)
            refund = Fraction(cand.outlet_cost(level))
            if n == 1:
                refund += Fraction(cand.open_cost(level))
            value = throughput_per_outlet(cid, relax.candidate_flow_cols[cid], n)
            choices.append((value / float(refund) if refund else math.inf,
                            0, cid))
        if not choices:
            break
        choices.sort(key=lambda c: (c[0], c[1], c[2]))
        _, kind, owner = choices[0]
        if kind == 1:
            added[owner] -= 1
            if added[owner] == 0:
                del added[owner]
        else:
            level, n = opened[owner]
            if n == 1:
                del opened[owner]
            else:
                opened[owner] = (level, n - 1)
    return make_plan(instance, added, opened)


def _satisfied_mkw(result: AssignmentResult) -> int:
    return round(result.satisfied_kw * 1000.0)


def optimize(instance: Instance, params: SearchParams = SearchParams(), *,
             threads: int = 1
             ) -> tuple[PlacementPlan, AssignmentResult, SolveReport]:
    """Best plan within budget, with its exact evaluation and a report.

    The zero plan seeds the incumbent, so a result always exists; limit
    terminations return the incumbent with its proven gap.
    """
    violations = validate_instance(instance)
    if violations:
        raise InvalidInstanceError(violations)
    started = time.monotonic()

    relax = build_relaxation(instance)
    network = relax.network

    incumbent_plan = EMPTY_PLAN
    incumbent_result = evaluate_on_network(network, None, threads=threads)
    incumbent_mkw = _satisfied_mkw(incumbent_result)
    tried_plans: set[tuple] = set()

    # no plan can push more than the total quantized demand through the
    # source arcs, so an incumbent at that level ends the search
    demand_cap_mkw = sum(
        cap
        for t in range(network.n_periods)
        for arc, cap in zip(network.arcs, network.capacities_mkw(t))
        if arc.kind == ARC_DEMAND)

    def improvement_floor() -> float:
        # a node below this floor cannot hold a plan that beats the
        # incumbent by more than the gap tolerance: attainable objectives
        # are milli-kW multiples, so anything within 0.9 of a quantum of
        # the incumbent IS the incumbent value or worse
        inc_kw = incumbent_mkw / 1000.0
        return inc_kw + max(params.gap_tol * max(inc_kw, GAP_DENOM_EPS),
                            0.9 * QUANTUM_KW)

    def consider(plan: PlacementPlan) -> None:
        nonlocal incumbent_plan, incumbent_result, incumbent_mkw
        key = (tuple(sorted(plan.added_outlets.items())),
               tuple(sorted(plan.opened.items())))
        if key in tried_plans:
            return
        tried_plans.add(key)
        if Fraction(plan.total_cost) > Fraction(instance.costs.budget):
            return
        result = evaluate_on_network(network, plan, threads=threads)
        if _satisfied_mkw(result) > incumbent_mkw:
            incumbent_plan, incumbent_result = plan, result
            incumbent_mkw = _satisfied_mkw(result)

    seq = 0
    root = Node(seq=seq, bounds={}, bound_kw=math.inf)
    heap: list[tuple[float, int, Node]] = []
    heapq.heappush(heap, (-root.bound_kw, -root.seq, root))
    nodes_solved = 0
    status = STATUS_OPTIMAL
    exit_bound_kw: float | None = None

    while heap:
        if incumbent_mkw >= demand_cap_mkw:
            exit_bound_kw = incumbent_mkw / 1000.0
            heap.clear()
            break
        if time.monotonic() - started > params.time_limit_s:
            status = STATUS_TIME_LIMIT
            break
        if params.node_limit is not None and nodes_solved >= params.node_limit:
            status = STATUS_NODE_LIMIT
            break
        _, _, node = heapq.heappop(heap)
        if node.bound_kw <= improvement_floor():
            continue

        lower, upper = _node_var_bounds(relax, node)
        sol = relax.solve(lower, upper)
        nodes_solved += 1
        if sol.status == INFEASIBLE:
            continue
        if sol.status == ITERATION_LIMIT:
            # the node result is unusable; put the node back so the final
            # bound stays honest, and stop with the incumbent
            log.warning("node %d hit the LP iteration limit", node.seq)
            status = STATUS_NODE_LIMIT
            heapq.heappush(heap, (-node.bound_kw, -node.seq, node))
            break
        if sol.status != OPTIMAL:
            raise ArithmeticError(f"relaxation came back {sol.status}")

        node_cert = sol.safe_bound / 1000.0 + SAFE_PAD_KW
        if not math.isfinite(node_cert):
            node_cert = node.bound_kw
        bound_kw = min(node.bound_kw, node_cert)
        if bound_kw <= improvement_floor():
            continue

        values = _int_values(relax, sol.x)
        children = branch(relax, replace(node, bound_kw=bound_kw), values)
        if children is None:
            consider(_plan_from_values(instance, values, relax))
            continue

        heur_plan = _rounded_plan(instance, relax, values, sol.x)
        if not heur_plan.is_empty():
            consider(heur_plan)

        for child in children:
            seq += 1
            stamped = replace(child, seq=seq, bound_kw=bound_kw)
            heapq.heappush(heap, (-stamped.bound_kw, -stamped.seq, stamped))

        if heap:
            top_bound = -heap[0][0]
            inc_kw = incumbent_mkw / 1000.0
            gap_now = (max(top_bound, inc_kw) - inc_kw) / max(inc_kw,
                                                              GAP_DENOM_EPS)
            if gap_now <= params.gap_tol:
                exit_bound_kw = max(top_bound, inc_kw)
                heap.clear()
                break

    inc_kw = incumbent_mkw / 1000.0
    # every pruned subtree sits at or under the improvement floor, and
    # attainable objectives are milli-kW multiples, so round the ceiling
    # down to the quantum before folding it in
    pruned_ceiling = max(inc_kw,
                         math.floor(improvement_floor() * 1000.0 + 1e-9) / 1000.0)
    final_bound = pruned_ceiling
    if heap:
        # limit exit: the heap still holds every open node; a never-solved
        # node carries an infinite bound, capped by total demand
        demand_cap = instance.total_demand_kw()
        open_bounds = [n.bound_kw if math.isfinite(n.bound_kw) else demand_cap
                       for _, _, n in heap]
        final_bound = max([final_bound] + open_bounds)
    elif exit_bound_kw is not None:
        final_bound = max(final_bound, exit_bound_kw)
    gap = (final_bound - inc_kw) / max(inc_kw, GAP_DENOM_EPS)

    opened_l2 = sum(1 for lv, _ in incumbent_plan.opened.values() if lv == LEVEL_FAST)
    opened_l3 = sum(1 for lv, _ in incumbent_plan.opened.values() if lv == LEVEL_RAPID)
    if opened_l3:
        log.info("plan opens %d level-3 stations", opened_l3)

    report = SolveReport(
        objective_kw=incumbent_result.satisfied_kw,
        satisfied_pct=incumbent_result.satisfied_pct(),
        bound_kw=final_bound,
        gap=gap,
        nodes=nodes_solved,
        wall_time_s=time.monotonic() - started,
        status=status,
        opened_l2=opened_l2,
        opened_l3=opened_l3,
    )
    return incumbent_plan, incumbent_result, report


@dataclass(frozen=True)
class SweepRow:
    budget: float
    satisfied_kw: float
    satisfied_pct: float
    bound_kw: float
    gap: float
    nodes: int
    wall_time_s: float
    status: str


def sweep(instance: Instance, budgets: Sequence[float],
          params: SearchParams = SearchParams(), *,
          threads: int = 1) -> list[SweepRow]:
    """Optimize at each budget; limit hits mark their row but the sweep
    keeps going."""
    rows = []
    for budget in budgets:
        _, result, report = optimize(with_budget(instance, budget), params,
                                     threads=threads)
        rows.append(SweepRow(
            budget=float(budget),
            satisfied_kw=result.satisfied_kw,
            satisfied_pct=result.satisfied_pct(),
            bound_kw=report.bound_kw,
            gap=report.gap,
            nodes=report.nodes,
            wall_time_s=report.wall_time_s,
            status=report.status,
        ))
    return rows


def sweep_to_obj(rows: Sequence[SweepRow]) -> list[dict]:
    return [
        {
            "budget": r.budget,
            "satisfied_kw": r.satisfied_kw,
            "satisfied_pct": r.satisfied_pct,
            "bound_kw": r.bound_kw,
            "gap": r.gap,
            "nodes": r.nodes,
            "wall_time_s": r.wall_time_s,
            "status": r.status,
        }
        for r in rows
    ]


def plan_map_layer(instance: Instance, plan: PlacementPlan) -> dict:
    """GeoJSON layer of expanded stations and newly opened candidates,
    sized by the outlets involved."""
    features = []
    for sid in sorted(plan.added_outlets):
        s = instance.station(sid)
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point",
                         "coordinates": [s.location.lon, s.location.lat]},
            "properties": {"site": sid, "kind": "existing", "level": s.level,
                           "outlets_added": plan.added_outlets[sid]},
        })
    for cid in sorted(plan.opened):
        c = instance.candidate(cid)
        level, outlets = plan.opened[cid]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point",
                         "coordinates": [c.location.lon, c.location.lat]},
            "properties": {"site": cid, "kind": "new", "level": level,
                           "outlets": outlets},
        })
    return {"type": "FeatureCollection", "features": features}
