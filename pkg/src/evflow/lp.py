"""Bounded-variable linear programming for relaxation bounds.

The solver is a revised simplex over box-bounded variables.  Each row gets
a slack column (fixed at zero for equality rows), so a basis of slacks is
available whenever the all-lower-bounds point is feasible; otherwise
artificial columns drive a phase-1 feasibility solve.  The basis inverse is
maintained with eta updates and refactorized periodically, Dantzig pricing
hands over to Bland's rule after a degeneracy streak, and a final
refactorization polishes the reported solution.

The relaxation builder mirrors the placement program: per-period flow
conservation, capacity rows linking flows to outlet purchases, the budget
row, and the level linking/exclusivity rows, with purchase variables left
continuous inside their branch bounds.  Flow units are milli-kW, matching
the flow network's quantization, so optima line up with the combinatorial
solver beyond float noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geo import (
    ARC_CANDIDATE,
    ARC_DEMAND,
    ARC_MATCH,
    ARC_STATION,
    FlowNetwork,
    build_flow_network,
)
from .model import LEVEL_FAST, LEVEL_RAPID, Instance

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
ITERATION_LIMIT = "IterationLimit"

SENSE_LE = "<="
SENSE_EQ = "=="
SENSE_GE = ">="

FEAS_TOL = 1e-7
COST_TOL = 1e-7
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
BLAND_AFTER = 50

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2
_FIXED = 3
_FREE = 4


@dataclass(frozen=True)
class LinearProgram:
    """A box-bounded LP in sparse triplet form."""

    n_vars: int
    maximize: bool
    objective: tuple[float, ...]
    entries: tuple[tuple[int, int, float], ...]
    senses: tuple[str, ...]
    rhs: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    names: tuple[str, ...] = ()

    def n_rows(self) -> int:
        return len(self.senses)


@dataclass(frozen=True)
class LpSolution:
    status: str
    objective: float
    x: tuple[float, ...]
    duals: tuple[float, ...]
    reduced_costs: tuple[float, ...]
    basis: tuple[str, ...]
    iterations: int
    # rigorous one-sided bound on the true optimum built from the final
    # duals: an upper bound when maximizing, a lower bound when minimizing.
    # Valid regardless of how converged the primal is; nan when no basis
    # exists, +-inf when an open variable bound voids the certificate.
    safe_bound: float = math.nan


def _check_lp(lp: LinearProgram) -> None:
    m = lp.n_rows()
    if len(lp.objective) != lp.n_vars:
        raise ValueError("objective length does not match n_vars")
    if len(lp.rhs) != m:
        raise ValueError("rhs length does not match senses")
    if len(lp.lower) != lp.n_vars or len(lp.upper) != lp.n_vars:
        raise ValueError("bound vectors do not match n_vars")
    for sense in lp.senses:
        if sense not in (SENSE_LE, SENSE_EQ, SENSE_GE):
            raise ValueError(f"unknown row sense {sense!r}")
    for j, (lo, hi) in enumerate(zip(lp.lower, lp.upper)):
        if lo > hi:
            raise ValueError(f"variable {j}: lower {lo} above upper {hi}")
        if math.isinf(lo) and lo > 0 or math.isinf(hi) and hi < 0:
            raise ValueError(f"variable {j}: bounds must admit a value")
    for row, col, _ in lp.entries:
        if not (0 <= row < m and 0 <= col < lp.n_vars):
            raise ValueError(f"triplet ({row}, {col}) out of range")


class CompiledLp:
    """Dense working form of an LP, reusable across bound changes.

    Branch-and-bound solves the same constraint matrix hundreds of times
    with different variable bounds; compiling once keeps the per-node cost
    down to the simplex iterations themselves.
    """

    def __init__(self, lp: LinearProgram):
        _check_lp(lp)
        self.lp = lp
        m = lp.n_rows()
        n = lp.n_vars
        self.m = m
        self.n = n
        self.total = n + m
        a = np.zeros((m, self.total))
        if lp.entries:
            rows = np.fromiter((e[0] for e in lp.entries), dtype=np.int64,
                               count=len(lp.entries))
            cols = np.fromiter((e[1] for e in lp.entries), dtype=np.int64,
                               count=len(lp.entries))
            vals = np.fromiter((e[2] for e in lp.entries), dtype=float,
                               count=len(lp.entries))
            np.add.at(a, (rows, cols), vals)
        for i in range(m):
            a[i, n + i] = 1.0
        self.a = a
        self.b = np.array(lp.rhs, dtype=float)
        sign = -1.0 if lp.maximize else 1.0
        self.c = np.zeros(self.total)
        self.c[:n] = sign * np.array(lp.objective, dtype=float)
        self.slack_lower = np.zeros(m)
        self.slack_upper = np.zeros(m)
        for i, sense in enumerate(lp.senses):
            if sense == SENSE_LE:
                self.slack_upper[i] = math.inf
            elif sense == SENSE_GE:
                self.slack_lower[i] = -math.inf

    def solve(self, lower: Sequence[float] | None = None,
              upper: Sequence[float] | None = None,
              max_iterations: int = 1_000_000) -> LpSolution:
        lo = np.empty(self.total)
        hi = np.empty(self.total)
        lo[:self.n] = self.lp.lower if lower is None else lower
        hi[:self.n] = self.lp.upper if upper is None else upper
        lo[self.n:] = self.slack_lower
        hi[self.n:] = self.slack_upper
        if np.any(lo > hi):
            return self._solution(INFEASIBLE, None, 0)
        state = _SimplexState(self.a, self.b, lo, hi)
        status, iters = state.run(self.c, max_iterations)
        return self._solution(status, state, iters)

    def _solution(self, status: str, state: _SimplexState | None,
                  iterations: int) -> LpSolution:
        n = self.n
        sign = -1.0 if self.lp.maximize else 1.0
        if state is None or status not in (OPTIMAL, ITERATION_LIMIT):
            return LpSolution(status=status, objective=math.nan,
                              x=(math.nan,) * n, duals=(), reduced_costs=(),
                              basis=(), iterations=iterations)
        # the state may carry extra artificial columns from phase 1
        c_pad = np.zeros(state.a.shape[1])
        c_pad[:self.total] = self.c
        x = state.x
        objective = sign * float(c_pad @ x)
        y = state.duals(c_pad)
        d = c_pad - y @ state.a
        statuses = {_AT_LOWER: "lower", _AT_UPPER: "upper", _BASIC: "basic",
                    _FIXED: "fixed", _FREE: "free"}
        return LpSolution(
            status=status,
            objective=objective,
            x=tuple(float(v) for v in x[:n]),
            duals=tuple(float(sign * v) for v in y),
            reduced_costs=tuple(float(sign * v) for v in d[:n]),
            basis=tuple(statuses[int(s)] for s in state.vstat[:self.total]),
            iterations=iterations,
            safe_bound=sign * state.certified_bound(c_pad),
        )


class _SimplexState:
    """One solve's working arrays: values, basis, and the basis inverse."""

    def __init__(self, a: np.ndarray, b: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray):
        self.a = a
        self.b = b
        self.m, width = a.shape
        self.lower = lower
        self.upper = upper
        self.x = np.empty(width)
        self.vstat = np.empty(width, dtype=np.int8)
        self.basis = np.empty(self.m, dtype=np.int64)
        self.binv = np.eye(self.m)
        self.n_art = 0

    # -- setup -------------------------------------------------------------

    def _start_value(self, j: int) -> tuple[float, int]:
        lo, hi = self.lower[j], self.upper[j]
        if lo == hi:
            return lo, _FIXED
        if math.isfinite(lo):
            return lo, _AT_LOWER
        if math.isfinite(hi):
            return hi, _AT_UPPER
        return 0.0, _FREE

    def _install_start(self) -> bool:
        """Slack basis start; returns True when artificials are needed."""
        n_struct = self.a.shape[1] - self.m
        for j in range(n_struct):
            self.x[j], self.vstat[j] = self._start_value(j)
        raw = self.b - self.a[:, :n_struct] @ self.x[:n_struct]
        art_rows = []
        for i in range(self.m):
            j = n_struct + i
            lo, hi = self.lower[j], self.upper[j]
            if lo - FEAS_TOL <= raw[i] <= hi + FEAS_TOL:
                self.x[j] = raw[i]
                self.vstat[j] = _BASIC
                self.basis[i] = j
            else:
                self.x[j] = min(max(raw[i], lo), hi)
                self.vstat[j] = _FIXED if lo == hi else (
                    _AT_LOWER if raw[i] < lo else _AT_UPPER)
                art_rows.append((i, raw[i] - self.x[j]))
        if not art_rows:
            return False
        # widen the arrays with one signed artificial column per bad row
        extra = len(art_rows)
        width = self.a.shape[1]
        a2 = np.zeros((self.m, width + extra))
        a2[:, :width] = self.a
        self.a = a2
        for arr_name in ("x", "lower", "upper"):
            old = getattr(self, arr_name)
            grown = np.zeros(width + extra)
            grown[:width] = old
            setattr(self, arr_name, grown)
        vstat2 = np.empty(width + extra, dtype=np.int8)
        vstat2[:width] = self.vstat
        self.vstat = vstat2
        for k, (row, resid) in enumerate(art_rows):
            j = width + k
            self.a[row, j] = 1.0 if resid >= 0 else -1.0
            self.lower[j] = 0.0
            self.upper[j] = math.inf
            self.x[j] = abs(resid)
            self.vstat[j] = _BASIC
            self.basis[row] = j
        self.n_art = extra
        return True

    # -- linear algebra ----------------------------------------------------

    def refactorize(self) -> None:
        basis_cols = self.a[:, self.basis]
        self.binv = np.linalg.inv(basis_cols)
        mask = np.ones(self.a.shape[1], dtype=bool)
        mask[self.basis] = False
        rhs = self.b - self.a[:, mask] @ self.x[mask]
        self.x[self.basis] = self.binv @ rhs

    def duals(self, c: np.ndarray) -> np.ndarray:
        return c[self.basis] @ self.binv

    def certified_bound(self, c: np.ndarray) -> float:
        """Rigorous lower bound on the minimum from the current duals.

        Every working row is an equality, so any dual vector y gives
        min cx >= y b + sum_j min(rc_j l_j, rc_j u_j).  Slack columns open
        toward infinity force a sign clamp on their row's dual, after which
        they contribute nothing.  A structural column that is unbounded in
        the direction its reduced cost pushes sends the bound to -inf.
        """
        width = self.a.shape[1]
        n_slack_start = width - self.m - self.n_art
        y = self.duals(c).copy()
        for i in range(self.m):
            j = n_slack_start + i
            if math.isinf(self.upper[j]):
                y[i] = min(y[i], 0.0)
            if math.isinf(self.lower[j]):
                y[i] = max(y[i], 0.0)
        rc = c - y @ self.a
        with np.errstate(invalid="ignore"):
            at_lower = np.where(rc == 0.0, 0.0, rc * self.lower)
            at_upper = np.where(rc == 0.0, 0.0, rc * self.upper)
        return float(y @ self.b + np.minimum(at_lower, at_upper).sum())

    # -- main loop ---------------------------------------------------------

    def run(self, c_full: np.ndarray, max_iterations: int) -> tuple[str, int]:
        iterations = 0
        needs_phase1 = self._install_start()
        if needs_phase1:
            # artificial basis columns carry signs, so the inverse is not
            # the identity any more
            self.refactorize()
            c1 = np.zeros(self.a.shape[1])
            c1[self.a.shape[1] - self.n_art:] = 1.0
            status, iterations = self._phase(c1, max_iterations, phase_one=True)
            if status != OPTIMAL:
                return status, iterations
            art_value = float(c1 @ self.x)
            if art_value > 1e-7 * (1.0 + float(np.abs(self.b).sum())):
                return INFEASIBLE, iterations
            # freeze the artificials at zero for phase 2
            first_art = self.a.shape[1] - self.n_art
            self.lower[first_art:] = 0.0
            self.upper[first_art:] = 0.0
            for j in range(first_art, self.a.shape[1]):
                if self.vstat[j] != _BASIC:
                    self.vstat[j] = _FIXED
                    self.x[j] = 0.0
        c = np.zeros(self.a.shape[1])
        c[:len(c_full)] = c_full
        status, more = self._phase(c, max_iterations - iterations,
                                   phase_one=False)
        iterations += more
        if status == OPTIMAL:
            self.refactorize()
        return status, iterations

    def _phase(self, c: np.ndarray, max_iterations: int,
               phase_one: bool) -> tuple[str, int]:
        iterations = 0
        degenerate_streak = 0
        bland = False
        pivots_since_refactor = 0
        while True:
            if iterations >= max_iterations:
                return ITERATION_LIMIT, iterations
            y = c[self.basis] @ self.binv
            d = c - y @ self.a
            can_up = ((self.vstat == _AT_LOWER) | (self.vstat == _FREE)) \
                & (d < -COST_TOL)
            can_down = ((self.vstat == _AT_UPPER) | (self.vstat == _FREE)) \
                & (d > COST_TOL)
            eligible = can_up | can_down
            if not eligible.any():
                return OPTIMAL, iterations
            idx = np.nonzero(eligible)[0]
            if bland:
                j = int(idx[0])
            else:
                j = int(idx[np.argmax(np.abs(d[idx]))])
            direction = 1.0 if can_up[j] else -1.0

            w = self.binv @ self.a[:, j]
            g = w * direction
            xb = self.x[self.basis]
            lob = self.lower[self.basis]
            upb = self.upper[self.basis]

            t_best = self.upper[j] - self.lower[j]  # bound-flip step
            leave_row = -1
            hit_lower = False
            for i in range(self.m):
                gi = g[i]
                if gi > PIVOT_TOL:
                    room = xb[i] - lob[i]
                    ti = room / gi
                    toward_lower = True
                elif gi < -PIVOT_TOL:
                    room = xb[i] - upb[i]
                    ti = room / gi
                    toward_lower = False
                else:
                    continue
                if ti < -1e-12:
                    ti = 0.0
                if ti < t_best - 1e-12 or (
                        leave_row >= 0 and ti <= t_best + 1e-12
                        and self._prefer_leave(i, leave_row, g, bland)):
                    t_best = ti
                    leave_row = i
                    hit_lower = toward_lower
            if math.isinf(t_best):
                if phase_one:
                    raise ArithmeticError("phase 1 cannot be unbounded")
                return UNBOUNDED, iterations

            t = max(t_best, 0.0)
            self.x[self.basis] = xb - g * t
            self.x[j] += direction * t
            if leave_row < 0:
                # bound flip: j traverses its whole range, basis unchanged
                self.vstat[j] = _AT_UPPER if direction > 0 else _AT_LOWER
                self.x[j] = self.upper[j] if direction > 0 else self.lower[j]
            else:
                out = self.basis[leave_row]
                self.x[out] = lob[leave_row] if hit_lower else upb[leave_row]
                if self.lower[out] == self.upper[out]:
                    self.vstat[out] = _FIXED
                else:
                    self.vstat[out] = _AT_LOWER if hit_lower else _AT_UPPER
                self.basis[leave_row] = j
                self.vstat[j] = _BASIC
                br = self.binv[leave_row] / w[leave_row]
                self.binv -= np.outer(w, br)
                self.binv[leave_row] = br
                pivots_since_refactor += 1
                if pivots_since_refactor >= REFACTOR_EVERY:
                    self.refactorize()
                    pivots_since_refactor = 0

            iterations += 1
            if t <= PIVOT_TOL:
                degenerate_streak += 1
                if degenerate_streak >= BLAND_AFTER:
                    bland = True
            else:
                degenerate_streak = 0
                bland = False

    def _prefer_leave(self, i: int, current: int, g: np.ndarray,
                      bland: bool) -> bool:
        if bland:
            return self.basis[i] < self.basis[current]
        return abs(g[i]) > abs(g[current])


def solve_lp(lp: LinearProgram, max_iterations: int = 1_000_000) -> LpSolution:
    """Solve a box-bounded LP; see LpSolution.status for the outcome."""
    return CompiledLp(lp).solve(max_iterations=max_iterations)


def to_lp_text(lp: LinearProgram) -> str:
    """Render in the common LP text interchange format."""
    names = list(lp.names) if lp.names else [f"x{j}" for j in range(lp.n_vars)]
    rows: list[list[str]] = [[] for _ in range(lp.n_rows())]
    for row, col, coef in lp.entries:
        rows[row].append(f"{'+' if coef >= 0 else '-'} {abs(coef):.12g} {names[col]}")
    lines = ["Maximize" if lp.maximize else "Minimize"]
    obj_terms = [f"{'+' if c >= 0 else '-'} {abs(c):.12g} {names[j]}"
                 for j, c in enumerate(lp.objective) if c != 0.0] or ["0 " + names[0]]
    lines.append(" obj: " + " ".join(obj_terms).lstrip("+ "))
    lines.append("Subject To")
    sense_text = {SENSE_LE: "<=", SENSE_EQ: "=", SENSE_GE: ">="}
    for i, sense in enumerate(lp.senses):
        body = " ".join(rows[i]).lstrip("+ ") if rows[i] else "0 " + names[0]
        lines.append(f" r{i}: {body} {sense_text[sense]} {lp.rhs[i]:.12g}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == hi:
            lines.append(f" {names[j]} = {lo:.12g}")
        elif math.isinf(hi) and lo == 0.0:
            continue
        elif math.isinf(hi):
            lines.append(f" {names[j]} >= {lo:.12g}")
        elif math.isinf(lo):
            lines.append(f" -inf <= {names[j]} <= {hi:.12g}")
        else:
            lines.append(f" {lo:.12g} <= {names[j]} <= {hi:.12g}")
    lines.append("End")
    return "\n".join(lines) + "\n"


# --- relaxation of the placement program ----------------------------------


@dataclass(frozen=True)
class IntVar:
    """One integer decision of the placement program, as an LP column."""

    name: str       # "x:<station>", "y2:<candidate>", "z3:<candidate>", ...
    kind: str       # "x", "y" or "z"
    level: int | None
    owner: str      # station or candidate id
    column: int
    upper: float


@dataclass(frozen=True)
class Relaxation:
    """The placement LP with its integer-variable registry.

    ``int_vars`` is ordered z's first, then y's, then x's, each block by
    owner id, which fixes branching tie-breaks.  ``compiled`` is reusable:
    branch nodes only swap variable bounds.  The flow-column maps give each
    site's per-period throughput columns, one per period.
    """

    lp: LinearProgram
    network: FlowNetwork
    int_vars: tuple[IntVar, ...]
    station_flow_cols: Mapping[str, tuple[int, ...]]
    candidate_flow_cols: Mapping[str, tuple[int, ...]]
    compiled: CompiledLp = field(repr=False)

    def int_columns(self) -> dict[str, int]:
        return {v.name: v.column for v in self.int_vars}

    def solve(self, lower: Sequence[float] | None = None,
              upper: Sequence[float] | None = None,
              max_iterations: int = 1_000_000) -> LpSolution:
        return self.compiled.solve(lower, upper, max_iterations)


def build_relaxation(instance: Instance,
                     bounds: Mapping[str, tuple[float, float]] | None = None
                     ) -> Relaxation:
    """LP relaxation of the placement program on the quantized network.

    Flow variables are one per arc per period in milli-kW; purchase
    variables are continuous within [0, cap], tightened by ``bounds``
    entries keyed on integer-variable names.  Setting a z upper bound to 0
    closes that level: the linking row then forces the matching y to 0.
    """
    network = build_flow_network(instance, include_candidates=True)
    n_periods = network.n_periods
    arcs = network.arcs
    n_arcs = len(arcs)

    objective: list[float] = []
    lower: list[float] = []
    upper: list[float] = []
    names: list[str] = []

    od_pos = {od_id: i for i, od_id in enumerate(network.od_ids)}

    def add_var(name: str, lo: float, hi: float, obj: float = 0.0) -> int:
        names.append(name)
        lower.append(lo)
        upper.append(hi)
        objective.append(obj)
        return len(names) - 1

    # flow variables, period-major then arc order; every range is finite so
    # that the pricing-tolerance bound margin stays valid
    station_headroom = {s.id: s.outlet_headroom() for s in instance.stations}
    station_pos0 = {sid: i for i, sid in enumerate(network.station_ids)}
    d_cap_mkw = float(
        instance.costs.max_new_outlets_l2 * network.candidate_unit_l2_mkw
        + instance.costs.max_new_outlets_l3 * network.candidate_unit_l3_mkw)
    flow_col = {}
    for t in range(n_periods):
        for arc in arcs:
            if arc.kind == ARC_DEMAND:
                cap = float(network.demand_mkw[t][od_pos[arc.od_id]])
                col = add_var(f"a[{t},{arc.od_id}]", 0.0, cap, obj=1.0)
            elif arc.kind == ARC_MATCH:
                cap = float(network.demand_mkw[t][od_pos[arc.od_id]])
                col = add_var(f"b[{t},{arc.od_id},{arc.site_id}]", 0.0, cap)
            elif arc.kind == ARC_STATION:
                pos = station_pos0[arc.site_id]
                cap = float(network.station_cap_mkw(
                    t, pos, station_headroom[arc.site_id]))
                col = add_var(f"c[{t},{arc.site_id}]", 0.0, cap)
            else:
                col = add_var(f"d[{t},{arc.site_id}]", 0.0, d_cap_mkw)
            flow_col[(t, arc.index)] = col

    # purchase variables: z's, then y's, then x's, stable owner order
    int_vars: list[IntVar] = []
    costs = instance.costs
    cand_ids = list(network.candidate_ids)
    z_col: dict[tuple[str, int], int] = {}
    y_col: dict[tuple[str, int], int] = {}
    x_col: dict[str, int] = {}
    for cid in cand_ids:
        for level in (LEVEL_FAST, LEVEL_RAPID):
            name = f"z{level}:{cid}"
            col = add_var(name, 0.0, 1.0)
            z_col[(cid, level)] = col
            int_vars.append(IntVar(name=name, kind="z", level=level,
                                   owner=cid, column=col, upper=1.0))
    for cid in cand_ids:
        for level in (LEVEL_FAST, LEVEL_RAPID):
            cap = float(costs.new_outlet_cap(level))
            name = f"y{level}:{cid}"
            col = add_var(name, 0.0, cap)
            y_col[(cid, level)] = col
            int_vars.append(IntVar(name=name, kind="y", level=level,
                                   owner=cid, column=col, upper=cap))
    for s in instance.stations:
        name = f"x:{s.id}"
        headroom = float(s.outlet_headroom())
        col = add_var(name, 0.0, headroom)
        x_col[s.id] = col
        int_vars.append(IntVar(name=name, kind="x", level=None,
                               owner=s.id, column=col, upper=headroom))

    entries: list[tuple[int, int, float]] = []
    senses: list[str] = []
    rhs: list[float] = []

    def add_row(sense: str, rhs_value: float) -> int:
        senses.append(sense)
        rhs.append(rhs_value)
        return len(senses) - 1

    match_by_od: dict[str, list[int]] = {}
    match_by_site: dict[str, list[int]] = {}
    for arc in arcs:
        if arc.kind == ARC_MATCH:
            match_by_od.setdefault(arc.od_id, []).append(arc.index)
            match_by_site.setdefault(arc.site_id, []).append(arc.index)

    station_pos = {sid: i for i, sid in enumerate(network.station_ids)}
    for t in range(n_periods):
        for arc in arcs:
            if arc.kind == ARC_DEMAND:
                row = add_row(SENSE_EQ, 0.0)
                entries.append((row, flow_col[(t, arc.index)], 1.0))
                for m_idx in match_by_od.get(arc.od_id, ()):
                    entries.append((row, flow_col[(t, m_idx)], -1.0))
            elif arc.kind == ARC_STATION:
                row = add_row(SENSE_EQ, 0.0)
                for m_idx in match_by_site.get(arc.site_id, ()):
                    entries.append((row, flow_col[(t, m_idx)], 1.0))
                entries.append((row, flow_col[(t, arc.index)], -1.0))
                cap_row = add_row(
                    SENSE_LE, float(network.station_cap_mkw(t, station_pos[arc.site_id])))
                entries.append((cap_row, flow_col[(t, arc.index)], 1.0))
                unit = float(network.station_unit_mkw[t][station_pos[arc.site_id]])
                entries.append((cap_row, x_col[arc.site_id], -unit))
            elif arc.kind == ARC_CANDIDATE:
                row = add_row(SENSE_EQ, 0.0)
                for m_idx in match_by_site.get(arc.site_id, ()):
                    entries.append((row, flow_col[(t, m_idx)], 1.0))
                entries.append((row, flow_col[(t, arc.index)], -1.0))
                cap_row = add_row(SENSE_LE, 0.0)
                entries.append((cap_row, flow_col[(t, arc.index)], 1.0))
                entries.append((cap_row, y_col[(arc.site_id, LEVEL_FAST)],
                                -float(network.candidate_unit_l2_mkw)))
                entries.append((cap_row, y_col[(arc.site_id, LEVEL_RAPID)],
                                -float(network.candidate_unit_l3_mkw)))

    budget_row = add_row(SENSE_LE, float(costs.budget))
    for s in instance.stations:
        price = costs.add_outlet_cost.get(s.id, 0.0)
        if price:
            entries.append((budget_row, x_col[s.id], float(price)))
    for cid in cand_ids:
        cand = instance.candidate(cid)
        for level in (LEVEL_FAST, LEVEL_RAPID):
            if cand.outlet_cost(level):
                entries.append((budget_row, y_col[(cid, level)],
                                float(cand.outlet_cost(level))))
            if cand.open_cost(level):
                entries.append((budget_row, z_col[(cid, level)],
                                float(cand.open_cost(level))))

    for cid in cand_ids:
        for level in (LEVEL_FAST, LEVEL_RAPID):
            row = add_row(SENSE_LE, 0.0)
            entries.append((row, y_col[(cid, level)], 1.0))
            entries.append((row, z_col[(cid, level)],
                            -float(costs.new_outlet_cap(level))))
        row = add_row(SENSE_LE, 1.0)
        entries.append((row, z_col[(cid, LEVEL_FAST)], 1.0))
        entries.append((row, z_col[(cid, LEVEL_RAPID)], 1.0))

    if bounds:
        by_name = {v.name: v for v in int_vars}
        for name, (lo, hi) in bounds.items():
            var = by_name[name]
            lower[var.column] = max(lower[var.column], float(lo))
            upper[var.column] = min(upper[var.column], float(hi))

    lp = LinearProgram(
        n_vars=len(names),
        maximize=True,
        objective=tuple(objective),
        entries=tuple(entries),
        senses=tuple(senses),
        rhs=tuple(rhs),
        lower=tuple(lower),
        upper=tuple(upper),
        names=tuple(names),
    )
    order = {"z": 0, "y": 1, "x": 2}
    ordered = tuple(sorted(int_vars,
                           key=lambda v: (order[v.kind], v.owner, v.level or 0)))
    station_flow_cols = {
        sid: tuple(flow_col[(t, arc.index)] for t in range(n_periods))
        for arc in arcs if arc.kind == ARC_STATION for sid in (arc.site_id,)
    }
    candidate_flow_cols = {
        cid: tuple(flow_col[(t, arc.index)] for t in range(n_periods))
        for arc in arcs if arc.kind == ARC_CANDIDATE for cid in (arc.site_id,)
    }
    return Relaxation(lp=lp, network=network, int_vars=ordered,
                      station_flow_cols=station_flow_cols,
                      candidate_flow_cols=candidate_flow_cols,
                      compiled=CompiledLp(lp))
