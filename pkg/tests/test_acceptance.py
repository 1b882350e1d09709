"""Acceptance gate: nine checks, one per shipped guarantee.

Each test prints a ``criterion N: PASS/FAIL`` line (visible under ``pytest
-s``) and enforces its stated tolerance and runtime budget.  Tolerances are
zero where the pipeline promises exactness; the only floating comparison is
the LP-to-flow cross-check, which allows 1e-6 relative.
"""

import itertools
import json
import math
import random
import time
from contextlib import contextmanager
from fractions import Fraction

from evflow.cli import EXIT_OK, main
from evflow.estimate import (
    all_pair_demands_kw,
    borough_supply_kw,
    estimate_borough_demand,
    mean_rate_kw_per_s,
    read_assignment,
    read_od_matrix,
    read_sessions,
    station_capacity_kw,
)
from evflow.geo import build_flow_network
from evflow.instgen import build_instance, example_instance, toy_city
from evflow.lp import build_relaxation
from evflow.maxflow import evaluate, max_flow
from evflow.model import (
    CandidateLocation,
    CostSchedule,
    GeoPoint,
    Instance,
    ODPair,
    Period,
    Station,
    load_json,
    make_plan,
    plan_cost,
    uniform_periods,
    with_budget,
)
from evflow.placement import STATUS_OPTIMAL, SearchParams, optimize, sweep

EXACT = SearchParams(gap_tol=0.0)

SESSIONS_CSV = """station_id,start_s,duration_s,kw_per_s
st1,36000,110,5
st2,39600,100,3
st2,46800,10,5
"""

MATRIX_CSV = """,omega,lambda
omega,0.5,0.5
lambda,0.25,0.75
"""

ASSIGNMENT_CSV = """station_id,borough_id
st1,lambda
st2,omega
"""


@contextmanager
def _criterion(n, summary):
    try:
        yield
    except BaseException:
        print(f"criterion {n}: FAIL — {summary}", flush=True)
        raise
    print(f"criterion {n}: PASS — {summary}", flush=True)


class _Outlets:
    def __init__(self, sid, outlets):
        self.id = sid
        self.outlets = outlets


def test_criterion_1_worked_example_exactness(tmp_path):
    with _criterion(1, "session inversion reproduces capacities, borough and "
                       "OD demands exactly"):
        started = time.monotonic()
        for name, text in (("sessions.csv", SESSIONS_CSV),
                           ("matrix.csv", MATRIX_CSV),
                           ("assignment.csv", ASSIGNMENT_CSV)):
            (tmp_path / name).write_text(text)
        sessions = read_sessions(tmp_path / "sessions.csv")
        matrix = read_od_matrix(tmp_path / "matrix.csv")
        assignment = read_assignment(tmp_path / "assignment.csv")

        day = Period(0, 0.0, 86400.0)
        assert station_capacity_kw(sessions, _Outlets("st1", 1), day) == 432_000
        assert station_capacity_kw(sessions, _Outlets("st2", 1), day) == 345_600
        assert mean_rate_kw_per_s(sessions, "st1") == 5
        assert mean_rate_kw_per_s(sessions, "st2") == 4

        supply = borough_supply_kw(sessions, assignment, day)
        est = estimate_borough_demand(matrix, supply)
        assert est.exact
        assert est.q_kw == {"omega": Fraction(500), "lambda": Fraction(400)}

        # per-OD demands after the uniform split over the three points
        inst = example_instance()
        by_id = {od.id: od for od in inst.ods}
        assert by_id["A-C"].demand_kw == (250.0,)
        assert by_id["A-B"].demand_kw == (175.0,)
        assert by_id["B-C"].demand_kw == (175.0,)
        pairs = all_pair_demands_kw(est.q_kw, matrix)
        assert pairs[("omega", "omega")] == Fraction(250)
        assert pairs[("lambda", "omega")] == Fraction(350)
        assert time.monotonic() - started < 1.0


def test_criterion_2_worked_example_evaluation():
    with _criterion(2, "worked example evaluates to 425 satisfied / 175 "
                       "impossible / 0 unsatisfied kW, exactly"):
        started = time.monotonic()
        res = evaluate(example_instance(), check_certificates=True)
        assert res.satisfied_kw == 425.0
        assert res.impossible_kw == 175.0
        assert res.unsatisfied_kw == 0.0
        assert time.monotonic() - started < 1.0


def _flow_instance(rng):
    n_ods = rng.randint(1, 20)
    n_stations = rng.randint(1, 10)
    n_periods = rng.choice([1, 2, 4])
    def pt():
        return GeoPoint(45.5 + rng.uniform(-0.03, 0.03),
                        -73.6 + rng.uniform(-0.03, 0.03))
    ods = tuple(
        ODPair(f"od{i}", pt(), pt(), ("a", "a"),
               tuple(round(rng.uniform(0, 50), 3) for _ in range(n_periods)))
        for i in range(n_ods))
    stations = tuple(
        Station(f"s{i}", pt(), rng.choice([2, 3]), rng.randint(1, 4),
                rng.choice([0.00125, 0.0025, 0.005]), 16)
        for i in range(n_stations))
    costs = CostSchedule(0.0, {s.id: 1.0 for s in stations},
                         108.0, 432.0, 16, 7)
    return Instance(uniform_periods(n_periods), ods, stations, (), costs,
                    rng.choice([1000.0, 2000.0, 4000.0]))


def test_criterion_3_lp_equals_max_flow():
    with _criterion(3, "joint assignment LP matches summed per-period max "
                       "flow within 1e-6 relative on 100 random instances"):
        started = time.monotonic()
        rng = random.Random(20260821)
        for _ in range(100):
            inst = _flow_instance(rng)
            flow_mkw = sum(
                max_flow(build_flow_network(inst), t).value_mkw
                for t in range(len(inst.periods)))
            relax = build_relaxation(inst)
            frozen = {v.name: (0.0, 0.0) for v in relax.int_vars}
            relax_frozen = build_relaxation(inst, bounds=frozen)
            sol = relax_frozen.solve()
            assert sol.status == "Optimal"
            scale = max(1.0, abs(flow_mkw))
            assert abs(sol.objective - flow_mkw) <= 1e-6 * scale
        elapsed = time.monotonic() - started
        assert elapsed < 30.0


def _desk_instance(rng):
    """At most 2 stations and 3 candidates, outlet caps of 2."""
    def pt():
        return GeoPoint(45.5 + rng.uniform(-0.01, 0.01),
                        -73.6 + rng.uniform(-0.01, 0.01))
    n_periods = rng.choice([1, 2])
    ods = tuple(
        ODPair(f"od{i}", pt(), pt(), ("a", "a"),
               tuple(round(rng.uniform(0, 250), 3) for _ in range(n_periods)))
        for i in range(rng.randint(1, 3)))
    stations = tuple(
        Station(f"s{i}", pt(), 2, rng.randint(1, 2), 0.00125,
                rng.randint(1, 2) + 2)
        for i in range(rng.randint(1, 2)))
    candidates = tuple(
        CandidateLocation(f"c{i}", pt(), rng.choice([5.0, 10.0]), 40.0,
                          1.0, 3.0)
        for i in range(rng.randint(0, 3)))
    costs = CostSchedule(
        budget=rng.choice([0.0, 4.0, 9.0, 16.0, 60.0]),
        add_outlet_cost={s.id: rng.choice([1.0, 2.0]) for s in stations},
        new_outlet_kw_l2=108.0, new_outlet_kw_l3=432.0,
        max_new_outlets_l2=2, max_new_outlets_l3=2)
    return Instance(uniform_periods(n_periods), ods, stations, candidates,
                    costs, 3000.0)


def _brute_force_mkw(instance):
    budget = Fraction(instance.costs.budget)
    station_choices = [
        [(s.id, n) for n in range(s.outlet_headroom() + 1)]
        for s in instance.stations]
    cand_choices = []
    for c in instance.candidates:
        states = [None]
        for level in (2, 3):
            cap = instance.costs.new_outlet_cap(level)
            states.extend((c.id, level, n) for n in range(1, cap + 1))
        cand_choices.append(states)
    best = -1
    for picks in itertools.product(*station_choices, *cand_choices):
        added, opened = {}, {}
        for p in picks:
            if p is None:
                continue
            if len(p) == 2:
                if p[1] > 0:
                    added[p[0]] = p[1]
            else:
                opened[p[0]] = (p[1], p[2])
        plan = make_plan(instance, added, opened)
        if plan_cost(instance, plan) > budget:
            continue
        best = max(best, round(evaluate(instance, plan).satisfied_kw * 1000))
    return best


def test_criterion_4_exact_search_matches_enumeration():
    with _criterion(4, "zero-gap search equals exhaustive enumeration on 50 "
                       "desk-scale instances"):
        started = time.monotonic()
        rng = random.Random(404)
        for trial in range(50):
            inst = _desk_instance(rng)
            want = _brute_force_mkw(inst)
            _, result, report = optimize(inst, EXACT)
            got = round(result.satisfied_kw * 1000)
            assert got == want, f"instance {trial}: {got} != {want} mkW"
            assert report.status == STATUS_OPTIMAL
        elapsed = time.monotonic() - started
        assert elapsed < 120.0


def test_criterion_5_trivial_budget_identities():
    with _criterion(5, "zero budget reproduces the plain assignment value; "
                       "a big budget reaches 100% satisfied"):
        started = time.monotonic()
        template = toy_city()
        for seed in (0, 1):
            inst = build_instance(template, w=20, seed=seed, radius_m=500.0)
            base = evaluate(inst)
            _, res0, rep0 = optimize(with_budget(inst, 0.0), EXACT)
            assert round(res0.satisfied_kw * 1000) == round(base.satisfied_kw * 1000)
            assert rep0.status == STATUS_OPTIMAL

            _, res_big, rep_big = optimize(with_budget(inst, 1e6), EXACT)
            assert rep_big.status == STATUS_OPTIMAL
            assert res_big.satisfied_kw == res_big.total_demand_kw
            assert res_big.satisfied_pct() == 100.0
        elapsed = time.monotonic() - started
        assert elapsed < 60.0


def test_criterion_6_monotonicity_grid():
    with _criterion(6, "satisfied demand non-decreasing in radius and "
                       "budget, impossible non-increasing in radius"):
        started = time.monotonic()
        template = toy_city()
        radii = (400.0, 500.0, 600.0, 700.0)
        budgets = [100.0 * k for k in range(8)]
        for w in (10, 20):
            for seed in range(5):
                prev_sat, prev_imp = -1.0, math.inf
                for r in radii:
                    inst = build_instance(template, w=w, seed=seed, radius_m=r)
                    res = evaluate(inst)
                    assert res.satisfied_kw >= prev_sat - 1e-12
                    assert res.impossible_kw <= prev_imp + 1e-12
                    prev_sat, prev_imp = res.satisfied_kw, res.impossible_kw

                inst = build_instance(template, w=w, seed=seed, radius_m=500.0)
                rows = sweep(inst, budgets, EXACT)
                pct = [row.satisfied_pct for row in rows]
                for a, b in zip(pct, pct[1:]):
                    assert b >= a - 1e-12
                assert all(row.status == STATUS_OPTIMAL for row in rows)
        elapsed = time.monotonic() - started
        assert elapsed < 300.0


def test_criterion_7_period_refinement():
    with _criterion(7, "finer periods never report more satisfied demand, "
                       "and day-level plans score at or below the refined "
                       "optimum"):
        started = time.monotonic()
        template = toy_city()
        budget = 150.0
        for w, seed in ((10, 0), (10, 1), (10, 2), (20, 0), (20, 1)):
            coarse = build_instance(template, w=w, seed=seed, radius_m=500.0)
            fine = build_instance(template, w=w, seed=seed, radius_m=500.0,
                                  n_periods=4)
            sat1 = round(evaluate(coarse).satisfied_kw * 1000)
            sat4 = round(evaluate(fine).satisfied_kw * 1000)
            assert sat4 <= sat1

            plan, _, _ = optimize(with_budget(coarse, budget), EXACT)
            cross = evaluate(with_budget(fine, budget), plan)
            _, _, fine_report = optimize(with_budget(fine, budget), EXACT)
            assert fine_report.status == STATUS_OPTIMAL
            assert (round(cross.satisfied_kw * 1000)
                    <= round(fine_report.objective_kw * 1000))
        elapsed = time.monotonic() - started
        assert elapsed < 300.0


def test_criterion_8_min_cut_certificates():
    with _criterion(8, "every flow solve carries a min cut whose capacity "
                       "equals the flow value in integer milli-kW"):
        rng = random.Random(808)
        template = toy_city()
        instances = [_flow_instance(rng) for _ in range(20)]
        instances.append(example_instance())
        instances.append(build_instance(template, w=10, seed=0, radius_m=500.0))
        for inst in instances:
            network = build_flow_network(inst)
            for t in range(len(inst.periods)):
                res = max_flow(network, t)
                assert isinstance(res.value_mkw, int)
                assert res.cut_capacity_mkw == res.value_mkw
            evaluate(inst, check_certificates=True)


def test_criterion_9_byte_reproducibility(tmp_path):
    with _criterion(9, "generate and single-threaded optimize give identical "
                       "files on repeat runs (timing field aside)"):
        gen_a = tmp_path / "a.json"
        gen_b = tmp_path / "b.json"
        argv = ["generate", "-W", "10", "-R", "500", "--seed", "3",
                "--budget", "60"]
        assert main(argv + ["--out", str(gen_a)]) == EXIT_OK
        assert main(argv + ["--out", str(gen_b)]) == EXIT_OK
        assert gen_a.read_bytes() == gen_b.read_bytes()

        plans, reports = [], []
        for tag in ("p1", "p2"):
            plan_path = tmp_path / f"{tag}_plan.json"
            report_path = tmp_path / f"{tag}_report.json"
            code = main(["optimize", str(gen_a), "--threads", "1",
                         "--gap-tol", "0",
                         "--plan-out", str(plan_path),
                         "--report-out", str(report_path)])
            assert code == EXIT_OK
            plans.append(plan_path.read_bytes())
            obj = load_json(report_path)
            # wall-clock is the one legitimately varying field
            obj.pop("wall_time_s")
            reports.append(json.dumps(obj, sort_keys=True))
        assert plans[0] == plans[1]
        assert reports[0] == reports[1]
