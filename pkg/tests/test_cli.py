"""End-to-end runs of every subcommand through main(argv)."""

import json

import pytest

from evflow.cli import EXIT_INPUT, EXIT_LIMIT, EXIT_OK, _default_threads, main
from evflow.maxflow import evaluate
from evflow.model import (
    CostSchedule,
    GeoPoint,
    Instance,
    ODPair,
    Station,
    load_instance,
    load_json,
    plan_from_obj,
    save_instance,
    uniform_periods,
    validate_plan,
)

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

POINTS_CSV = """point_id,lat,lon,borough_id
A,45.5,-73.61,omega
B,45.5,-73.56,lambda
C,45.5,-73.6,omega
"""


def _estimate_inputs(tmp_path):
    files = {}
    for name, text in (("sessions.csv", SESSIONS_CSV), ("matrix.csv", MATRIX_CSV),
                       ("assignment.csv", ASSIGNMENT_CSV), ("points.csv", POINTS_CSV)):
        p = tmp_path / name
        p.write_text(text)
        files[name.split(".")[0]] = str(p)
    return files


def test_estimate_worked_example(tmp_path):
    files = _estimate_inputs(tmp_path)
    out = tmp_path / "demand.json"
    code = main(["estimate", "--sessions", files["sessions"],
                 "--matrix", files["matrix"], "--assignment", files["assignment"],
                 "--points", files["points"], "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["exact"] is True
    assert report["q_kw"] == {"lambda": 400.0, "omega": 500.0}
    assert report["q_kw_exact"] == {"lambda": "400", "omega": "500"}
    assert report["supplied_kw"] == {"lambda": 550.0, "omega": 350.0}
    assert report["pair_demand_kw"] == {"lambda-lambda": 300.0,
                                        "lambda-omega": 350.0,
                                        "omega-omega": 250.0}
    assert report["od_demand_kw"] == {"A-B": 175.0, "A-C": 250.0, "B-C": 175.0}
    # lambda's internal demand has no point pair to carry it
    assert report["lost_kw"] == {"lambda-lambda": 300.0}


def test_estimate_missing_file(tmp_path, capsys):
    files = _estimate_inputs(tmp_path)
    code = main(["estimate", "--sessions", str(tmp_path / "nope.csv"),
                 "--matrix", files["matrix"], "--assignment", files["assignment"],
                 "--out", str(tmp_path / "x.json")])
    assert code == EXIT_INPUT
    assert "no such file" in capsys.readouterr().err


def test_estimate_bad_row_sum(tmp_path, capsys):
    files = _estimate_inputs(tmp_path)
    bad = tmp_path / "bad_matrix.csv"
    bad.write_text(",omega,lambda\nomega,0.6,0.5\nlambda,0.25,0.75\n")
    code = main(["estimate", "--sessions", files["sessions"],
                 "--matrix", str(bad), "--assignment", files["assignment"],
                 "--out", str(tmp_path / "x.json")])
    assert code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "bad_matrix.csv:2" in err
    assert "RowSumError" in err


def test_estimate_unknown_borough(tmp_path, capsys):
    files = _estimate_inputs(tmp_path)
    bad = tmp_path / "bad_assignment.csv"
    bad.write_text("station_id,borough_id\nst1,atlantis\nst2,omega\n")
    code = main(["estimate", "--sessions", files["sessions"],
                 "--matrix", files["matrix"], "--assignment", str(bad),
                 "--out", str(tmp_path / "x.json")])
    assert code == EXIT_INPUT
    assert "atlantis" in capsys.readouterr().err


def test_estimate_empty_sessions_warns(tmp_path, capsys):
    files = _estimate_inputs(tmp_path)
    empty = tmp_path / "empty.csv"
    empty.write_text("station_id,start_s,duration_s,kw_per_s\n")
    code = main(["estimate", "--sessions", str(empty),
                 "--matrix", files["matrix"], "--assignment", files["assignment"],
                 "--out", str(tmp_path / "x.json")])
    assert code == EXIT_OK
    assert "no sessions" in capsys.readouterr().err


def test_generate_writes_valid_instance(tmp_path):
    out = tmp_path / "inst.json"
    code = main(["generate", "-W", "10", "-R", "500", "--seed", "3",
                 "--budget", "40", "--out", str(out)])
    assert code == EXIT_OK
    inst = load_instance(out)
    assert len(inst.ods) == 45
    assert inst.costs.budget == 40.0
    meta = json.loads(out.read_text())["meta"]
    assert meta["w"] == 10 and meta["seed"] == 3
    assert meta["template"] == "toyville"


def test_generate_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["generate", "-W", "14", "-R", "450", "--seed", "9", "--periods", "4"]
    assert main(argv + ["--out", str(a)]) == EXIT_OK
    assert main(argv + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_generate_rejects_bad_arguments(tmp_path, capsys):
    out = str(tmp_path / "x.json")
    assert main(["generate", "-W", "1", "-R", "500", "--out", out]) == EXIT_INPUT
    assert main(["generate", "-W", "10", "-R", "-5", "--out", out]) == EXIT_INPUT
    assert main(["generate", "-W", "10", "-R", "500", "--periods", "0",
                 "--out", out]) == EXIT_INPUT
    assert main(["generate", "-W", "10", "-R", "500", "--budget", "-1",
                 "--out", out]) == EXIT_INPUT
    capsys.readouterr()


def test_generate_missing_template(tmp_path, capsys):
    code = main(["generate", "-W", "10", "-R", "500",
                 "--template", str(tmp_path / "ghost.json"),
                 "--out", str(tmp_path / "x.json")])
    assert code == EXIT_INPUT
    assert "no such file" in capsys.readouterr().err


def test_evaluate_agrees_with_library(tmp_path):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--seed", "3",
          "--out", str(inst_path)])
    report_path = tmp_path / "result.json"
    map_path = tmp_path / "map.geojson"
    code = main(["evaluate", str(inst_path), "--report", str(report_path),
                 "--map", str(map_path), "--certify"])
    assert code == EXIT_OK
    report = json.loads(report_path.read_text())
    want = evaluate(load_instance(inst_path))
    assert report["satisfied_kw"] == want.satisfied_kw
    assert report["unsatisfied_kw"] == want.unsatisfied_kw
    assert report["impossible_kw"] == want.impossible_kw
    layer = json.loads(map_path.read_text())
    assert layer["type"] == "FeatureCollection"


def test_evaluate_zero_demand_warns(tmp_path, capsys):
    st = Station("s", GeoPoint(45.5, -73.6), 2, 1, 0.00125, 16)
    od = ODPair("o", GeoPoint(45.5, -73.6), GeoPoint(45.5, -73.6),
                ("a", "a"), (0.0,))
    costs = CostSchedule(0.0, {"s": 1.0}, 108.0, 432.0, 16, 7)
    inst = Instance(uniform_periods(1), (od,), (st,), (), costs, 500.0)
    path = tmp_path / "zero.json"
    save_instance(inst, path)
    code = main(["evaluate", str(path), "--report", str(tmp_path / "r.json")])
    assert code == EXIT_OK
    assert "zero total demand" in capsys.readouterr().err


def test_evaluate_rejects_malformed_json(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text('{"periods": [')
    code = main(["evaluate", str(bad), "--report", str(tmp_path / "r.json")])
    assert code == EXIT_INPUT
    assert "broken.json" in capsys.readouterr().err


def test_optimize_zero_budget_equals_evaluate(tmp_path):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--seed", "3",
          "--out", str(inst_path)])
    plan_path = tmp_path / "plan.json"
    report_path = tmp_path / "report.json"
    code = main(["optimize", str(inst_path), "--budget", "0",
                 "--gap-tol", "0",
                 "--plan-out", str(plan_path), "--report-out", str(report_path)])
    assert code == EXIT_OK
    plan = plan_from_obj(load_json(plan_path))
    assert plan.added_outlets == {} and plan.opened == {}
    report = json.loads(report_path.read_text())
    want = evaluate(load_instance(inst_path))
    assert report["objective_kw"] == want.satisfied_kw
    assert report["status"] == "Optimal"


def test_optimize_writes_affordable_plan(tmp_path):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--seed", "3", "--budget", "60",
          "--out", str(inst_path)])
    plan_path = tmp_path / "plan.json"
    report_path = tmp_path / "report.json"
    map_path = tmp_path / "plan_map.geojson"
    code = main(["optimize", str(inst_path), "--gap-tol", "0",
                 "--plan-out", str(plan_path), "--report-out", str(report_path),
                 "--map", str(map_path)])
    assert code == EXIT_OK
    inst = load_instance(inst_path)
    plan = plan_from_obj(load_json(plan_path))
    assert validate_plan(inst, plan) == []
    report = json.loads(report_path.read_text())
    assert report["bound_kw"] >= report["objective_kw"] - 1e-9
    # spending the budget helps on this instance
    base = evaluate(inst)
    assert report["objective_kw"] >= base.satisfied_kw
    assert json.loads(map_path.read_text())["type"] == "FeatureCollection"


def test_optimize_node_limit_exit_code(tmp_path, capsys):
    here = GeoPoint(45.5, -73.6)
    od = ODPair("o", here, here, ("a", "a"), (2000.0,))
    sts = (Station("s0", here, 2, 1, 0.00125, 16),
           Station("s1", here, 2, 1, 0.00125, 16))
    costs = CostSchedule(3.0, {"s0": 2.0, "s1": 2.0}, 108.0, 432.0, 16, 7)
    inst = Instance(uniform_periods(1), (od,), sts, (), costs, 500.0)
    path = tmp_path / "tight.json"
    save_instance(inst, path)
    code = main(["optimize", str(path), "--gap-tol", "0", "--node-limit", "1",
                 "--plan-out", str(tmp_path / "p.json"),
                 "--report-out", str(tmp_path / "r.json")])
    assert code == EXIT_LIMIT
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["status"] == "NodeLimit"
    # the incumbent plan file still exists and is affordable
    plan = plan_from_obj(load_json(tmp_path / "p.json"))
    assert validate_plan(inst, plan) == []
    capsys.readouterr()


def test_optimize_rejects_bad_params(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--out", str(inst_path)])
    base = ["optimize", str(inst_path),
            "--plan-out", str(tmp_path / "p.json"),
            "--report-out", str(tmp_path / "r.json")]
    assert main(base + ["--gap-tol", "-1"]) == EXIT_INPUT
    assert main(base + ["--time-limit", "0"]) == EXIT_INPUT
    assert main(base + ["--node-limit", "0"]) == EXIT_INPUT
    capsys.readouterr()


def test_sweep_subcommand(tmp_path):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--seed", "3",
          "--out", str(inst_path)])
    out = tmp_path / "sweep.json"
    code = main(["sweep", str(inst_path), "--budgets", "0:40:20",
                 "--gap-tol", "0", "--out", str(out)])
    assert code == EXIT_OK
    rows = json.loads(out.read_text())
    assert [r["budget"] for r in rows] == [0.0, 20.0, 40.0]
    sat = [r["satisfied_kw"] for r in rows]
    assert sat == sorted(sat)
    assert all(r["status"] == "Optimal" for r in rows)


def test_optimize_sweep_flag_and_comma_list(tmp_path):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--seed", "3",
          "--out", str(inst_path)])
    out = tmp_path / "sweep.json"
    code = main(["optimize", str(inst_path), "--sweep", "0,30",
                 "--gap-tol", "0", "--sweep-out", str(out)])
    assert code == EXIT_OK
    rows = json.loads(out.read_text())
    assert [r["budget"] for r in rows] == [0.0, 30.0]


def test_sweep_rejects_bad_span(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--out", str(inst_path)])
    code = main(["sweep", str(inst_path), "--budgets", "10:0:5",
                 "--out", str(tmp_path / "s.json")])
    assert code == EXIT_INPUT
    assert "budget spec" in capsys.readouterr().err


def test_cross_eval_refined_periods(tmp_path):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--seed", "3", "--budget", "30",
          "--out", str(inst_path)])
    report_path = tmp_path / "report.json"
    code = main(["optimize", str(inst_path), "--gap-tol", "0",
                 "--cross-eval", "periods=4",
                 "--plan-out", str(tmp_path / "p.json"),
                 "--report-out", str(report_path)])
    assert code == EXIT_OK
    cross = json.loads(report_path.read_text())["cross_eval"]
    assert cross["periods"] == 4
    # the day-level plan cannot beat the refined optimum
    assert cross["plan_satisfied_kw"] <= cross["optimum_satisfied_kw"] + 1e-9
    assert abs(cross["shortfall_kw"]
               - (cross["optimum_satisfied_kw"] - cross["plan_satisfied_kw"])) < 1e-12


def test_cross_eval_needs_generated_instance(tmp_path, capsys):
    st = Station("s", GeoPoint(45.5, -73.6), 2, 1, 0.00125, 16)
    od = ODPair("o", GeoPoint(45.5, -73.6), GeoPoint(45.5, -73.6),
                ("a", "a"), (50.0,))
    costs = CostSchedule(0.0, {"s": 1.0}, 108.0, 432.0, 16, 7)
    inst = Instance(uniform_periods(1), (od,), (st,), (), costs, 500.0)
    path = tmp_path / "handmade.json"
    save_instance(inst, path)
    code = main(["optimize", str(path), "--cross-eval", "periods=4",
                 "--plan-out", str(tmp_path / "p.json"),
                 "--report-out", str(tmp_path / "r.json")])
    assert code == EXIT_INPUT
    assert "meta" in capsys.readouterr().err


def test_cross_eval_bad_spec(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    main(["generate", "-W", "10", "-R", "500", "--out", str(inst_path)])
    code = main(["optimize", str(inst_path), "--cross-eval", "slices=4",
                 "--plan-out", str(tmp_path / "p.json"),
                 "--report-out", str(tmp_path / "r.json")])
    assert code == EXIT_INPUT
    assert "cross-eval" in capsys.readouterr().err


def test_threads_env_default(monkeypatch):
    monkeypatch.setenv("EVFLOW_THREADS", "6")
    assert _default_threads() == 6
    monkeypatch.setenv("EVFLOW_THREADS", "banana")
    assert _default_threads() == 1
    monkeypatch.setenv("EVFLOW_THREADS", "-2")
    assert _default_threads() == 1
    monkeypatch.delenv("EVFLOW_THREADS")
    assert _default_threads() == 1
