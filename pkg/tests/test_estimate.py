"""Demand estimation from session logs, trip fractions, and survey points."""

import warnings
from fractions import Fraction

import pytest

from evflow.estimate import (
    DegenerateSystemError,
    InputFormatError,
    ODMatrix,
    SessionRecord,
    _overlap_s,
    all_pair_demands_kw,
    borough_supply_kw,
    estimate_borough_demand,
    mean_rate_kw_per_s,
    od_demand_kw,
    period_energy_shares,
    read_assignment,
    read_od_matrix,
    read_points,
    read_sessions,
    split_demand_to_ods,
    station_capacity_kw,
)
from evflow.model import Period, uniform_periods


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


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


class _Outlets:
    def __init__(self, sid, outlets):
        self.id = sid
        self.outlets = outlets


def test_mean_rate_and_capacity_worked_values(tmp_path):
    sessions = read_sessions(_write(tmp_path, "s.csv", SESSIONS_CSV))
    assert mean_rate_kw_per_s(sessions, "st1") == 5
    assert mean_rate_kw_per_s(sessions, "st2") == 4
    day = Period(0, 0.0, 86400.0)
    assert station_capacity_kw(sessions, _Outlets("st1", 1), day) == 432_000
    assert station_capacity_kw(sessions, _Outlets("st2", 1), day) == 345_600


def test_borough_demand_worked_values(tmp_path):
    sessions = read_sessions(_write(tmp_path, "s.csv", SESSIONS_CSV))
    matrix = read_od_matrix(_write(tmp_path, "m.csv", MATRIX_CSV))
    assign = read_assignment(_write(tmp_path, "a.csv", ASSIGNMENT_CSV))
    day = Period(0, 0.0, 86400.0)
    supply = borough_supply_kw(sessions, assign, day)
    assert supply == {"lambda": 550, "omega": 350}
    est = estimate_borough_demand(matrix, supply)
    assert est.exact
    assert est.q_kw == {"omega": 500, "lambda": 400}


def test_pair_demands_worked_values(tmp_path):
    matrix = read_od_matrix(_write(tmp_path, "m.csv", MATRIX_CSV))
    q = {"omega": Fraction(500), "lambda": Fraction(400)}
    pairs = all_pair_demands_kw(q, matrix)
    assert pairs[("omega", "omega")] == 250
    assert pairs[("lambda", "omega")] == 350
    assert pairs[("lambda", "lambda")] == 300
    # self pair counts the internal share once, cross pairs both directions
    assert od_demand_kw(q, matrix, ("omega", "omega")) == Fraction(500) / 2
    assert od_demand_kw(q, matrix, ("lambda", "omega")) == 500 * Fraction(1, 2) + 400 * Fraction(1, 4)


def test_split_demand_uniform_and_lost():
    pair_demand = {("a", "a"): Fraction(250), ("a", "b"): Fraction(350),
                   ("b", "b"): Fraction(300)}
    ods_by_pair = {("a", "a"): ["p-r"], ("a", "b"): ["p-q", "q-r"]}
    split = split_demand_to_ods(pair_demand, ods_by_pair, [Fraction(1)])
    assert split.od_demand_kw == {"p-r": (250,), "p-q": (175,), "q-r": (175,)}
    assert split.lost_kw == {("b", "b"): Fraction(300)}


def test_split_demand_respects_period_weights():
    pair_demand = {("a", "b"): Fraction(100)}
    ods_by_pair = {("a", "b"): ["x-y"]}
    w = [Fraction(3, 20), Fraction(7, 20), Fraction(3, 10), Fraction(1, 5)]
    split = split_demand_to_ods(pair_demand, ods_by_pair, w)
    assert split.od_demand_kw["x-y"] == (15, 35, 30, 20)
    assert sum(split.od_demand_kw["x-y"]) == 100


def test_split_demand_rejects_bad_weights():
    with pytest.raises(ValueError):
        split_demand_to_ods({}, {}, [Fraction(1, 2), Fraction(1, 4)])


def test_overlap_basic_cases():
    p = Period(1, 21600.0, 21600.0)
    inside = SessionRecord("s", Fraction(25000), Fraction(100), Fraction(1))
    assert _overlap_s(inside, p) == 100
    straddles = SessionRecord("s", Fraction(21000), Fraction(1000), Fraction(1))
    assert _overlap_s(straddles, p) == 400
    outside = SessionRecord("s", Fraction(50000), Fraction(10), Fraction(1))
    assert _overlap_s(outside, p) == 0


def test_overlap_wraps_past_midnight():
    night = SessionRecord("s", Fraction(86000), Fraction(1000), Fraction(2))
    first_half = Period(0, 0.0, 43200.0)
    second_half = Period(1, 43200.0, 43200.0)
    assert _overlap_s(night, first_half) == 600
    assert _overlap_s(night, second_half) == 400


def test_overlap_splits_conserve_energy():
    sessions = [
        SessionRecord("s", Fraction(100), Fraction(86400), Fraction(1)),
        SessionRecord("s", Fraction(80000), Fraction(20000), Fraction(3)),
        SessionRecord("s", Fraction(0), Fraction(1), Fraction(7)),
    ]
    for n in (1, 2, 4, 6):
        periods = uniform_periods(n)
        for s in sessions:
            assert sum(_overlap_s(s, p) for p in periods) == s.duration_s


def test_period_energy_shares():
    sessions = [
        SessionRecord("s", Fraction(0), Fraction(100), Fraction(2)),
        SessionRecord("s", Fraction(43200), Fraction(300), Fraction(2)),
    ]
    shares = period_energy_shares(sessions, uniform_periods(2))
    assert shares == (Fraction(1, 4), Fraction(3, 4))
    # no sessions: uniform fallback
    assert period_energy_shares([], uniform_periods(4)) == tuple([Fraction(1, 4)] * 4)


def test_read_sessions_diagnostics(tmp_path):
    bad_header = _write(tmp_path, "h.csv", "station,start\nx,1\n")
    with pytest.raises(InputFormatError) as err:
        read_sessions(bad_header)
    assert err.value.line_no == 1

    bad_row = _write(tmp_path, "r.csv",
                     "station_id,start_s,duration_s,kw_per_s\nst1,0,-5,1\n")
    with pytest.raises(InputFormatError) as err:
        read_sessions(bad_row)
    assert err.value.line_no == 2
    assert "duration" in str(err.value)

    unparsable = _write(tmp_path, "u.csv",
                        "station_id,start_s,duration_s,kw_per_s\nst1,zero,5,1\n")
    with pytest.raises(InputFormatError):
        read_sessions(unparsable)


def test_read_od_matrix_row_sum(tmp_path):
    bad = _write(tmp_path, "m.csv", ",a,b\na,0.5,0.4\nb,0.5,0.5\n")
    with pytest.raises(InputFormatError) as err:
        read_od_matrix(bad)
    assert "RowSumError" in str(err.value)
    assert err.value.line_no == 2


def test_read_od_matrix_requires_square(tmp_path):
    bad = _write(tmp_path, "m.csv", ",a,b\na,0.5,0.5\n")
    with pytest.raises(InputFormatError):
        read_od_matrix(bad)


def test_read_assignment_rejects_duplicates(tmp_path):
    bad = _write(tmp_path, "a.csv",
                 "station_id,borough_id\nst1,x\nst1,y\n")
    with pytest.raises(InputFormatError) as err:
        read_assignment(bad)
    assert err.value.line_no == 3


def test_read_points(tmp_path):
    good = _write(tmp_path, "p.csv",
                  "point_id,lat,lon,borough_id\nA,45.5,-73.6,omega\nB,45.6,-73.5,lambda\n")
    points = read_points(good)
    assert [p.name for p in points] == ["A", "B"]
    assert points[0].borough == "omega"
    assert points[0].point.lat == 45.5

    out_of_range = _write(tmp_path, "q.csv",
                          "point_id,lat,lon,borough_id\nA,95.0,-73.6,omega\n")
    with pytest.raises(InputFormatError):
        read_points(out_of_range)


def test_degenerate_system_raises():
    zero = ODMatrix(("a", "b"), ((Fraction(0), Fraction(0)),
                                 (Fraction(0), Fraction(0))))
    with pytest.raises(DegenerateSystemError):
        estimate_borough_demand(zero, {"a": Fraction(1), "b": Fraction(1)})


def test_singular_system_falls_back_to_least_squares():
    # both boroughs send everything to "a": columns are dependent
    matrix = ODMatrix(("a", "b"), ((Fraction(1), Fraction(0)),
                                   (Fraction(1), Fraction(0))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_borough_demand(matrix, {"a": Fraction(100), "b": Fraction(0)})
    assert not est.exact
    total = sum(est.q_kw.values())
    assert abs(float(total) - 100.0) < 1e-6
    assert all(v >= 0 for v in est.q_kw.values())


def test_lstsq_clamps_negative_components():
    # singular system rigged so the least-squares component for "a" is
    # negative and gets clamped to zero
    matrix = ODMatrix(("a", "b"), ((Fraction(1), Fraction(1)),
                                   (Fraction(0), Fraction(0))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_borough_demand(matrix, {"a": Fraction(-6), "b": Fraction(-6)})
    assert not est.exact
    assert est.clamped == ("a",)
    assert est.q_kw == {"a": 0, "b": 0}


def test_ill_conditioned_system_warns():
    eps = Fraction(1, 10**13)
    matrix = ODMatrix(("a", "b"), ((Fraction(1), Fraction(0)),
                                   (Fraction(1), eps)))
    with pytest.warns(UserWarning, match="condition number"):
        estimate_borough_demand(matrix, {"a": Fraction(1), "b": Fraction(1)})
