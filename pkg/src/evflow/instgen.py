"""Synthetic city instances for experiments.

A city template carries borough polygons with sampling weights, daily
borough demand, a trip-fraction matrix, existing stations, and period
weights.  From a template, a point count, and a seed this module produces a
complete valid instance: weighted random points, one OD pair per unordered
point pair, demand spread over ODs and periods, and candidate locations at
the endpoints of structurally unservable ODs.

Randomness comes from numpy's default PCG64 generator, so identical
(template, W, seed) inputs reproduce the same instance byte for byte when
serialized.  Per-period OD demand is quantized to integer milli-kW with a
largest-remainder pass, which keeps the period splits summing exactly to
the daily figure; the aggregation comparisons in the tests rely on that.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from shapely.geometry import Point, Polygon

from .estimate import (
    InputFormatError,
    all_pair_demands_kw,
    mean_rate_kw_per_s,
    read_assignment,
    read_od_matrix,
    read_points,
    read_sessions,
    ODMatrix,
)
from .geo import build_flow_network, impossible_ods
from .model import (
    DEFAULT_MAX_NEW_OUTLETS,
    DEFAULT_OPEN_COST,
    DEFAULT_OUTLET_COST,
    LEVEL_FAST,
    LEVEL_RAPID,
    CandidateLocation,
    CostSchedule,
    GeoPoint,
    Instance,
    InvalidInstanceError,
    ODPair,
    PlacedPoint,
    Station,
    uniform_periods,
    validate_instance,
)


class EmptyPolygonError(ValueError):
    """A positive-weight borough cannot host points."""


_REJECTION_TRIES = 10_000


@dataclass(frozen=True)
class Borough:
    name: str
    weight: float
    daily_demand_kw: float
    polygon: Polygon


@dataclass(frozen=True)
class CityTemplate:
    """Everything fixed about a synthetic city; points and ODs vary by seed."""

    name: str
    boroughs: tuple[Borough, ...]
    od_matrix: ODMatrix
    stations: tuple[Station, ...]
    period_weights: Mapping[int, tuple[Fraction, ...]]

    def weights_for(self, n_periods: int) -> tuple[Fraction, ...]:
        got = self.period_weights.get(n_periods)
        if got is not None:
            return got
        return tuple(Fraction(1, n_periods) for _ in range(n_periods))


def boroughs_from_geojson(collection: Mapping) -> tuple[Borough, ...]:
    """Read boroughs from a GeoJSON FeatureCollection.

    Each feature needs a Polygon geometry and properties ``name``,
    ``weight``, and ``daily_demand_kw``.
    """
    if collection.get("type") != "FeatureCollection":
        raise ValueError("borough file must be a GeoJSON FeatureCollection")
    out = []
    for feature in collection.get("features", ()):
        geometry = feature.get("geometry") or {}
        if geometry.get("type") != "Polygon":
            raise ValueError("borough geometry must be a Polygon")
        props = feature.get("properties") or {}
        shell = geometry["coordinates"][0]
        out.append(Borough(
            name=str(props["name"]),
            weight=float(props["weight"]),
            daily_demand_kw=float(props["daily_demand_kw"]),
            polygon=Polygon(shell),
        ))
    if not out:
        raise ValueError("borough file contains no features")
    return tuple(out)


def _sample_in(polygon: Polygon, rng: np.random.Generator, name: str) -> GeoPoint:
    minx, miny, maxx, maxy = polygon.bounds
    for _ in range(_REJECTION_TRIES):
        lon = rng.uniform(minx, maxx)
        lat = rng.uniform(miny, maxy)
        if polygon.covers(Point(lon, lat)):
            return GeoPoint(lat=lat, lon=lon)
    raise EmptyPolygonError(
        f"borough {name}: no point accepted after {_REJECTION_TRIES} draws")


def generate_points(boroughs: Sequence[Borough], w: int, seed: int) -> list[PlacedPoint]:
    """Sample ``w`` demand points across boroughs by weight.

    Borough membership is drawn proportionally to the weights, then a
    top-up pass shifts counts so every positive-weight borough keeps at
    least two points, taking from the largest counts first.  Positions are
    uniform within each polygon via rejection over its bounding box.
    """
    positive = [i for i, b in enumerate(boroughs) if b.weight > 0]
    if not positive:
        raise ValueError("no borough has positive weight")
    if w < max(2, 2 * len(positive)):
        raise ValueError(
            f"need at least {max(2, 2 * len(positive))} points to give every "
            f"positive-weight borough two, got {w}")
    for i in positive:
        if boroughs[i].polygon.area == 0:
            raise EmptyPolygonError(f"borough {boroughs[i].name} has zero area")

    rng = np.random.default_rng(seed)
    weights = np.array([max(b.weight, 0.0) for b in boroughs], dtype=float)
    draws = rng.choice(len(boroughs), size=w, p=weights / weights.sum())
    counts = np.bincount(draws, minlength=len(boroughs))

    while True:
        short = [i for i in positive if counts[i] < 2]
        if not short:
            break
        donor = max((i for i in positive if counts[i] > 2),
                    key=lambda i: (counts[i], -i))
        counts[donor] -= 1
        counts[short[0]] += 1

    out: list[PlacedPoint] = []
    for i, borough in enumerate(boroughs):
        for _ in range(int(counts[i])):
            out.append(PlacedPoint(point=_sample_in(borough.polygon, rng, borough.name),
                                   borough=borough.name))
    return out


def enumerate_ods(points: Sequence[PlacedPoint], n_periods: int) -> tuple[ODPair, ...]:
    """One zero-demand OD pair per unordered point pair.

    Named points keep their names in the OD id; anonymous points get
    positional ids, so a list of W points yields W(W-1)/2 ODs either way.
    """
    if len(points) < 2:
        raise ValueError("need at least two points to enumerate OD pairs")
    width = len(str(len(points) * (len(points) - 1) // 2 - 1))
    zeros = tuple(0.0 for _ in range(n_periods))
    out = []
    k = 0
    for i, a in enumerate(points):
        for b in points[i + 1:]:
            if a.name and b.name:
                od_id = f"{a.name}-{b.name}"
            else:
                od_id = f"od{k:0{width}d}"
            out.append(ODPair(
                id=od_id, origin=a.point, destination=b.point,
                borough_pair=tuple(sorted((a.borough, b.borough))),
                demand_kw=zeros))
            k += 1
    return tuple(out)


def level_mean_rate_kw_per_s(stations: Sequence[Station], level: int) -> float | None:
    """Per-station mean supply rate for one hardware level, or None."""
    rates = [s.per_outlet_kw_per_s for s in stations if s.level == level]
    if not rates:
        return None
    return sum(rates) / len(rates)


def default_costs(stations: Sequence[Station], period_duration_s: float,
                  budget: float = 0.0) -> CostSchedule:
    """Standard cost schedule for a synthetic instance.

    Adding an outlet to an existing station costs the outlet price of its
    level.  New-station per-outlet supply is the per-station mean rate of
    that level times the period length; a level with no existing stations
    falls back to the mean over all stations.
    """
    if not stations:
        raise ValueError("cannot derive new-station supply without stations")
    overall = sum(s.per_outlet_kw_per_s for s in stations) / len(stations)
    rate_fast = level_mean_rate_kw_per_s(stations, LEVEL_FAST)
    rate_rapid = level_mean_rate_kw_per_s(stations, LEVEL_RAPID)
    if rate_fast is None:
        rate_fast = overall
    if rate_rapid is None:
        rate_rapid = overall
    return CostSchedule(
        budget=float(budget),
        add_outlet_cost={s.id: DEFAULT_OUTLET_COST[s.level] for s in stations},
        new_outlet_kw_l2=rate_fast * period_duration_s,
        new_outlet_kw_l3=rate_rapid * period_duration_s,
        max_new_outlets_l2=DEFAULT_MAX_NEW_OUTLETS[LEVEL_FAST],
        max_new_outlets_l3=DEFAULT_MAX_NEW_OUTLETS[LEVEL_RAPID],
    )


def make_candidates(instance: Instance) -> tuple[CandidateLocation, ...]:
    """Candidate locations at both endpoints of every impossible OD.

    Coincident endpoints collapse to a single candidate; comparison is
    exact coordinate equality, so two merely nearby endpoints stay
    distinct.  Candidates already on the instance are ignored when deciding
    which ODs are impossible.
    """
    network = build_flow_network(instance, include_candidates=False)
    unreachable = set(impossible_ods(network))
    by_id = {od.id: od for od in instance.ods}
    seen: set[tuple[float, float]] = set()
    spots: list[GeoPoint] = []
    for od in instance.ods:
        if od.id not in unreachable:
            continue
        od = by_id[od.id]
        for gp in (od.origin, od.destination):
            key = (gp.lat, gp.lon)
            if key not in seen:
                seen.add(key)
                spots.append(gp)
    return tuple(
        CandidateLocation(
            id=f"cand{i:04d}", location=gp,
            open_cost_l2=DEFAULT_OPEN_COST[LEVEL_FAST],
            open_cost_l3=DEFAULT_OPEN_COST[LEVEL_RAPID],
            outlet_cost_l2=DEFAULT_OUTLET_COST[LEVEL_FAST],
            outlet_cost_l3=DEFAULT_OUTLET_COST[LEVEL_RAPID],
        )
        for i, gp in enumerate(spots))


def _apportion_mkw(total_mkw: int, weights: Sequence[Fraction]) -> list[int]:
    """Split an integer milli-kW total by weight, largest remainder first."""
    targets = [Fraction(total_mkw) * w for w in weights]
    base = [math.floor(t) for t in targets]
    leftover = total_mkw - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (base[i] - targets[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def _round_fraction(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def build_instance(template: CityTemplate, *, w: int, seed: int,
                   radius_m: float, n_periods: int = 1,
                   budget: float = 0.0) -> Instance:
    """Full pipeline from template to validated instance.

    Demand flows template boroughs -> borough pairs -> equal split over the
    pair's ODs -> period weights, landing as integer milli-kW per OD and
    period.  Candidates come from the impossible ODs of the station-only
    network at the requested radius.
    """
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    if n_periods < 1:
        raise ValueError("n_periods must be at least 1")
    periods = uniform_periods(n_periods)
    placed = generate_points(template.boroughs, w, seed)
    ods = enumerate_ods(placed, n_periods)

    q = {b.name: Fraction(str(b.daily_demand_kw)) for b in template.boroughs}
    pair_demand = all_pair_demands_kw(q, template.od_matrix)
    ods_by_pair: dict[tuple[str, str], list[str]] = {}
    for od in ods:
        ods_by_pair.setdefault(od.borough_pair, []).append(od.id)

    weights = template.weights_for(n_periods)
    with_demand = []
    for od in ods:
        share = pair_demand.get(od.borough_pair, Fraction(0))
        if share:
            share = share / len(ods_by_pair[od.borough_pair])
        daily_mkw = _round_fraction(share * 1000)
        per_period = _apportion_mkw(daily_mkw, weights)
        with_demand.append(dataclasses.replace(
            od, demand_kw=tuple(v / 1000.0 for v in per_period)))

    costs = default_costs(template.stations, periods[0].duration_s, budget=budget)
    base = Instance(periods=periods, ods=tuple(with_demand),
                    stations=template.stations, candidates=(),
                    costs=costs, radius_m=float(radius_m))
    instance = dataclasses.replace(base, candidates=make_candidates(base))
    violations = validate_instance(instance)
    if violations:
        raise InvalidInstanceError(violations)
    return instance


def _template_from_obj(obj: Mapping) -> CityTemplate:
    matrix = obj["od_matrix"]
    od = ODMatrix(
        boroughs=tuple(matrix["boroughs"]),
        p=tuple(tuple(Fraction(str(v)) for v in row) for row in matrix["rows"]))
    stations = tuple(
        Station(id=s["id"], location=GeoPoint(lat=s["lat"], lon=s["lon"]),
                level=int(s["level"]), outlets=int(s["outlets"]),
                per_outlet_kw_per_s=float(s["kw_per_s"]),
                max_outlets=int(s["max_outlets"]))
        for s in obj["stations"])
    period_weights = {
        int(k): tuple(Fraction(str(v)) for v in vs)
        for k, vs in obj.get("period_weights", {}).items()}
    return CityTemplate(
        name=str(obj.get("name", "city")),
        boroughs=boroughs_from_geojson(obj["boroughs"]),
        od_matrix=od,
        stations=stations,
        period_weights=period_weights,
    )


def load_template(path) -> CityTemplate:
    with open(path, encoding="utf-8") as fh:
        return _template_from_obj(json.load(fh))


def toy_city() -> CityTemplate:
    """The bundled four-borough test geometry."""
    raw = resources.files("evflow").joinpath("data/toy_city.json").read_text("utf-8")
    return _template_from_obj(json.loads(raw))


def read_stations(path, sessions) -> tuple[Station, ...]:
    """Parse a station CSV (station_id,lat,lon,level,outlets,max_outlets),
    deriving each station's supply rate from its recorded sessions."""
    out = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["station_id", "lat", "lon", "level", "outlets", "max_outlets"]
        if header is None or [h.strip() for h in header] != expected:
            raise InputFormatError(path, 1, f"header must be {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 6:
                raise InputFormatError(path, line_no, f"expected 6 fields, found {len(row)}")
            sid = row[0].strip()
            if sid in seen:
                raise InputFormatError(path, line_no, f"station {sid} defined twice")
            seen.add(sid)
            try:
                lat, lon = float(row[1]), float(row[2])
                level, outlets, cap = int(row[3]), int(row[4]), int(row[5])
            except ValueError:
                raise InputFormatError(path, line_no, "malformed numeric field") from None
            out.append(Station(
                id=sid, location=GeoPoint(lat=lat, lon=lon), level=level,
                outlets=outlets,
                per_outlet_kw_per_s=float(mean_rate_kw_per_s(sessions, sid)),
                max_outlets=cap))
    return tuple(out)


def _example_path(name: str):
    return resources.files("evflow").joinpath(f"data/example/{name}")


def example_instance(*, radius_m: float = 500.0, n_periods: int = 1,
                     budget: float = 0.0) -> Instance:
    """The small two-borough instance built from the bundled CSV fixtures.

    Demand comes from the full estimation pipeline: observed sessions are
    summed per borough, the trip-fraction system is inverted for borough
    demand, and the result is spread over the three point pairs.
    """
    from . import estimate

    with resources.as_file(_example_path("sessions.csv")) as p:
        sessions = read_sessions(p)
    with resources.as_file(_example_path("od_matrix.csv")) as p:
        matrix = read_od_matrix(p)
    with resources.as_file(_example_path("assignment.csv")) as p:
        assignment = read_assignment(p)
    with resources.as_file(_example_path("points.csv")) as p:
        points = read_points(p)
    with resources.as_file(_example_path("stations.csv")) as p:
        stations = read_stations(p, sessions)

    periods = uniform_periods(n_periods)
    day = uniform_periods(1)[0]
    supplied = estimate.borough_supply_kw(sessions, assignment, day)
    q = estimate.estimate_borough_demand(matrix, supplied).q_kw
    pair_demand = all_pair_demands_kw(q, matrix)

    ods = enumerate_ods(points, n_periods)
    ods_by_pair: dict[tuple[str, str], list[str]] = {}
    for od in ods:
        ods_by_pair.setdefault(od.borough_pair, []).append(od.id)
    weights = tuple(Fraction(1, n_periods) for _ in range(n_periods))
    split = estimate.split_demand_to_ods(pair_demand, ods_by_pair, weights)
    filled = tuple(
        dataclasses.replace(od, demand_kw=tuple(
            float(v) for v in split.od_demand_kw.get(
                od.id, tuple(Fraction(0) for _ in periods))))
        for od in ods)

    costs = default_costs(stations, periods[0].duration_s, budget=budget)
    base = Instance(periods=periods, ods=filled, stations=stations,
                    candidates=(), costs=costs, radius_m=float(radius_m))
    instance = dataclasses.replace(base, candidates=make_candidates(base))
    violations = validate_instance(instance)
    if violations:
        raise InvalidInstanceError(violations)
    return instance
