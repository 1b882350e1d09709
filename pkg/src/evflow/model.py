"""Core value objects for the charging-network planner.

Everything here is an immutable snapshot: a planning instance describes the
day being planned (periods, origin-destination pairs, stations, candidate
sites, cost schedule, service radius), a placement plan describes a purchase
decision, and an assignment result describes how demand was routed.  All
energy figures are kilowatts of charging flow aggregated per period; the
planning horizon itself is fixed at one day.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from types import MappingProxyType
from typing import Mapping, Sequence

HORIZON_S = 86400.0

LEVEL_FAST = 2
LEVEL_RAPID = 3
LEVELS = (LEVEL_FAST, LEVEL_RAPID)


@dataclass(frozen=True)
class Period:
    """One slice of the planning day, [start_s, start_s + duration_s)."""

    index: int
    start_s: float
    duration_s: float

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float


@dataclass(frozen=True)
class PlacedPoint:
    """A demand point tied to the borough it was drawn in."""

    point: GeoPoint
    borough: str
    name: str | None = None


@dataclass(frozen=True)
class ODPair:
    """A trip endpoint pair with its per-period charging demand in kW."""

    id: str
    origin: GeoPoint
    destination: GeoPoint
    borough_pair: tuple[str, str]
    demand_kw: tuple[float, ...]

    def total_demand_kw(self) -> float:
        return sum(self.demand_kw)


@dataclass(frozen=True)
class Station:
    """An existing charging station.

    ``per_outlet_kw_per_s`` is the supply rate of one outlet; a period of
    length T contributes outlets * rate * T kilowatts of capacity.  Capacity
    is always derived from the outlet count, never stored, so the two cannot
    drift apart.  A site with both level-2 and level-3 hardware is modeled
    as two co-located stations.
    """

    id: str
    location: GeoPoint
    level: int
    outlets: int
    per_outlet_kw_per_s: float
    max_outlets: int

    def capacity_kw(self, duration_s: float) -> float:
        return self.outlets * self.per_outlet_kw_per_s * duration_s

    def outlet_headroom(self) -> int:
        """How many outlets can still be added at this site."""
        return self.max_outlets - self.outlets


@dataclass(frozen=True)
class CandidateLocation:
    """A site where a new station may be opened, priced per level."""

    id: str
    location: GeoPoint
    open_cost_l2: float
    open_cost_l3: float
    outlet_cost_l2: float
    outlet_cost_l3: float

    def open_cost(self, level: int) -> float:
        return self.open_cost_l2 if level == LEVEL_FAST else self.open_cost_l3

    def outlet_cost(self, level: int) -> float:
        return self.outlet_cost_l2 if level == LEVEL_FAST else self.outlet_cost_l3


def _frozen_map(m: Mapping) -> Mapping:
    return MappingProxyType(dict(m))


@dataclass(frozen=True)
class CostSchedule:
    """Budget and pricing for network expansion.

    ``add_outlet_cost`` maps an existing station id to the price of adding
    one outlet there.  ``new_outlet_kw_l2``/``l3`` give the supply one
    outlet of a newly opened station contributes per period, and
    ``max_new_outlets_l2``/``l3`` cap the outlet count of a new station.
    """

    budget: float
    add_outlet_cost: Mapping[str, float]
    new_outlet_kw_l2: float
    new_outlet_kw_l3: float
    max_new_outlets_l2: int
    max_new_outlets_l3: int

    def __post_init__(self):
        object.__setattr__(self, "add_outlet_cost", _frozen_map(self.add_outlet_cost))

    def new_outlet_kw(self, level: int) -> float:
        return self.new_outlet_kw_l2 if level == LEVEL_FAST else self.new_outlet_kw_l3

    def new_outlet_cap(self, level: int) -> int:
        return self.max_new_outlets_l2 if level == LEVEL_FAST else self.max_new_outlets_l3


DEFAULT_OUTLET_COST = {LEVEL_FAST: 1.0, LEVEL_RAPID: 2.0}
DEFAULT_OPEN_COST = {LEVEL_FAST: 10.0, LEVEL_RAPID: 100.0}
DEFAULT_MAX_NEW_OUTLETS = {LEVEL_FAST: 16, LEVEL_RAPID: 7}


@dataclass(frozen=True)
class Instance:
    """A complete planning problem for one day."""

    periods: tuple[Period, ...]
    ods: tuple[ODPair, ...]
    stations: tuple[Station, ...]
    candidates: tuple[CandidateLocation, ...]
    costs: CostSchedule
    radius_m: float

    def total_demand_kw(self) -> float:
        return sum(od.total_demand_kw() for od in self.ods)

    def station(self, station_id: str) -> Station:
        for s in self.stations:
            if s.id == station_id:
                return s
        raise KeyError(station_id)

    def candidate(self, candidate_id: str) -> CandidateLocation:
        for c in self.candidates:
            if c.id == candidate_id:
                return c
        raise KeyError(candidate_id)


@dataclass(frozen=True)
class PlacementPlan:
    """A purchase decision: outlets added to stations, candidates opened.

    ``opened`` maps candidate id to (level, outlets); a candidate never
    opens at both levels.  The empty plan is always feasible and leaves the
    network unchanged.
    """

    added_outlets: Mapping[str, int] = field(default_factory=dict)
    opened: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    total_cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "added_outlets", _frozen_map(self.added_outlets))
        object.__setattr__(self, "opened", _frozen_map(self.opened))

    def added_at(self, station_id: str) -> int:
        return self.added_outlets.get(station_id, 0)

    def opened_at(self, candidate_id: str) -> tuple[int, int] | None:
        return self.opened.get(candidate_id)

    def is_empty(self) -> bool:
        return not self.added_outlets and not self.opened


EMPTY_PLAN = PlacementPlan()


def plan_cost(instance: Instance, plan: PlacementPlan) -> Fraction:
    """Exact cost of a plan under the instance's price schedule."""
    total = Fraction(0)
    for station_id, n in plan.added_outlets.items():
        total += Fraction(instance.costs.add_outlet_cost[station_id]) * n
    for candidate_id, (level, outlets) in plan.opened.items():
        cand = instance.candidate(candidate_id)
        total += Fraction(cand.open_cost(level))
        total += Fraction(cand.outlet_cost(level)) * outlets
    return total


def make_plan(instance: Instance, added_outlets: Mapping[str, int],
              opened: Mapping[str, tuple[int, int]]) -> PlacementPlan:
    """Build a plan with its cost filled in; zero entries are dropped."""
    added = {k: int(v) for k, v in added_outlets.items() if v > 0}
    kept = {k: (int(lv), int(n)) for k, (lv, n) in opened.items() if n > 0}
    plan = PlacementPlan(added_outlets=added, opened=kept)
    return replace(plan, total_cost=float(plan_cost(instance, plan)))


@dataclass(frozen=True)
class OdBreakdown:
    """Demand accounting for a single origin-destination pair."""

    od_id: str
    demand_kw: float
    satisfied_kw: float
    unsatisfied_kw: float
    impossible_kw: float


@dataclass(frozen=True)
class PeriodFlows:
    """Routed flow for one period, in kW.

    ``od_inflow_kw`` is demand admitted per OD; ``assignment_kw`` maps
    (od id, site id) to the flow that pair sends to that site; the two
    throughput maps give flow served per existing station and per opened
    candidate.
    """

    period_index: int
    od_inflow_kw: Mapping[str, float]
    assignment_kw: Mapping[tuple[str, str], float]
    station_throughput_kw: Mapping[str, float]
    candidate_throughput_kw: Mapping[str, float]

    def satisfied_kw(self) -> float:
        return sum(self.od_inflow_kw.values())


@dataclass(frozen=True)
class AssignmentResult:
    """Outcome of routing demand through a (possibly expanded) network."""

    total_demand_kw: float
    satisfied_kw: float
    unsatisfied_kw: float
    impossible_kw: float
    per_period: tuple[PeriodFlows, ...]
    per_od: tuple[OdBreakdown, ...]

    def satisfied_pct(self) -> float:
        if self.total_demand_kw <= 0.0:
            return 100.0
        return 100.0 * self.satisfied_kw / self.total_demand_kw


@dataclass(frozen=True)
class Violation:
    """One validation failure, with a stable machine-readable code."""

    code: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}({self.subject}): {self.message}"


class InvalidInstanceError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = tuple(violations)
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"instance failed validation: {lines}")


class InvalidPlanError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = tuple(violations)
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"plan failed validation: {lines}")


def _check_point(out: list[Violation], subject: str, point: GeoPoint) -> None:
    if not (math.isfinite(point.lat) and math.isfinite(point.lon)):
        out.append(Violation("NonFiniteCoordinate", subject,
                             f"coordinates ({point.lat}, {point.lon}) must be finite"))
        return
    if not -90.0 <= point.lat <= 90.0:
        out.append(Violation("LatitudeOutOfRange", subject,
                             f"latitude {point.lat} outside [-90, 90]"))
    if not -180.0 <= point.lon <= 180.0:
        out.append(Violation("LongitudeOutOfRange", subject,
                             f"longitude {point.lon} outside [-180, 180]"))


def validate_instance(instance: Instance) -> list[Violation]:
    """Check every structural invariant; returns an empty list when clean."""
    out: list[Violation] = []

    n_periods = len(instance.periods)
    if n_periods == 0:
        out.append(Violation("NoPeriods", "periods", "at least one period is required"))
    covered = 0.0
    for i, p in enumerate(instance.periods):
        if p.index != i:
            out.append(Violation("PeriodIndexNotContiguous", f"period[{i}]",
                                 f"expected index {i}, found {p.index}"))
        if not math.isfinite(p.duration_s) or p.duration_s <= 0.0:
            out.append(Violation("NonPositiveDuration", f"period[{i}]",
                                 f"duration {p.duration_s} must be positive"))
            continue
        if abs(p.start_s - covered) > 1e-6:
            out.append(Violation("PeriodGap", f"period[{i}]",
                                 f"starts at {p.start_s}, previous ends at {covered}"))
        covered += p.duration_s
    if n_periods and abs(covered - HORIZON_S) > 1e-6:
        out.append(Violation("HorizonMismatch", "periods",
                             f"periods cover {covered} s, horizon is {HORIZON_S} s"))

    seen_od: set[str] = set()
    for od in instance.ods:
        if od.id in seen_od:
            out.append(Violation("DuplicateId", od.id, "OD id used more than once"))
        seen_od.add(od.id)
        _check_point(out, od.id, od.origin)
        _check_point(out, od.id, od.destination)
        if len(od.demand_kw) != n_periods:
            out.append(Violation("DemandPeriodMismatch", od.id,
                                 f"{len(od.demand_kw)} demand entries for {n_periods} periods"))
        for t, kw in enumerate(od.demand_kw):
            if not math.isfinite(kw) or kw < 0.0:
                out.append(Violation("NegativeDemand", od.id,
                                     f"period {t} demand {kw} must be finite and >= 0"))

    seen_site: set[str] = set()
    for s in instance.stations:
        if s.id in seen_site:
            out.append(Violation("DuplicateId", s.id, "site id used more than once"))
        seen_site.add(s.id)
        _check_point(out, s.id, s.location)
        if s.level not in LEVELS:
            out.append(Violation("BadStationLevel", s.id,
                                 f"level {s.level} is not one of {LEVELS}"))
        if s.outlets < 1:
            out.append(Violation("NonPositiveOutlets", s.id,
                                 f"{s.outlets} outlets; a station has at least one"))
        if s.max_outlets < s.outlets:
            out.append(Violation("OutletsExceedMax", s.id,
                                 f"{s.outlets} outlets exceed site maximum {s.max_outlets}"))
        if not math.isfinite(s.per_outlet_kw_per_s) or s.per_outlet_kw_per_s <= 0.0:
            out.append(Violation("NonPositiveOutletRate", s.id,
                                 f"outlet rate {s.per_outlet_kw_per_s} kW/s must be positive"))

    for c in instance.candidates:
        if c.id in seen_site:
            out.append(Violation("DuplicateId", c.id, "site id used more than once"))
        seen_site.add(c.id)
        _check_point(out, c.id, c.location)
        for tag, cost in (("open_cost_l2", c.open_cost_l2),
                          ("open_cost_l3", c.open_cost_l3),
                          ("outlet_cost_l2", c.outlet_cost_l2),
                          ("outlet_cost_l3", c.outlet_cost_l3)):
            if not math.isfinite(cost) or cost < 0.0:
                out.append(Violation("NegativeCost", c.id, f"{tag} is {cost}"))

    costs = instance.costs
    if not math.isfinite(costs.budget) or costs.budget < 0.0:
        out.append(Violation("NegativeBudget", "costs", f"budget {costs.budget}"))
    station_by_id = {s.id: s for s in instance.stations}
    for station_id, k in costs.add_outlet_cost.items():
        if station_id not in station_by_id:
            out.append(Violation("UnknownStation", station_id,
                                 "outlet price given for a station not in the instance"))
        elif not math.isfinite(k) or k < 0.0:
            out.append(Violation("NegativeCost", station_id, f"outlet price {k}"))
    for s in instance.stations:
        if s.outlet_headroom() > 0 and s.id not in costs.add_outlet_cost:
            out.append(Violation("MissingOutletCost", s.id,
                                 "station has outlet headroom but no add-outlet price"))
    for level, kw in ((LEVEL_FAST, costs.new_outlet_kw_l2),
                      (LEVEL_RAPID, costs.new_outlet_kw_l3)):
        if not math.isfinite(kw) or kw <= 0.0:
            out.append(Violation("NonPositiveOutletRate", "costs",
                                 f"new level-{level} outlet supply {kw} kW must be positive"))
    for level, cap in ((LEVEL_FAST, costs.max_new_outlets_l2),
                       (LEVEL_RAPID, costs.max_new_outlets_l3)):
        if cap < 1:
            out.append(Violation("BadNewOutletCap", "costs",
                                 f"level-{level} outlet cap {cap} < 1"))

    if not math.isfinite(instance.radius_m) or instance.radius_m <= 0.0:
        out.append(Violation("NonPositiveRadius", "radius_m", f"{instance.radius_m}"))

    return out


def validate_plan(instance: Instance, plan: PlacementPlan) -> list[Violation]:
    """Check a plan against an instance: ids, caps, levels, cost, budget."""
    out: list[Violation] = []
    station_by_id = {s.id: s for s in instance.stations}
    candidate_ids = {c.id for c in instance.candidates}

    for station_id, n in plan.added_outlets.items():
        s = station_by_id.get(station_id)
        if s is None:
            out.append(Violation("UnknownStation", station_id,
                                 "plan adds outlets to a station not in the instance"))
            continue
        if n < 1:
            out.append(Violation("NonPositiveOutlets", station_id,
                                 f"plan adds {n} outlets; entries must be >= 1"))
        elif n > s.outlet_headroom():
            out.append(Violation("OutletsExceedMax", station_id,
                                 f"{s.outlets}+{n} outlets exceed site maximum {s.max_outlets}"))
        if station_id not in instance.costs.add_outlet_cost:
            out.append(Violation("MissingOutletCost", station_id,
                                 "no add-outlet price for this station"))

    for candidate_id, (level, outlets) in plan.opened.items():
        if candidate_id not in candidate_ids:
            out.append(Violation("UnknownCandidate", candidate_id,
                                 "plan opens a candidate not in the instance"))
            continue
        if level not in LEVELS:
            out.append(Violation("BadStationLevel", candidate_id,
                                 f"plan opens level {level}; must be one of {LEVELS}"))
            continue
        cap = instance.costs.new_outlet_cap(level)
        if outlets < 1:
            out.append(Violation("NonPositiveOutlets", candidate_id,
                                 f"plan opens with {outlets} outlets; at least one required"))
        elif outlets > cap:
            out.append(Violation("OutletsExceedMax", candidate_id,
                                 f"{outlets} outlets exceed level-{level} cap {cap}"))

    if not out:
        cost = plan_cost(instance, plan)
        if abs(float(cost) - plan.total_cost) > 1e-9 * max(1.0, float(cost)):
            out.append(Violation("TotalCostMismatch", "plan",
                                 f"stored cost {plan.total_cost}, priced cost {float(cost)}"))
        if cost > Fraction(instance.costs.budget):
            out.append(Violation("BudgetExceeded", "plan",
                                 f"plan costs {float(cost)}, budget is {instance.costs.budget}"))
    return out


def uniform_periods(n: int) -> tuple[Period, ...]:
    """Split the day into n equal periods."""
    dur = HORIZON_S / n
    return tuple(Period(index=i, start_s=i * dur, duration_s=dur) for i in range(n))


# --- JSON round trip ------------------------------------------------------
#
# Keys are stable and files are written with sorted keys so identical values
# serialize to identical bytes.

def _point_to_obj(p: GeoPoint) -> dict:
    return {"lat": p.lat, "lon": p.lon}


def _point_from_obj(obj: Mapping) -> GeoPoint:
    return GeoPoint(lat=float(obj["lat"]), lon=float(obj["lon"]))


def instance_to_obj(instance: Instance) -> dict:
    return {
        "periods": [
            {"index": p.index, "start_s": p.start_s, "duration_s": p.duration_s}
            for p in instance.periods
        ],
        "ods": [
            {
                "id": od.id,
                "origin": _point_to_obj(od.origin),
                "destination": _point_to_obj(od.destination),
                "borough_pair": list(od.borough_pair),
                "demand_kw": list(od.demand_kw),
            }
            for od in instance.ods
        ],
        "stations": [
            {
                "id": s.id,
                "location": _point_to_obj(s.location),
                "level": s.level,
                "outlets": s.outlets,
                "per_outlet_kw_per_s": s.per_outlet_kw_per_s,
                "max_outlets": s.max_outlets,
            }
            for s in instance.stations
        ],
        "candidates": [
            {
                "id": c.id,
                "location": _point_to_obj(c.location),
                "open_cost_l2": c.open_cost_l2,
                "open_cost_l3": c.open_cost_l3,
                "outlet_cost_l2": c.outlet_cost_l2,
                "outlet_cost_l3": c.outlet_cost_l3,
            }
            for c in instance.candidates
        ],
        "costs": {
            "budget": instance.costs.budget,
            "add_outlet_cost": dict(sorted(instance.costs.add_outlet_cost.items())),
            "new_outlet_kw_l2": instance.costs.new_outlet_kw_l2,
            "new_outlet_kw_l3": instance.costs.new_outlet_kw_l3,
            "max_new_outlets_l2": instance.costs.max_new_outlets_l2,
            "max_new_outlets_l3": instance.costs.max_new_outlets_l3,
        },
        "radius_m": instance.radius_m,
    }


def instance_from_obj(obj: Mapping) -> Instance:
    periods = tuple(
        Period(index=int(p["index"]), start_s=float(p["start_s"]),
               duration_s=float(p["duration_s"]))
        for p in obj["periods"]
    )
    ods = tuple(
        ODPair(
            id=str(o["id"]),
            origin=_point_from_obj(o["origin"]),
            destination=_point_from_obj(o["destination"]),
            borough_pair=(str(o["borough_pair"][0]), str(o["borough_pair"][1])),
            demand_kw=tuple(float(x) for x in o["demand_kw"]),
        )
        for o in obj["ods"]
    )
    stations = tuple(
        Station(
            id=str(s["id"]),
            location=_point_from_obj(s["location"]),
            level=int(s["level"]),
            outlets=int(s["outlets"]),
            per_outlet_kw_per_s=float(s["per_outlet_kw_per_s"]),
            max_outlets=int(s["max_outlets"]),
        )
        for s in obj["stations"]
    )
    candidates = tuple(
        CandidateLocation(
            id=str(c["id"]),
            location=_point_from_obj(c["location"]),
            open_cost_l2=float(c["open_cost_l2"]),
            open_cost_l3=float(c["open_cost_l3"]),
            outlet_cost_l2=float(c["outlet_cost_l2"]),
            outlet_cost_l3=float(c["outlet_cost_l3"]),
        )
        for c in obj["candidates"]
    )
    costs_obj = obj["costs"]
    costs = CostSchedule(
        budget=float(costs_obj["budget"]),
        add_outlet_cost={str(k): float(v)
                         for k, v in costs_obj["add_outlet_cost"].items()},
        new_outlet_kw_l2=float(costs_obj["new_outlet_kw_l2"]),
        new_outlet_kw_l3=float(costs_obj["new_outlet_kw_l3"]),
        max_new_outlets_l2=int(costs_obj["max_new_outlets_l2"]),
        max_new_outlets_l3=int(costs_obj["max_new_outlets_l3"]),
    )
    return Instance(periods=periods, ods=ods, stations=stations,
                    candidates=candidates, costs=costs,
                    radius_m=float(obj["radius_m"]))


def plan_to_obj(plan: PlacementPlan) -> dict:
    return {
        "added_outlets": {k: int(v) for k, v in sorted(plan.added_outlets.items())},
        "opened": {k: [int(v[0]), int(v[1])] for k, v in sorted(plan.opened.items())},
        "total_cost": plan.total_cost,
    }


def plan_from_obj(obj: Mapping) -> PlacementPlan:
    return PlacementPlan(
        added_outlets={str(k): int(v) for k, v in obj.get("added_outlets", {}).items()},
        opened={str(k): (int(v[0]), int(v[1])) for k, v in obj.get("opened", {}).items()},
        total_cost=float(obj.get("total_cost", 0.0)),
    )


def result_to_obj(result: AssignmentResult) -> dict:
    return {
        "total_demand_kw": result.total_demand_kw,
        "satisfied_kw": result.satisfied_kw,
        "unsatisfied_kw": result.unsatisfied_kw,
        "impossible_kw": result.impossible_kw,
        "satisfied_pct": result.satisfied_pct(),
        "per_period": [
            {
                "period_index": pf.period_index,
                "satisfied_kw": pf.satisfied_kw(),
                "od_inflow_kw": {k: v for k, v in sorted(pf.od_inflow_kw.items())},
                "assignment_kw": {f"{od}->{site}": v
                                  for (od, site), v in sorted(pf.assignment_kw.items())},
                "station_throughput_kw": dict(sorted(pf.station_throughput_kw.items())),
                "candidate_throughput_kw": dict(sorted(pf.candidate_throughput_kw.items())),
            }
            for pf in result.per_period
        ],
        "per_od": [
            {
                "od_id": b.od_id,
                "demand_kw": b.demand_kw,
                "satisfied_kw": b.satisfied_kw,
                "unsatisfied_kw": b.unsatisfied_kw,
                "impossible_kw": b.impossible_kw,
            }
            for b in result.per_od
        ],
    }


def dump_json(obj, path) -> None:
    """Write JSON with sorted keys and a trailing newline, byte stable."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_instance(path) -> Instance:
    instance = instance_from_obj(load_json(path))
    violations = validate_instance(instance)
    if violations:
        raise InvalidInstanceError(violations)
    return instance


def save_instance(instance: Instance, path) -> None:
    dump_json(instance_to_obj(instance), path)


def with_budget(instance: Instance, budget: float) -> Instance:
    return replace(instance, costs=replace(instance.costs, budget=budget))
