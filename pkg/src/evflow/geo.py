"""Distances, station feasibility, and the time-expanded flow network.

The network has four layers: a source, one node per OD pair, one node per
station/candidate site, and a sink.  Demand arcs (source to OD) are capped
by the OD's per-period demand, match arcs (OD to site) are uncapped, and
supply arcs (site to sink) are capped by the site's per-period capacity.
Topology is shared across periods; only capacities change.

Capacities are quantized to integer milli-kW so flows carry no float
residue: the quantum is the per-outlet period supply, and a station's cap
is outlets times that quantum.  That keeps cap-to-outlet ratios exactly
integral and makes max-flow values integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .model import (
    LEVEL_FAST,
    LEVEL_RAPID,
    AssignmentResult,
    GeoPoint,
    Instance,
    InvalidInstanceError,
    ODPair,
    PlacementPlan,
    validate_instance,
)

EARTH_RADIUS_M = 6_371_000.0

ARC_DEMAND = "demand"
ARC_MATCH = "match"
ARC_STATION = "station"
ARC_CANDIDATE = "candidate"


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371 km."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = (math.sin(dlat / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def feasible_stations(od: ODPair, sites: Sequence, radius_m: float) -> list[str]:
    """Ids of sites within walking radius of either OD endpoint (inclusive)."""
    out = []
    for site in sites:
        if (haversine_m(od.origin, site.location) <= radius_m
                or haversine_m(od.destination, site.location) <= radius_m):
            out.append(site.id)
    return out


@dataclass(frozen=True)
class Arc:
    """One directed arc; od_id/site_id name the entities it touches."""

    index: int
    tail: int
    head: int
    kind: str
    od_id: str | None
    site_id: str | None


@dataclass(frozen=True)
class FlowNetwork:
    """Time-expanded assignment network with integer milli-kW capacities."""

    n_nodes: int
    source: int
    sink: int
    od_ids: tuple[str, ...]
    station_ids: tuple[str, ...]
    candidate_ids: tuple[str, ...]
    arcs: tuple[Arc, ...]
    n_periods: int
    # per period, per OD position: demand cap in milli-kW
    demand_mkw: tuple[tuple[int, ...], ...]
    # per period, per station position: one outlet's supply in milli-kW
    station_unit_mkw: tuple[tuple[int, ...], ...]
    station_outlets: tuple[int, ...]
    # per candidate level: one outlet's supply in milli-kW (period-constant)
    candidate_unit_l2_mkw: int
    candidate_unit_l3_mkw: int
    # sentinel for uncapped match arcs, strictly above total demand
    inf_mkw: int

    def od_node(self, pos: int) -> int:
        return 1 + pos

    def station_node(self, pos: int) -> int:
        return 1 + len(self.od_ids) + pos

    def candidate_node(self, pos: int) -> int:
        return 1 + len(self.od_ids) + len(self.station_ids) + pos

    def total_demand_mkw(self) -> int:
        return sum(sum(row) for row in self.demand_mkw)

    def station_cap_mkw(self, t: int, pos: int, extra_outlets: int = 0) -> int:
        return (self.station_outlets[pos] + extra_outlets) * self.station_unit_mkw[t][pos]

    def candidate_cap_mkw(self, level: int, outlets: int) -> int:
        unit = (self.candidate_unit_l2_mkw if level == LEVEL_FAST
                else self.candidate_unit_l3_mkw)
        return outlets * unit

    def capacities_mkw(self, t: int, plan: PlacementPlan | None = None) -> list[int]:
        """Arc capacity vector for period t, plan-adjusted when given."""
        od_pos = {oid: i for i, oid in enumerate(self.od_ids)}
        station_pos = {sid: i for i, sid in enumerate(self.station_ids)}
        caps = []
        for arc in self.arcs:
            if arc.kind == ARC_DEMAND:
                caps.append(self.demand_mkw[t][od_pos[arc.od_id]])
            elif arc.kind == ARC_MATCH:
                caps.append(self.inf_mkw)
            elif arc.kind == ARC_STATION:
                extra = plan.added_at(arc.site_id) if plan is not None else 0
                caps.append(self.station_cap_mkw(t, station_pos[arc.site_id], extra))
            else:
                opened = plan.opened_at(arc.site_id) if plan is not None else None
                if opened is None:
                    caps.append(0)
                else:
                    level, outlets = opened
                    caps.append(self.candidate_cap_mkw(level, outlets))
        return caps

    def active_site_ids(self, plan: PlacementPlan | None = None) -> set[str]:
        """Sites that actually supply power: stations plus opened candidates."""
        active = set(self.station_ids)
        if plan is not None:
            active.update(cid for cid in plan.opened if cid in set(self.candidate_ids))
        return active


def _mkw(kw: float) -> int:
    return round(kw * 1000.0)


def build_flow_network(instance: Instance, include_candidates: bool = False) -> FlowNetwork:
    """Construct the assignment network; raises on an invalid instance."""
    violations = validate_instance(instance)
    if violations:
        raise InvalidInstanceError(violations)

    od_ids = tuple(od.id for od in instance.ods)
    station_ids = tuple(s.id for s in instance.stations)
    candidate_ids = (tuple(c.id for c in instance.candidates)
                     if include_candidates else ())

    n_od = len(od_ids)
    n_st = len(station_ids)
    n_cd = len(candidate_ids)
    n_nodes = 1 + n_od + n_st + n_cd + 1
    source = 0
    sink = n_nodes - 1

    demand_mkw = tuple(
        tuple(_mkw(od.demand_kw[t]) for od in instance.ods)
        for t in range(len(instance.periods))
    )
    station_unit_mkw = tuple(
        tuple(_mkw(s.per_outlet_kw_per_s * p.duration_s) for s in instance.stations)
        for p in instance.periods
    )
    station_outlets = tuple(s.outlets for s in instance.stations)
    inf_mkw = sum(sum(row) for row in demand_mkw) + 1

    sites = list(instance.stations) + (list(instance.candidates)
                                       if include_candidates else [])
    site_node = {}
    for i, sid in enumerate(station_ids):
        site_node[sid] = 1 + n_od + i
    for i, cid in enumerate(candidate_ids):
        site_node[cid] = 1 + n_od + n_st + i

    arcs: list[Arc] = []
    for i, od in enumerate(instance.ods):
        arcs.append(Arc(index=len(arcs), tail=source, head=1 + i,
                        kind=ARC_DEMAND, od_id=od.id, site_id=None))
    for i, od in enumerate(instance.ods):
        for sid in feasible_stations(od, sites, instance.radius_m):
            kind = ARC_MATCH
            arcs.append(Arc(index=len(arcs), tail=1 + i, head=site_node[sid],
                            kind=kind, od_id=od.id, site_id=sid))
    for i, sid in enumerate(station_ids):
        arcs.append(Arc(index=len(arcs), tail=site_node[sid], head=sink,
                        kind=ARC_STATION, od_id=None, site_id=sid))
    for i, cid in enumerate(candidate_ids):
        arcs.append(Arc(index=len(arcs), tail=site_node[cid], head=sink,
                        kind=ARC_CANDIDATE, od_id=None, site_id=cid))

    return FlowNetwork(
        n_nodes=n_nodes,
        source=source,
        sink=sink,
        od_ids=od_ids,
        station_ids=station_ids,
        candidate_ids=candidate_ids,
        arcs=tuple(arcs),
        n_periods=len(instance.periods),
        demand_mkw=demand_mkw,
        station_unit_mkw=station_unit_mkw,
        station_outlets=station_outlets,
        candidate_unit_l2_mkw=_mkw(instance.costs.new_outlet_kw_l2),
        candidate_unit_l3_mkw=_mkw(instance.costs.new_outlet_kw_l3),
        inf_mkw=inf_mkw,
    )


def match_arcs_by_od(network: FlowNetwork) -> dict[str, list[Arc]]:
    out: dict[str, list[Arc]] = {od_id: [] for od_id in network.od_ids}
    for arc in network.arcs:
        if arc.kind == ARC_MATCH:
            out[arc.od_id].append(arc)
    return out


def impossible_ods(network: FlowNetwork) -> list[str]:
    """ODs with no reachable site at all: structurally unservable demand."""
    by_od = match_arcs_by_od(network)
    return [od_id for od_id in network.od_ids if not by_od[od_id]]


def impossible_demand_kw(network: FlowNetwork) -> float:
    """Total demand of the impossible ODs, summed over every period."""
    missing = set(impossible_ods(network))
    total = 0
    for pos, od_id in enumerate(network.od_ids):
        if od_id in missing:
            total += sum(network.demand_mkw[t][pos]
                         for t in range(network.n_periods))
    return total / 1000.0


def network_to_dot(network: FlowNetwork) -> str:
    """Graphviz dump with node roles in labels, for eyeballing topology."""
    lines = ["digraph flow {", "  rankdir=LR;"]
    lines.append(f'  n{network.source} [label="source", shape=diamond];')
    for pos, od_id in enumerate(network.od_ids):
        lines.append(f'  n{network.od_node(pos)} [label="od:{od_id}"];')
    for pos, sid in enumerate(network.station_ids):
        lines.append(f'  n{network.station_node(pos)} [label="station:{sid}", shape=box];')
    for pos, cid in enumerate(network.candidate_ids):
        lines.append(f'  n{network.candidate_node(pos)} [label="candidate:{cid}", shape=box, style=dashed];')
    lines.append(f'  n{network.sink} [label="sink", shape=diamond];')
    for arc in network.arcs:
        lines.append(f'  n{arc.tail} -> n{arc.head} [label="{arc.kind}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def demand_map_layer(instance: Instance, result: AssignmentResult) -> dict:
    """GeoJSON point layer of OD endpoints with their demand accounting.

    Each OD contributes half of its figures to each endpoint; endpoints
    sharing exact coordinates are merged.
    """
    per_od = {b.od_id: b for b in result.per_od}
    acc: dict[tuple[float, float], dict[str, float]] = {}
    for od in instance.ods:
        b = per_od.get(od.id)
        if b is None:
            continue
        for point in (od.origin, od.destination):
            key = (point.lat, point.lon)
            entry = acc.setdefault(key, {
                "demand_kw": 0.0, "satisfied_kw": 0.0,
                "unsatisfied_kw": 0.0, "impossible_kw": 0.0, "ods": 0,
            })
            entry["demand_kw"] += b.demand_kw / 2.0
            entry["satisfied_kw"] += b.satisfied_kw / 2.0
            entry["unsatisfied_kw"] += b.unsatisfied_kw / 2.0
            entry["impossible_kw"] += b.impossible_kw / 2.0
            entry["ods"] += 1
    features = []
    for (lat, lon) in sorted(acc):
        props = acc[(lat, lon)]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}
