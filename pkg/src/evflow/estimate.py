"""Demand estimation from observed charging sessions.

The pipeline inverts observed supply into the demand that produced it: sum
delivered energy per borough, solve the transposed trip-fraction system for
per-borough demand, spread borough-pair demand uniformly over the OD pairs
connecting them, and split across periods by weight.

Arithmetic is exact: every input number is lifted to Fraction, so the
worked checks in the tests hold with zero tolerance.  The least-squares
fallback for singular systems is the one deliberately inexact path and is
flagged as such in the result.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import GeoPoint, Period, PlacedPoint


class InputFormatError(ValueError):
    """Malformed tabular input; carries the 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class NoSessionsError(ValueError):
    pass


class DegenerateSystemError(ValueError):
    pass


@dataclass(frozen=True)
class SessionRecord:
    """One observed charging session at a station."""

    station_id: str
    start_s: Fraction
    duration_s: Fraction
    kw_per_s: Fraction


@dataclass(frozen=True)
class ODMatrix:
    """Trip fractions between boroughs; row i gives destinations of trips
    starting in borough i."""

    boroughs: tuple[str, ...]
    p: tuple[tuple[Fraction, ...], ...]

    def fraction(self, origin: str, destination: str) -> Fraction:
        i = self.boroughs.index(origin)
        j = self.boroughs.index(destination)
        return self.p[i][j]


def _frac(raw: str, path, line_no: int, what: str) -> Fraction:
    try:
        return Fraction(raw.strip())
    except (ValueError, ZeroDivisionError):
        raise InputFormatError(path, line_no, f"cannot parse {what} {raw!r} as a number")


def read_sessions(path) -> list[SessionRecord]:
    """Parse a session CSV: station_id,start_s,duration_s,kw_per_s."""
    out: list[SessionRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        expected = ["station_id", "start_s", "duration_s", "kw_per_s"]
        if [h.strip() for h in header] != expected:
            raise InputFormatError(path, 1, f"header must be {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise InputFormatError(path, line_no, f"expected 4 fields, found {len(row)}")
            start = _frac(row[1], path, line_no, "start_s")
            duration = _frac(row[2], path, line_no, "duration_s")
            rate = _frac(row[3], path, line_no, "kw_per_s")
            if not 0 <= start < 86400:
                raise InputFormatError(path, line_no,
                                       f"start_s {float(start)} outside [0, 86400)")
            if duration <= 0:
                raise InputFormatError(path, line_no, "duration_s must be positive")
            if rate <= 0:
                raise InputFormatError(path, line_no, "kw_per_s must be positive")
            out.append(SessionRecord(station_id=row[0].strip(), start_s=start,
                                     duration_s=duration, kw_per_s=rate))
    return out


ROW_SUM_TOL = Fraction(1, 10**9)


def read_od_matrix(path) -> ODMatrix:
    """Parse a square trip-fraction CSV with borough ids on both axes."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputFormatError(path, 1, "empty OD matrix file")
    header = [cell.strip() for cell in rows[0][1:]]
    if not header:
        raise InputFormatError(path, 1, "header row names no boroughs")
    n = len(header)
    p: list[tuple[Fraction, ...]] = []
    row_ids: list[str] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != n + 1:
            raise InputFormatError(path, line_no,
                                   f"expected {n + 1} fields, found {len(row)}")
        row_ids.append(row[0].strip())
        values = tuple(_frac(cell, path, line_no, "trip fraction") for cell in row[1:])
        for v in values:
            if v < 0:
                raise InputFormatError(path, line_no, f"negative trip fraction {float(v)}")
        total = sum(values)
        if abs(total - 1) > ROW_SUM_TOL:
            raise InputFormatError(path, line_no,
                                   f"RowSumError: row sums to {float(total)}, expected 1")
        p.append(values)
    if row_ids != header:
        raise InputFormatError(path, 1,
                               f"row ids {row_ids} do not match header {header}")
    return ODMatrix(boroughs=tuple(header), p=tuple(p))


def read_assignment(path) -> dict[str, str]:
    """Parse a station-to-borough CSV: station_id,borough_id."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["station_id", "borough_id"]:
            raise InputFormatError(path, 1, "header must be station_id,borough_id")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise InputFormatError(path, line_no, f"expected 2 fields, found {len(row)}")
            sid = row[0].strip()
            if sid in out:
                raise InputFormatError(path, line_no, f"station {sid} assigned twice")
            out[sid] = row[1].strip()
    return out


def read_points(path) -> list[PlacedPoint]:
    """Parse a demand-point CSV: point_id,lat,lon,borough_id."""
    out: list[PlacedPoint] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["point_id", "lat", "lon", "borough_id"]
        if header is None or [h.strip() for h in header] != expected:
            raise InputFormatError(path, 1, f"header must be {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise InputFormatError(path, line_no, f"expected 4 fields, found {len(row)}")
            pid = row[0].strip()
            if pid in seen:
                raise InputFormatError(path, line_no, f"point {pid} defined twice")
            seen.add(pid)
            try:
                lat = float(row[1])
                lon = float(row[2])
            except ValueError:
                raise InputFormatError(path, line_no, "lat and lon must be numbers") from None
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise InputFormatError(path, line_no, f"coordinates ({lat}, {lon}) out of range")
            out.append(PlacedPoint(point=GeoPoint(lat=lat, lon=lon),
                                   borough=row[3].strip(), name=pid))
    return out


def mean_rate_kw_per_s(sessions: Iterable[SessionRecord], station_id: str) -> Fraction:
    """Average per-session supply rate observed at one station."""
    rates = [s.kw_per_s for s in sessions if s.station_id == station_id]
    if not rates:
        raise NoSessionsError(f"no sessions recorded for station {station_id}")
    return sum(rates) / len(rates)


def station_capacity_kw(sessions: Iterable[SessionRecord], station,
                        period: Period) -> Fraction:
    """Period supply cap of a station: outlets x mean session rate x length.

    ``station`` needs only ``id`` and ``outlets`` attributes.
    """
    rate = mean_rate_kw_per_s(sessions, station.id)
    return station.outlets * rate * Fraction(period.duration_s)


def _overlap_s(session: SessionRecord, period: Period) -> Fraction:
    """Seconds of the session inside the period, wrapping past midnight."""
    p0 = Fraction(period.start_s)
    p1 = Fraction(period.end_s)
    total = Fraction(0)
    start = session.start_s
    remaining = session.duration_s
    while remaining > 0:
        chunk = min(remaining, 86400 - start)
        lo = max(start, p0)
        hi = min(start + chunk, p1)
        if hi > lo:
            total += hi - lo
        remaining -= chunk
        start = Fraction(0)
    return total


def borough_supply_kw(sessions: Iterable[SessionRecord],
                      assignment: Mapping[str, str],
                      period: Period) -> dict[str, Fraction]:
    """Energy delivered per borough within the period (kW of charging flow).

    Every session must belong to an assigned station; sessions crossing the
    period boundary count pro rata by time overlap.
    """
    out: dict[str, Fraction] = {b: Fraction(0) for b in assignment.values()}
    for s in sessions:
        if s.station_id not in assignment:
            raise KeyError(f"session references unassigned station {s.station_id}")
        borough = assignment[s.station_id]
        out[borough] += _overlap_s(s, period) * s.kw_per_s
    return out


@dataclass(frozen=True)
class DemandEstimate:
    """Per-borough demand plus how it was obtained."""

    q_kw: Mapping[str, Fraction]
    exact: bool
    clamped: tuple[str, ...]


def _solve_exact(matrix: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction] | None:
    """Partial-pivot elimination over Fractions; None when singular."""
    n = len(rhs)
    a = [row[:] + [rhs[i]] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot_row = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[pivot_row][col] == 0:
            return None
        a[col], a[pivot_row] = a[pivot_row], a[col]
        pivot = a[col][col]
        for r in range(n):
            if r != col and a[r][col] != 0:
                factor = a[r][col] / pivot
                a[r] = [a[r][k] - factor * a[col][k] for k in range(n + 1)]
    return [a[i][n] / a[i][i] for i in range(n)]


def estimate_borough_demand(od: ODMatrix, r: Mapping[str, Fraction]) -> DemandEstimate:
    """Recover borough demand q from supplied energy r via p^T q = r.

    Exact elimination when the system is nonsingular; otherwise a
    least-squares solution with negative components clamped to zero, marked
    inexact.  A condition number above 1e12 triggers a warning.
    """
    boroughs = od.boroughs
    n = len(boroughs)
    if all(v == 0 for row in od.p for v in row):
        raise DegenerateSystemError("every trip fraction is zero")
    # transpose: unknowns are origins, equations are destination boroughs
    matrix = [[Fraction(od.p[i][j]) for i in range(n)] for j in range(n)]
    rhs = [Fraction(r[b]) for b in boroughs]

    cond = float(np.linalg.cond(np.array(matrix, dtype=float)))
    if cond > 1e12:
        warnings.warn(f"trip-fraction system condition number {cond:.3e} exceeds 1e12; "
                      "demand estimates may be unstable")

    solution = _solve_exact(matrix, rhs)
    if solution is not None:
        return DemandEstimate(
            q_kw={b: solution[i] for i, b in enumerate(boroughs)},
            exact=True, clamped=())

    a = np.array(matrix, dtype=float)
    b_vec = np.array([float(v) for v in rhs])
    x, *_ = np.linalg.lstsq(a, b_vec, rcond=None)
    clamped = tuple(boroughs[i] for i in range(n) if x[i] < 0)
    q = {boroughs[i]: Fraction(max(0.0, float(x[i]))) for i in range(n)}
    return DemandEstimate(q_kw=q, exact=False, clamped=clamped)


def od_demand_kw(q: Mapping[str, Fraction], od: ODMatrix,
                 pair: tuple[str, str]) -> Fraction:
    """Daily charging demand between a borough pair.

    Distinct boroughs combine both travel directions; a borough with itself
    uses its internal trip share once.
    """
    i, j = pair
    if i == j:
        return Fraction(q[i]) * od.fraction(i, i)
    return (Fraction(q[i]) * od.fraction(i, j)
            + Fraction(q[j]) * od.fraction(j, i))


def all_pair_demands_kw(q: Mapping[str, Fraction], od: ODMatrix) -> dict[tuple[str, str], Fraction]:
    """Demand for every unordered borough pair, keyed by sorted pair."""
    out: dict[tuple[str, str], Fraction] = {}
    boroughs = od.boroughs
    for a_idx, a in enumerate(boroughs):
        for b in boroughs[a_idx:]:
            key = tuple(sorted((a, b)))
            out[key] = od_demand_kw(q, od, key)
    return out


@dataclass(frozen=True)
class SplitDemand:
    """Uniform distribution of borough-pair demand over its OD pairs."""

    od_demand_kw: Mapping[str, tuple[Fraction, ...]]
    lost_kw: Mapping[tuple[str, str], Fraction]

    def total_lost_kw(self) -> Fraction:
        return sum(self.lost_kw.values(), Fraction(0))


def split_demand_to_ods(pair_demand_kw: Mapping[tuple[str, str], Fraction],
                        ods_by_pair: Mapping[tuple[str, str], Sequence[str]],
                        period_weights: Sequence[Fraction]) -> SplitDemand:
    """Divide each borough pair's demand equally among its OD pairs, then
    across periods by weight.

    Pairs with demand but no OD to carry it are reported as lost rather
    than silently dropped.
    """
    weights = [Fraction(w) for w in period_weights]
    if abs(sum(weights) - 1) > ROW_SUM_TOL:
        raise ValueError(f"period weights sum to {float(sum(weights))}, expected 1")
    out: dict[str, tuple[Fraction, ...]] = {}
    lost: dict[tuple[str, str], Fraction] = {}
    for pair in sorted(pair_demand_kw):
        demand = Fraction(pair_demand_kw[pair])
        if demand == 0:
            continue
        ods = list(ods_by_pair.get(pair, ()))
        if not ods:
            lost[pair] = demand
            continue
        share = demand / len(ods)
        vector = tuple(share * w for w in weights)
        for od_id in ods:
            out[od_id] = vector
    return SplitDemand(od_demand_kw=out, lost_kw=lost)


def period_energy_shares(sessions: Sequence[SessionRecord],
                         periods: Sequence[Period]) -> tuple[Fraction, ...]:
    """Fraction of observed delivered energy falling in each period.

    With no sessions the split is uniform, so callers always get weights
    summing to one.
    """
    if not sessions:
        return tuple(Fraction(1, len(periods)) for _ in periods)
    energy = [sum(_overlap_s(s, p) * s.kw_per_s for s in sessions) for p in periods]
    total = sum(energy)
    if total == 0:
        return tuple(Fraction(1, len(periods)) for _ in periods)
    return tuple(e / total for e in energy)
