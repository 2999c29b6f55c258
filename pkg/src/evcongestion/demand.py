"""Trajectory records to charging-demand points.

A vehicle that stays within ``dwell_radius`` of one spot for at least
``dwell_threshold`` minutes has a charging opportunity there. Its energy need
is the distance driven since the previous dwell, converted with the battery
capacity and electric range, capped at a full battery.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

__all__ = [
    "EARTH_RADIUS_KM",
    "TravelRecord",
    "VehicleParams",
    "DemandPoint",
    "Dwell",
    "Leg",
    "ParseError",
    "ParseResult",
    "haversine_km",
    "haversine_matrix",
    "parse_records",
    "group_by_vehicle",
    "detect_dwells",
    "travel_legs",
    "extract_demands",
    "hourly_arrival_rates",
    "peak_hour",
    "days_spanned",
    "sample_vehicles",
    "format_records_csv",
    "write_demands_csv",
    "read_demands_csv",
]

EARTH_RADIUS_KM = 6371.0
TIMESTAMP_FORMAT = "%Y%m%d%H%M%S"
DEMAND_HEADER = ("lon", "lat", "weight_kwh", "arrival_iso8601", "charge_hours", "vehicle_id")


@dataclass(frozen=True, order=True)
class TravelRecord:
    vehicle_id: str
    timestamp: datetime
    longitude: float
    latitude: float

    @property
    def location(self) -> tuple[float, float]:
        return (self.longitude, self.latitude)


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle and dwell-detection settings (kWh, km, kW, minutes, metres)."""

    battery_capacity: float = 10.0
    electric_range: float = 50.0
    charger_power: float = 10.0
    dwell_threshold: float = 30.0
    dwell_radius: float = 100.0
    max_gap: float = 60.0

    def __post_init__(self):
        for name in ("battery_capacity", "electric_range", "charger_power",
                     "dwell_threshold", "dwell_radius", "max_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class DemandPoint:
    location: tuple[float, float]
    weight: float
    arrival_time: datetime
    charge_duration: float
    source_vehicle: str


@dataclass(frozen=True)
class Dwell:
    anchor: tuple[float, float]
    start: datetime
    end: datetime
    first: int
    last: int

    @property
    def minutes(self) -> float:
        return (self.end - self.start).total_seconds() / 60.0


@dataclass(frozen=True)
class Leg:
    """A stretch of one trajectory: ``drive``, ``dwell`` or ``gap``."""

    kind: str
    first: int
    last: int
    km: float


@dataclass(frozen=True)
class ParseError:
    line: int
    message: str
    text: str


@dataclass
class ParseResult:
    records: list[TravelRecord] = field(default_factory=list)
    errors: list[ParseError] = field(default_factory=list)


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two (lon, lat) points in degrees."""
    lon1, lat1 = map(math.radians, a)
    lon2, lat2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances (km) between rows of ``a`` (n, 2) and ``b`` (m, 2), lon/lat degrees."""
    a = np.radians(np.asarray(a, dtype=float).reshape(-1, 2))
    b = np.radians(np.asarray(b, dtype=float).reshape(-1, 2))
    lon1, lat1 = a[:, 0:1], a[:, 1:2]
    lon2, lat2 = b[:, 0][None, :], b[:, 1][None, :]
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _parse_timestamp(text: str) -> datetime:
    if len(text) != 14 or not text.isdigit():
        raise ValueError(f"malformed timestamp {text!r}")
    try:
        return datetime(int(text[0:4]), int(text[4:6]), int(text[6:8]),
                        int(text[8:10]), int(text[10:12]), int(text[12:14]))
    except ValueError:
        raise ValueError(f"malformed timestamp {text!r}") from None


def _parse_row(fields: Sequence[str]) -> TravelRecord:
    if len(fields) != 4:
        raise ValueError(f"expected 4 fields, got {len(fields)}")
    vid, ts, lon_s, lat_s = (f.strip() for f in fields)
    if not vid:
        raise ValueError("empty vehicle_id")
    stamp = _parse_timestamp(ts)
    try:
        lon, lat = float(lon_s), float(lat_s)
    except ValueError:
        raise ValueError("non-numeric coordinate") from None
    if not -90.0 <= lat <= 90.0:
        raise ValueError("latitude out of range")
    if not -180.0 <= lon <= 180.0:
        raise ValueError("longitude out of range")
    return TravelRecord(vid, stamp, lon, lat)


def parse_records(stream: Iterable[str] | TextIO) -> ParseResult:
    """Parse ``vehicle_id,timestamp,longitude,latitude`` rows.

    Bad rows become :class:`ParseError` entries (1-based line numbers) and do
    not stop parsing. Records come back sorted by vehicle id, then timestamp.
    """
    result = ParseResult()
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or all(not f.strip() for f in row):
            continue
        if lineno == 1 and row[0].strip().lower() == "vehicle_id":
            continue
        try:
            result.records.append(_parse_row(row))
        except ValueError as exc:
            result.errors.append(ParseError(lineno, str(exc), ",".join(row)))
    result.records.sort(key=lambda r: (r.vehicle_id, r.timestamp))
    return result


def group_by_vehicle(records: Iterable[TravelRecord]) -> dict[str, list[TravelRecord]]:
    groups: dict[str, list[TravelRecord]] = defaultdict(list)
    for rec in records:
        groups[rec.vehicle_id].append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r.timestamp)
    return dict(sorted(groups.items()))


def _segments(records: Sequence[TravelRecord], params: VehicleParams) -> Iterator[tuple[int, int]]:
    """Index ranges [lo, hi) with no gap longer than ``max_gap`` inside."""
    gap = timedelta(minutes=params.max_gap)
    lo = 0
    for i in range(1, len(records)):
        if records[i].timestamp - records[i - 1].timestamp > gap:
            yield lo, i
            lo = i
    if records:
        yield lo, len(records)


def _dwells_in(records: Sequence[TravelRecord], lo: int, hi: int, params: VehicleParams) -> list[Dwell]:
    radius_km = params.dwell_radius / 1000.0
    threshold = timedelta(minutes=params.dwell_threshold)
    out = []
    i = lo
    while i < hi:
        anchor = records[i].location
        j = i + 1
        while j < hi and haversine_km(anchor, records[j].location) <= radius_km:
            j += 1
        if records[j - 1].timestamp - records[i].timestamp >= threshold:
            out.append(Dwell(anchor, records[i].timestamp, records[j - 1].timestamp, i, j - 1))
            i = j
        else:
            i += 1
    return out


def detect_dwells(records: Sequence[TravelRecord], params: VehicleParams = VehicleParams()) -> list[Dwell]:
    """Anchor-radius stay points of one vehicle's time-sorted records.

    A dwell is a maximal run of fixes within ``dwell_radius`` metres of the
    run's first fix lasting at least ``dwell_threshold`` minutes. Runs never
    cross a reporting gap longer than ``max_gap`` minutes.
    """
    if len(records) < 2:
        return []
    out: list[Dwell] = []
    for lo, hi in _segments(records, params):
        out.extend(_dwells_in(records, lo, hi, params))
    return out


def travel_legs(records: Sequence[TravelRecord], params: VehicleParams = VehicleParams()) -> list[Leg]:
    """Split the fix-to-fix path into drive, dwell and gap legs.

    Every consecutive pair of fixes belongs to exactly one leg, so leg lengths
    add up to the full path length.
    """
    n = len(records)
    if n < 2:
        return []
    gap = timedelta(minutes=params.max_gap)
    in_dwell = np.zeros(n - 1, dtype=bool)
    for d in detect_dwells(records, params):
        in_dwell[d.first:d.last] = True
    legs: list[Leg] = []
    kind = None
    start = 0
    km = 0.0
    for k in range(n - 1):
        if records[k + 1].timestamp - records[k].timestamp > gap:
            step_kind = "gap"
        else:
            step_kind = "dwell" if in_dwell[k] else "drive"
        step = haversine_km(records[k].location, records[k + 1].location)
        if step_kind != kind:
            if kind is not None:
                legs.append(Leg(kind, start, k, km))
            kind, start, km = step_kind, k, 0.0
        km += step
    legs.append(Leg(kind, start, n - 1, km))
    return legs


def _vehicle_demands(records: Sequence[TravelRecord], params: VehicleParams) -> list[DemandPoint]:
    dwells = detect_dwells(records, params)
    if not dwells:
        return []
    gap = timedelta(minutes=params.max_gap)
    out = []
    pos = 0
    traveled = 0.0
    for d in dwells:
        for k in range(pos, d.first):
            if records[k + 1].timestamp - records[k].timestamp <= gap:
                traveled += haversine_km(records[k].location, records[k + 1].location)
        if traveled > 0:
            weight = min(params.battery_capacity,
                         traveled / params.electric_range * params.battery_capacity)
            out.append(DemandPoint(d.anchor, weight, d.start, weight / params.charger_power,
                                   records[d.first].vehicle_id))
        # full recharge at every dwell
        traveled = 0.0
        pos = d.last
    return out


def extract_demands(records: Iterable[TravelRecord], params: VehicleParams = VehicleParams()) -> list[DemandPoint]:
    """Charging-demand points for every vehicle, ordered by vehicle then time."""
    out: list[DemandPoint] = []
    for recs in group_by_vehicle(records).values():
        out.extend(_vehicle_demands(recs, params))
    return out


def days_spanned(points: Sequence[DemandPoint]) -> int:
    if not points:
        return 0
    dates = [p.arrival_time.date() for p in points]
    return (max(dates) - min(dates)).days + 1


def hourly_arrival_rates(points: Sequence[DemandPoint], n_days: int | None = None) -> np.ndarray:
    """Mean arrivals per hour of day (24-vector).

    ``n_days`` defaults to the calendar days spanned by ``points``; pass the
    span of the whole data set when ``points`` is a subset.
    """
    rates = np.zeros(24)
    if not points:
        return rates
    for p in points:
        rates[p.arrival_time.hour] += 1
    days = n_days if n_days is not None else days_spanned(points)
    return rates / days


def peak_hour(rates: Sequence[float]) -> int:
    """Index of the largest hourly rate, earliest hour on ties."""
    return int(np.argmax(np.asarray(rates)))


def sample_vehicles(records: Sequence[TravelRecord], fraction: float, seed: int) -> list[TravelRecord]:
    """Keep a uniform random ``fraction`` of vehicles (at least one if any exist)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    ids = sorted({r.vehicle_id for r in records})
    if fraction == 1 or not ids:
        return list(records)
    k = max(1, round(fraction * len(ids)))
    rng = np.random.default_rng(seed)
    keep = {ids[i] for i in rng.choice(len(ids), size=k, replace=False)}
    return [r for r in records if r.vehicle_id in keep]


def format_records_csv(records: Iterable[TravelRecord], header: bool = True) -> str:
    buf = io.StringIO()
    if header:
        buf.write("vehicle_id,timestamp,longitude,latitude\n")
    for r in records:
        buf.write(f"{r.vehicle_id},{r.timestamp.strftime(TIMESTAMP_FORMAT)},{r.longitude:.6f},{r.latitude:.6f}\n")
    return buf.getvalue()


def write_demands_csv(points: Iterable[DemandPoint], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(DEMAND_HEADER)
    for p in points:
        w.writerow([f"{p.location[0]:.6f}", f"{p.location[1]:.6f}", f"{p.weight:.6f}",
                    p.arrival_time.isoformat(timespec="seconds"), f"{p.charge_duration:.6f}",
                    p.source_vehicle])


def read_demands_csv(stream: TextIO) -> list[DemandPoint]:
    out = []
    for row in csv.DictReader(stream):
        out.append(DemandPoint(
            location=(float(row["lon"]), float(row["lat"])),
            weight=float(row["weight_kwh"]),
            arrival_time=datetime.fromisoformat(row["arrival_iso8601"]),
            charge_duration=float(row["charge_hours"]),
            source_vehicle=row["vehicle_id"],
        ))
    return out
