"""Station-level congestion reporting on top of a siting plan.

Every open site becomes a station serving the demand points assigned to it.
Chargers are split across stations so that peak-hour utilizations are as
equal as integrality allows, then each station is evaluated as an M/G/s
queue at its own peak hour.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Optional, Sequence, TextIO

import numpy as np

from .demand import DemandPoint, days_spanned, haversine_km, hourly_arrival_rates, peak_hour
from .queueing import QueueMetrics, QueueParams, UnstableQueueError, queue_metrics

__all__ = [
    "DEFAULT_SPEED_KMH",
    "InfeasibleAllocationError",
    "StationProfile",
    "StationReport",
    "SweepRow",
    "TradeoffRow",
    "Histogram",
    "build_station_profiles",
    "minimum_chargers",
    "allocate_chargers",
    "station_metrics",
    "analyze_stations",
    "sweep_chargers",
    "station_histogram",
    "tradeoff_report",
    "preferred_p",
    "weighted_drive_km",
    "write_rows",
]

DEFAULT_SPEED_KMH = 25.0


class InfeasibleAllocationError(ValueError):
    def __init__(self, total: int, minimum: int):
        super().__init__(f"{total} chargers cannot stabilize every station; at least {minimum} are needed")
        self.total = total
        self.minimum = minimum


@dataclass
class StationProfile:
    site_index: int
    site: tuple[float, float]
    demand_ids: list[int]
    lambda_hourly: np.ndarray
    mean_charge_hours: float
    sigma_charge_hours: float
    mean_drive_km: float
    total_weight: float

    @property
    def peak_hour(self) -> int:
        return peak_hour(self.lambda_hourly)

    @property
    def peak_lambda(self) -> float:
        return float(self.lambda_hourly.max())

    def offered_load(self, hour: Optional[int] = None) -> float:
        lam = self.peak_lambda if hour is None else float(self.lambda_hourly[hour])
        return lam * self.mean_charge_hours


@dataclass
class StationReport:
    site_index: int
    lon: float
    lat: float
    n_demands: int
    hour: int
    lam: float
    mean_charge_hours: float
    sigma_charge_hours: float
    s_chargers: int
    overloaded: bool
    mean_drive_km: float
    mean_drive_min: float
    metrics: Optional[QueueMetrics] = None

    @property
    def wait_min(self) -> float:
        return self.metrics.w_mgs * 60.0 if self.metrics else math.inf

    def row(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "metrics"}
        out["status"] = "overloaded" if self.overloaded else "ok"
        m = self.metrics
        for name in ("rho", "xi", "w_mms", "w_mds", "w_mgs", "p0", "c_delay", "zeta", "p_wait"):
            out[name] = getattr(m, name) if m else ""
        out["wait_min"] = m.w_mgs * 60.0 if m else ""
        return out


@dataclass
class SweepRow:
    total_chargers: int
    status: str
    min_chargers: int
    weighted_wait_min: float | str = ""
    weighted_p_wait: float | str = ""
    mean_wait_min: float | str = ""
    mean_p_wait: float | str = ""
    rho_min: float | str = ""
    rho_max: float | str = ""


@dataclass
class TradeoffRow:
    p: int
    total_chargers: int
    status: str
    weighted_wait_min: float | str
    weighted_drive_min: float
    total_cost_min: float | str


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def rows(self) -> list[dict]:
        return [{"bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}
                for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def build_station_profiles(demands: Sequence[DemandPoint], sites: Mapping[int, tuple[float, float]],
                           assignment: Sequence[int], n_days: Optional[int] = None) -> list[StationProfile]:
    """Group demand points by their assigned site.

    Hourly rates divide by the day span of the full demand set, so quiet
    stations are not inflated by a shorter span of their own.
    """
    if len(assignment) != len(demands):
        raise ValueError("assignment length differs from the number of demand points")
    days = n_days if n_days is not None else max(1, days_spanned(demands))
    members: dict[int, list[int]] = {j: [] for j in sites}
    for i, j in enumerate(assignment):
        members[int(j)].append(i)
    out = []
    for j in sorted(sites):
        ids = members[j]
        pts = [demands[i] for i in ids]
        durations = np.array([p.charge_duration for p in pts])
        weights = np.array([p.weight for p in pts])
        dist = np.array([haversine_km(p.location, sites[j]) for p in pts])
        out.append(StationProfile(
            site_index=j,
            site=sites[j],
            demand_ids=ids,
            lambda_hourly=hourly_arrival_rates(pts, days) if pts else np.zeros(24),
            mean_charge_hours=float(durations.mean()) if pts else 0.0,
            sigma_charge_hours=float(durations.std(ddof=1)) if len(pts) > 1 else 0.0,
            mean_drive_km=float(weights @ dist / weights.sum()) if pts else 0.0,
            total_weight=float(weights.sum()) if pts else 0.0,
        ))
    return out


# -- charger allocation --------------------------------------------------------

def _floor_counts(loads: Sequence[float]) -> list[int]:
    return [max(1, math.floor(a) + 1) for a in loads]


def minimum_chargers(loads: Sequence[float]) -> int:
    """Fewest chargers that keep every station strictly below full utilization."""
    return sum(_floor_counts(loads))


def _min_max(loads, floors, total) -> list[int]:
    s = list(floors)
    extra = total - sum(s)
    for _ in range(extra):
        j = max(range(len(s)), key=lambda k: (loads[k] / s[k], -k))
        s[j] += 1
    return s


def _spread(loads, s) -> float:
    r = [a / c for a, c in zip(loads, s)]
    return max(r) - min(r)


def _smallest_at_most(a: float, tau: float, floor_: int) -> int:
    # smallest s >= floor_ with a/s <= tau
    s = max(floor_, math.ceil(a / tau) - 1)
    while a / s > tau:
        s += 1
    return s


def _largest_at_least(a: float, tau: float) -> int:
    # largest s >= 1 with a/s >= tau, 0 if none
    s = math.floor(a / tau) + 1
    while s >= 1 and a / s < tau:
        s -= 1
    return s


def allocate_chargers(loads: Sequence[float], total: int) -> list[int]:
    """Split ``total`` chargers so peak utilizations a_j / s_j are as even as possible.

    Each station gets at least max(1, floor(a_j) + 1) chargers so that it is
    stable. Among all such integer splits the one with the smallest spread
    max rho - min rho is returned; ties prefer the smallest minimum
    utilization band found first and then the lowest station index.
    """
    loads = [float(a) for a in loads]
    if any(a < 0 for a in loads):
        raise ValueError("offered loads must be non-negative")
    floors = _floor_counts(loads)
    if total < sum(floors):
        raise InfeasibleAllocationError(total, sum(floors))
    n = len(loads)
    if n == 0:
        return []
    greedy = _min_max(loads, floors, total)
    if min(loads) == 0:
        # idle stations pin the minimum at zero; only the maximum can move
        return greedy
    best_spread = _spread(loads, greedy)
    if best_spread == 0:
        return greedy
    # every split's charger-weighted mean utilization is sum(a)/total, so the
    # optimal band lies within best_spread of it
    mean = sum(loads) / total
    lo_tau, hi_tau = mean - best_spread, mean + best_spread
    room = total - sum(floors)
    cands = set()
    for a, f in zip(loads, floors):
        s_hi = f + room if lo_tau <= 0 else min(f + room, math.floor(a / lo_tau) + 1)
        s_lo = max(f, math.floor(a / hi_tau))
        cands.update(a / s for s in range(s_lo, s_hi + 1) if lo_tau <= a / s <= hi_tau)
    cands.update(a / c for a, c in zip(loads, greedy))
    taus = sorted(cands)

    def window(t_low: float, t_high: float):
        lo = [_smallest_at_most(a, t_high, f) for a, f in zip(loads, floors)]
        hi = [_largest_at_least(a, t_low) for a in loads]
        if any(l > h for l, h in zip(lo, hi)) or sum(lo) > total or sum(hi) < total:
            return None
        return lo, hi

    best = None
    k = 0
    for i, t_low in enumerate(taus):
        if sum(_largest_at_least(a, t_low) for a in loads) < total:
            break
        k = max(k, i)
        while k < len(taus) and window(t_low, taus[k]) is None:
            k += 1
        if k == len(taus):
            break
        spread = taus[k] - t_low
        if best is None or spread < best[0]:
            best = (spread, t_low, taus[k])
    if best is None or best[0] >= best_spread:
        return greedy
    lo, hi = window(best[1], best[2])
    s = list(lo)
    for _ in range(total - sum(s)):
        j = max((k for k in range(n) if s[k] < hi[k]), key=lambda k: (loads[k] / (s[k] + 1), -k))
        s[j] += 1
    return s


# -- metrics -------------------------------------------------------------------

def station_metrics(profile: StationProfile, s: int, speed_kmh: float = DEFAULT_SPEED_KMH,
                    hour: Optional[int] = None) -> StationReport:
    """Queue metrics for one station at ``hour`` (default: its peak hour)."""
    h = profile.peak_hour if hour is None else int(hour)
    lam = float(profile.lambda_hourly[h])
    mean_charge = profile.mean_charge_hours
    report = StationReport(
        site_index=profile.site_index, lon=profile.site[0], lat=profile.site[1],
        n_demands=len(profile.demand_ids), hour=h, lam=lam, mean_charge_hours=mean_charge,
        sigma_charge_hours=profile.sigma_charge_hours, s_chargers=int(s), overloaded=False,
        mean_drive_km=profile.mean_drive_km, mean_drive_min=profile.mean_drive_km / speed_kmh * 60.0,
    )
    if lam == 0 or mean_charge == 0:
        report.metrics = queue_metrics(QueueParams(0.0, 1.0, 0.0, int(s)))
        return report
    try:
        report.metrics = queue_metrics(QueueParams.from_service(lam, mean_charge, profile.sigma_charge_hours, int(s)))
    except UnstableQueueError:
        report.overloaded = True
    return report


def analyze_stations(profiles: Sequence[StationProfile], total_chargers: int,
                     speed_kmh: float = DEFAULT_SPEED_KMH) -> list[StationReport]:
    counts = allocate_chargers([p.offered_load() for p in profiles], total_chargers)
    return [station_metrics(p, s, speed_kmh) for p, s in zip(profiles, counts)]


def _weighted(reports: Sequence[StationReport]) -> tuple[float, float]:
    # arrival-weighted: the wait an average peak-hour arrival experiences
    lam = np.array([r.lam for r in reports])
    waits = np.array([r.metrics.w_mgs for r in reports])
    probs = np.array([r.metrics.p_wait for r in reports])
    if lam.sum() == 0:
        return 0.0, 0.0
    return float(lam @ waits / lam.sum()), float(lam @ probs / lam.sum())


def sweep_chargers(profiles: Sequence[StationProfile], totals: Iterable[int],
                   speed_kmh: float = DEFAULT_SPEED_KMH) -> list[SweepRow]:
    """Aggregate waits and waiting probabilities for each total charger count."""
    loads = [p.offered_load() for p in profiles]
    need = minimum_chargers(loads)
    rows = []
    for total in sorted(set(int(t) for t in totals)):
        if total < need:
            rows.append(SweepRow(total, "infeasible", need))
            continue
        reports = analyze_stations(profiles, total, speed_kmh)
        w, pw = _weighted(reports)
        rhos = [r.metrics.rho for r in reports]
        rows.append(SweepRow(
            total, "ok", need,
            weighted_wait_min=w * 60.0,
            weighted_p_wait=pw,
            mean_wait_min=float(np.mean([r.metrics.w_mgs for r in reports])) * 60.0,
            mean_p_wait=float(np.mean([r.metrics.p_wait for r in reports])),
            rho_min=min(rhos),
            rho_max=max(rhos),
        ))
    return rows


def station_histogram(values: Sequence[float], bins: int | Sequence[float] = 10,
                      value_range: Optional[tuple[float, float]] = None) -> Histogram:
    """Number of stations per metric bin (pass shared ``bins`` edges to compare runs)."""
    values = np.asarray(values, dtype=float)
    if not np.isfinite(values).all():
        raise ValueError("histogram values must be finite; drop overloaded stations first")
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return Histogram(edges, counts)


def weighted_drive_km(profiles: Sequence[StationProfile]) -> float:
    """Energy-weighted mean distance from demand to assigned station."""
    w = np.array([p.total_weight for p in profiles])
    d = np.array([p.mean_drive_km for p in profiles])
    return float(w @ d / w.sum()) if w.sum() > 0 else 0.0


def tradeoff_report(scenarios: Mapping[int, Sequence[StationProfile]], totals: Iterable[int],
                    speed_kmh: float = DEFAULT_SPEED_KMH, wait_weight: float = 1.0,
                    drive_weight: float = 1.0) -> list[TradeoffRow]:
    """Wait versus drive time for several station counts ``p`` at each charger total.

    Total cost is ``wait_weight * wait + drive_weight * drive`` in minutes;
    infeasible combinations carry status ``infeasible`` and no cost.
    """
    totals = sorted(set(int(t) for t in totals))
    rows = []
    for p in sorted(scenarios):
        profiles = scenarios[p]
        drive_min = weighted_drive_km(profiles) / speed_kmh * 60.0
        for sweep in sweep_chargers(profiles, totals, speed_kmh):
            if sweep.status != "ok":
                rows.append(TradeoffRow(p, sweep.total_chargers, sweep.status, "", drive_min, ""))
                continue
            cost = wait_weight * sweep.weighted_wait_min + drive_weight * drive_min
            rows.append(TradeoffRow(p, sweep.total_chargers, "ok", sweep.weighted_wait_min, drive_min, cost))
    rows.sort(key=lambda r: (r.total_chargers, r.p))
    return rows


def preferred_p(rows: Sequence[TradeoffRow]) -> dict[int, Optional[int]]:
    """For each charger total, the feasible ``p`` with the lowest total cost (smaller p on ties)."""
    out: dict[int, Optional[int]] = {}
    for r in rows:
        out.setdefault(r.total_chargers, None)
        if r.status != "ok":
            continue
        cur = out[r.total_chargers]
        if cur is None:
            out[r.total_chargers] = r.p
            continue
        best = next(x for x in rows if x.total_chargers == r.total_chargers and x.p == cur)
        if r.total_cost_min < best.total_cost_min:
            out[r.total_chargers] = r.p
    return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    return str(value)


def write_rows(rows: Sequence, out: TextIO) -> None:
    """CSV of dataclass instances or dicts with stable column order."""
    if not rows:
        return
    first = rows[0]
    if isinstance(first, dict):
        header = list(first)
        dicts = rows
    else:
        header = [f.name for f in fields(first)]
        dicts = [asdict(r) for r in rows]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for d in dicts:
        w.writerow([_fmt(d[h]) for h in header])
