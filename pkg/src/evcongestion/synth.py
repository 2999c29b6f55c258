"""Reproducible synthetic taxi trajectories.

Each vehicle works one shift per day. A shift alternates straight-line trips
between destinations drawn from a Gaussian hotspot mixture and stops. A stop
is a long dwell (over the 30-minute threshold) with a probability that peaks
around ``peak_hour``; otherwise it is a short pickup stop. The GPS is off
between shifts, which shows up as a reporting gap rather than a dwell.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timedelta

import numpy as np

from .demand import TravelRecord, format_records_csv, haversine_km

__all__ = ["SynthConfig", "ConfigError", "generate_trajectories", "trajectories_csv", "dwell_probability"]

TRIP_FIX_S = 60
STOP_FIX_S = 300


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_vehicles: int = 100
    n_days: int = 1
    bbox: tuple[float, float, float, float] = (116.20, 39.76, 116.55, 40.02)
    hotspot_count: int = 8
    trips_per_day_mean: float = 12.0
    dwell_prob: float = 0.25
    seed: int = 20160704
    start_date: str = "2016-07-04"
    peak_hour: int = 13
    peak_amplitude: float = 2.0
    peak_width_hours: float = 2.0
    hotspot_spread_deg: float = 0.012
    background_share: float = 0.2
    speed_kmh: tuple[float, float] = (20.0, 40.0)
    short_stop_min: tuple[float, float] = (1.0, 20.0)
    long_dwell_extra_mean_min: float = 30.0
    shift_start_hour: tuple[float, float] = (6.0, 9.0)
    min_trip_km: float = 1.0

    def __post_init__(self):
        lon0, lat0, lon1, lat1 = self.bbox
        if not (lon1 > lon0 and lat1 > lat0):
            raise ConfigError(f"degenerate bounding box {self.bbox}")
        if not (-180 <= lon0 and lon1 <= 180 and -90 <= lat0 and lat1 <= 90):
            raise ConfigError("bounding box outside valid coordinates")
        for name in ("dwell_prob", "background_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.n_vehicles < 0 or self.n_days < 0:
            raise ConfigError("counts must be non-negative")
        if self.hotspot_count < 1:
            raise ConfigError("need at least one hotspot")
        if self.trips_per_day_mean <= 0:
            raise ConfigError("trips_per_day_mean must be positive")
        lo, hi = self.speed_kmh
        if not 0 < lo <= hi <= 60:
            raise ConfigError("speeds must satisfy 0 < low <= high <= 60 km/h")
        if not 0 < self.short_stop_min[0] <= self.short_stop_min[1] < 30:
            raise ConfigError("short stops must stay under the 30 minute dwell threshold")
        if not 0 <= self.peak_hour < 24:
            raise ConfigError("peak_hour must be in [0, 24)")
        diag = haversine_km((lon0, lat0), (lon1, lat1))
        if self.min_trip_km >= diag:
            raise ConfigError("min_trip_km exceeds the bounding box diagonal")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        """Build from loosely typed key/value pairs (config files, CLI)."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        defaults = cls()
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown synth option {key!r}")
            default = getattr(defaults, key)
            if isinstance(default, tuple):
                parts = raw.split(",") if isinstance(raw, str) else list(raw)
                kwargs[key] = tuple(float(x) for x in parts)
            elif isinstance(default, str):
                kwargs[key] = str(raw)
            else:
                kwargs[key] = type(default)(raw)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def dwell_probability(hour: float, config: SynthConfig) -> float:
    """Probability that a stop starting at ``hour`` becomes a long dwell."""
    hours = np.arange(24)
    bump = lambda h: np.exp(-_circ(h, config.peak_hour) ** 2 / (2 * config.peak_width_hours ** 2))  # noqa: E731
    norm = np.mean(1 + config.peak_amplitude * bump(hours))
    return float(min(1.0, config.dwell_prob * (1 + config.peak_amplitude * bump(hour)) / norm))


def _circ(h, center):
    d = np.abs(np.asarray(h, dtype=float) - center) % 24
    return np.minimum(d, 24 - d)


class _Vehicle:
    def __init__(self, vid: str, config: SynthConfig, hotspots, weights, rng: np.random.Generator):
        self.vid = vid
        self.cfg = config
        self.hotspots = hotspots
        self.weights = weights
        self.rng = rng
        self.records: list[TravelRecord] = []

    def _point(self) -> tuple[float, float]:
        lon0, lat0, lon1, lat1 = self.cfg.bbox
        rng = self.rng
        if rng.random() < self.cfg.background_share:
            return (lon0 + rng.random() * (lon1 - lon0), lat0 + rng.random() * (lat1 - lat0))
        k = rng.choice(len(self.weights), p=self.weights)
        lon, lat = self.hotspots[k] + rng.normal(0.0, self.cfg.hotspot_spread_deg, 2)
        return (float(np.clip(lon, lon0, lon1)), float(np.clip(lat, lat0, lat1)))

    def _destination(self, here) -> tuple[float, float]:
        while True:
            dest = self._point()
            if haversine_km(here, dest) >= self.cfg.min_trip_km:
                return dest

    def _fix(self, t: datetime, lon: float, lat: float) -> None:
        lon0, lat0, lon1, lat1 = self.cfg.bbox
        self.records.append(TravelRecord(self.vid, t, round(min(max(lon, lon0), lon1), 6),
                                         round(min(max(lat, lat0), lat1), 6)))

    def _trip(self, t: datetime, here, dest) -> datetime:
        speed = self.rng.uniform(*self.cfg.speed_kmh)
        secs = math.ceil(haversine_km(here, dest) / speed * 3600)
        for k in range(1, (secs - 1) // TRIP_FIX_S + 1):
            f = k * TRIP_FIX_S / secs
            self._fix(t + timedelta(seconds=k * TRIP_FIX_S),
                      here[0] + f * (dest[0] - here[0]), here[1] + f * (dest[1] - here[1]))
        end = t + timedelta(seconds=secs)
        self._fix(end, *dest)
        return end

    def _stop(self, t: datetime, here, minutes: float) -> datetime:
        secs = max(1, int(round(minutes * 60)))
        for k in range(1, (secs - 1) // STOP_FIX_S + 1):
            # jitter well inside the dwell radius
            jitter = np.clip(self.rng.normal(0.0, 3e-5, 2), -1e-4, 1e-4)
            self._fix(t + timedelta(seconds=k * STOP_FIX_S), here[0] + jitter[0], here[1] + jitter[1])
        end = t + timedelta(seconds=secs)
        self._fix(end, *here)
        return end

    def run(self, start: datetime) -> list[TravelRecord]:
        cfg, rng = self.cfg, self.rng
        here = self._point()
        for day in range(cfg.n_days):
            day0 = start + timedelta(days=day)
            t = day0 + timedelta(seconds=int(rng.uniform(*cfg.shift_start_hour) * 3600))
            self._fix(t, *here)
            n_trips = max(1, int(rng.poisson(cfg.trips_per_day_mean)))
            for _ in range(n_trips):
                dest = self._destination(here)
                t = self._trip(t, here, dest)
                here = dest
                hour = t.hour + t.minute / 60.0
                if rng.random() < dwell_probability(hour, cfg):
                    minutes = 31.0 + rng.exponential(cfg.long_dwell_extra_mean_min)
                else:
                    minutes = rng.uniform(*cfg.short_stop_min)
                t = self._stop(t, here, minutes)
            # keep each shift inside its own day so shifts never overlap
            if t >= day0 + timedelta(days=1):
                last = day0 + timedelta(days=1) - timedelta(seconds=1)
                self.records = [r for r in self.records if r.timestamp <= last]
        return self.records


def generate_trajectories(config: SynthConfig) -> list[TravelRecord]:
    """All vehicles' fixes, sorted by vehicle id then time. Deterministic in ``config.seed``."""
    root = np.random.SeedSequence(config.seed)
    scene_seq, *vehicle_seqs = root.spawn(config.n_vehicles + 1)
    scene = np.random.default_rng(scene_seq)
    lon0, lat0, lon1, lat1 = config.bbox
    inner = 0.1
    hotspots = np.column_stack([
        scene.uniform(lon0 + inner * (lon1 - lon0), lon1 - inner * (lon1 - lon0), config.hotspot_count),
        scene.uniform(lat0 + inner * (lat1 - lat0), lat1 - inner * (lat1 - lat0), config.hotspot_count),
    ])
    weights = scene.dirichlet(np.full(config.hotspot_count, 2.0))
    start = datetime.fromisoformat(config.start_date)
    width = len(str(max(config.n_vehicles - 1, 0)))
    out: list[TravelRecord] = []
    for v, seq in enumerate(vehicle_seqs):
        vid = f"V{v:0{width}d}"
        out.extend(_Vehicle(vid, config, hotspots, weights, np.random.default_rng(seq)).run(start))
    return out


def trajectories_csv(config: SynthConfig) -> str:
    return format_records_csv(generate_trajectories(config))
