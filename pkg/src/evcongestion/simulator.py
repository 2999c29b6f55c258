"""Discrete-event simulation of an FCFS multi-server queue.

Two engines share the same random draws:

* ``"fast"``: a compiled pass over customers in arrival order. Under FCFS
  with identical servers the next customer always takes the server that frees
  up first, so tracking per-server release times reproduces the event
  sequence exactly.
* ``"events"``: a textbook future-event list (heap keyed by time, then a
  sequence number) with explicit queue/busy state and invariant checks. It is
  slow and exists to cross-check the fast engine.

Arrivals are Poisson, either at a constant rate or with a piecewise-constant
hourly rate generated by thinning. Times are in hours.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import stats

__all__ = [
    "ServiceSpec",
    "SimConfig",
    "SimResult",
    "WaitingProbability",
    "simulate",
    "simulate_replication",
    "empirical_waiting_probability",
    "draw_inputs",
]

SERVICE_KINDS = ("deterministic", "exponential", "erlang", "lognormal")


@dataclass(frozen=True)
class ServiceSpec:
    """Charge-time distribution with mean ``mean`` hours.

    ``std`` is only read for lognormal (moment matched), ``k`` only for Erlang.
    """

    kind: str
    mean: float
    std: float = 0.0
    k: int = 2

    def __post_init__(self):
        if self.kind not in SERVICE_KINDS:
            raise ValueError(f"unknown service kind {self.kind!r}; expected one of {SERVICE_KINDS}")
        if not self.mean > 0:
            raise ValueError("service mean must be > 0")
        if self.kind == "erlang" and (int(self.k) != self.k or self.k < 1):
            raise ValueError("erlang shape k must be an integer >= 1")
        if self.kind == "lognormal" and not self.std >= 0:
            raise ValueError("lognormal std must be >= 0")

    @property
    def sd(self) -> float:
        if self.kind == "deterministic":
            return 0.0
        if self.kind == "exponential":
            return self.mean
        if self.kind == "erlang":
            return self.mean / math.sqrt(self.k)
        return self.std

    @property
    def cv(self) -> float:
        return self.sd / self.mean

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "deterministic":
            return np.full(n, self.mean)
        if self.kind == "exponential":
            return rng.exponential(self.mean, n)
        if self.kind == "erlang":
            return rng.gamma(self.k, self.mean / self.k, n)
        if self.std == 0:
            return np.full(n, self.mean)
        s2 = math.log1p((self.std / self.mean) ** 2)
        return rng.lognormal(math.log(self.mean) - 0.5 * s2, math.sqrt(s2), n)

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceSpec":
        return cls(kind=d["kind"], mean=float(d["mean"]), std=float(d.get("std", 0.0)), k=int(d.get("k", 2)))


@dataclass
class SimConfig:
    """One simulation experiment.

    ``arrival`` is either a constant rate or a 24-vector of hourly rates.
    ``warmup=None`` discards 10% of arrivals (at least 10^4, at most half).
    """

    arrival: float | Sequence[float]
    service: ServiceSpec
    s: int
    n_arrivals: int = 1_000_000
    warmup: Optional[int] = None
    seed: int = 0
    replications: int = 20
    engine: str = "fast"

    def __post_init__(self):
        if np.ndim(self.arrival) == 0:
            if not float(self.arrival) >= 0:
                raise ValueError("arrival rate must be >= 0")
        else:
            rates = np.asarray(self.arrival, dtype=float)
            if rates.shape != (24,) or (rates < 0).any():
                raise ValueError("hourly arrival rates must be 24 non-negative values")
        if self.s < 1:
            raise ValueError("need at least one server")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.n_arrivals > self.effective_warmup >= 0:
            raise ValueError("need n_arrivals > warmup >= 0")
        if self.engine not in ("fast", "events"):
            raise ValueError(f"unknown engine {self.engine!r}")

    @property
    def effective_warmup(self) -> int:
        if self.warmup is not None:
            return int(self.warmup)
        return min(max(self.n_arrivals // 10, 10_000), self.n_arrivals // 2)

    @property
    def time_varying(self) -> bool:
        return np.ndim(self.arrival) != 0

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.arrival))

    @property
    def nominal_utilization(self) -> float:
        return self.mean_rate * self.service.mean / self.s


@dataclass
class SimResult:
    """Replication means with 95% confidence half-widths (Student t)."""

    mean_wait: float
    mean_wait_hw: float
    p_wait: float
    p_wait_hw: float
    p_queue_at_arrival: float
    p_queue_at_arrival_hw: float
    mean_queue_length: float
    utilization_observed: float
    nominal_utilization: float
    unstable: bool
    n_observed: int
    replications: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WaitingProbability:
    estimate: float
    binomial_hw: float
    replication_hw: float


def _thinned_arrival_times(rates: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    lam_max = float(rates.max())
    out = []
    got = 0
    t0 = 0.0
    # expected acceptance ratio sets the chunk size
    accept = float(rates.mean()) / lam_max
    while got < n:
        m = max(1024, int(1.1 * (n - got) / accept))
        cand = t0 + np.cumsum(rng.exponential(1.0 / lam_max, m))
        keep = rng.random(m) * lam_max < rates[np.floor(cand).astype(np.int64) % 24]
        t0 = float(cand[-1])
        acc = cand[keep]
        out.append(acc[: n - got])
        got += acc.shape[0]
    return np.concatenate(out)[:n]


def draw_inputs(config: SimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Arrival times and service times for one replication."""
    n = config.n_arrivals
    if config.time_varying:
        rates = np.asarray(config.arrival, dtype=float)
        if rates.max() == 0:
            return np.full(n, np.inf), config.service.sample(rng, n)
        arrivals = _thinned_arrival_times(rates, n, rng)
    else:
        lam = float(config.arrival)
        if lam == 0:
            return np.full(n, np.inf), config.service.sample(rng, n)
        arrivals = np.cumsum(rng.exponential(1.0 / lam, n))
    return arrivals, config.service.sample(rng, n)


@numba.njit(cache=True)
def _fcfs_pass(arrivals, service, s):
    n = arrivals.shape[0]
    release = np.zeros(s)
    starts = np.empty(n)
    for i in range(n):
        k = 0
        m = release[0]
        for j in range(1, s):
            if release[j] < m:
                m = release[j]
                k = j
        a = arrivals[i]
        st = a if m < a else m
        starts[i] = st
        release[k] = st + service[i]
    return starts


@numba.njit(cache=True)
def _window_stats(arrivals, service, starts, warmup):
    """Post-warmup statistics over the window [a_warmup, a_last]."""
    n = arrivals.shape[0]
    t_lo = arrivals[warmup]
    t_hi = arrivals[n - 1]
    wait_sum = 0.0
    n_wait = 0
    n_queue = 0
    q_area = 0.0
    busy = 0.0
    ptr = 0
    for i in range(n):
        a = arrivals[i]
        st = starts[i]
        # clip time in queue and in service to the window
        lo = a if a > t_lo else t_lo
        hi = st if st < t_hi else t_hi
        if hi > lo:
            q_area += hi - lo
        end = st + service[i]
        lo = st if st > t_lo else t_lo
        hi = end if end < t_hi else t_hi
        if hi > lo:
            busy += hi - lo
        # starts are non-decreasing under FCFS: customers ptr..i-1 not yet started
        while ptr < i and starts[ptr] <= a:
            ptr += 1
        if i >= warmup:
            w = st - a
            wait_sum += w
            if w > 0.0:
                n_wait += 1
            if i - ptr > 0:
                n_queue += 1
    return wait_sum, n_wait, n_queue, q_area, busy, t_hi - t_lo


def _event_pass(arrivals: np.ndarray, service: np.ndarray, s: int) -> np.ndarray:
    """Future-event-list simulation; returns service start times."""
    n = arrivals.shape[0]
    starts = np.empty(n)
    seq = 0
    events: list[tuple[float, int, int, int]] = []  # (time, seq, kind, customer)
    ARRIVE, DEPART = 0, 1
    if n:
        heapq.heappush(events, (float(arrivals[0]), seq, ARRIVE, 0))
        seq += 1
    queue: deque[int] = deque()
    busy = 0
    while events:
        t, _, kind, c = heapq.heappop(events)
        if kind == ARRIVE:
            if c + 1 < n:
                heapq.heappush(events, (float(arrivals[c + 1]), seq, ARRIVE, c + 1))
                seq += 1
            if busy < s:
                busy += 1
                starts[c] = t
                heapq.heappush(events, (t + float(service[c]), seq, DEPART, c))
                seq += 1
            else:
                queue.append(c)
        else:
            if queue:
                nxt = queue.popleft()
                starts[nxt] = t
                heapq.heappush(events, (t + float(service[nxt]), seq, DEPART, nxt))
                seq += 1
            else:
                busy -= 1
        if busy < 0 or busy > s:
            raise AssertionError(f"busy server count {busy} outside [0, {s}] at t={t}")
        if queue and busy < s:
            raise AssertionError(f"idle server while {len(queue)} waiting at t={t}")
    return starts


def simulate_replication(config: SimConfig, rng: np.random.Generator) -> dict:
    """Run one replication and return its raw statistics."""
    arrivals, service = draw_inputs(config, rng)
    warmup = config.effective_warmup
    n_obs = config.n_arrivals - warmup
    if not np.isfinite(arrivals[0]):
        return dict(mean_wait=0.0, p_wait=0.0, p_queue_at_arrival=0.0, mean_queue_length=0.0,
                    utilization=0.0, n_observed=n_obs, n_waited=0)
    if config.engine == "fast":
        starts = _fcfs_pass(arrivals, service, config.s)
    else:
        starts = _event_pass(arrivals, service, config.s)
    wait_sum, n_wait, n_queue, q_area, busy, span = _window_stats(arrivals, service, starts, warmup)
    return dict(
        mean_wait=wait_sum / n_obs,
        p_wait=n_wait / n_obs,
        p_queue_at_arrival=n_queue / n_obs,
        mean_queue_length=q_area / span if span > 0 else 0.0,
        utilization=min(1.0, busy / (config.s * span)) if span > 0 else 0.0,
        n_observed=n_obs,
        n_waited=int(n_wait),
    )


def _mean_hw(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    r = values.shape[0]
    if r < 2:
        return mean, 0.0
    t = stats.t.ppf(0.975, r - 1)
    return mean, float(t * values.std(ddof=1) / math.sqrt(r))


def simulate(config: SimConfig) -> SimResult:
    """Independent replications; replication ``r`` uses the r-th spawned seed stream."""
    children = np.random.SeedSequence(config.seed).spawn(config.replications)
    reps = [simulate_replication(config, np.random.default_rng(child)) for child in children]
    col = lambda key: np.array([r[key] for r in reps], dtype=float)  # noqa: E731
    mw, mw_hw = _mean_hw(col("mean_wait"))
    pw, pw_hw = _mean_hw(col("p_wait"))
    pq, pq_hw = _mean_hw(col("p_queue_at_arrival"))
    return SimResult(
        mean_wait=mw,
        mean_wait_hw=mw_hw,
        p_wait=pw,
        p_wait_hw=pw_hw,
        p_queue_at_arrival=pq,
        p_queue_at_arrival_hw=pq_hw,
        mean_queue_length=float(col("mean_queue_length").mean()),
        utilization_observed=float(col("utilization").mean()),
        nominal_utilization=config.nominal_utilization,
        unstable=config.nominal_utilization >= 1.0,
        n_observed=int(sum(r["n_observed"] for r in reps)),
        replications=reps,
    )


def empirical_waiting_probability(result: SimResult) -> WaitingProbability:
    """Pooled fraction of observed arrivals that waited, with 95% half-widths.

    ``binomial_hw`` treats arrivals as independent trials and is optimistic
    for a correlated queue; ``replication_hw`` comes from replication spread.
    """
    n = result.n_observed
    if n == 0:
        return WaitingProbability(0.0, 0.0, 0.0)
    waited = sum(r["n_waited"] for r in result.replications)
    p = waited / n
    z = stats.norm.ppf(0.975)
    return WaitingProbability(p, float(z * math.sqrt(p * (1 - p) / n)), result.p_wait_hw)
