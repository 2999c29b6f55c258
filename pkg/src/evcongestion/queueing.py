"""Closed-form congestion metrics for an M/G/s FCFS charging station.

The station has ``s`` identical chargers and unlimited waiting room. Mean waits
come from the Kimura two-moment interpolation between the M/M/s (Erlang-C) and
M/D/s waits; the state distribution uses the geometric tail approximation.

All rates are per hour and all times are in hours.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "QueueParams",
    "QueueMetrics",
    "UnstableQueueError",
    "p0",
    "w_mms",
    "w_mds",
    "w_mgs",
    "delay_probability",
    "geometric_ratio",
    "state_probabilities",
    "waiting_probability",
    "queue_metrics",
]

# tolerance used before clamping a probability into [0, 1]
_PROB_SLACK = 1e-9


class UnstableQueueError(ValueError):
    """Raised when the offered load reaches or exceeds the charger count."""

    def __init__(self, rho: float, s: int):
        super().__init__(f"unstable queue: rho = {rho:.6g} >= 1 with s = {s}")
        self.rho = rho
        self.s = s


@dataclass(frozen=True)
class QueueParams:
    """Arrival rate ``lam``, service rate ``mu``, service-time std ``sigma``, servers ``s``."""

    lam: float
    mu: float
    sigma: float
    s: int

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"arrival rate must be >= 0, got {self.lam}")
        if not self.mu > 0:
            raise ValueError(f"service rate must be > 0, got {self.mu}")
        if not self.sigma >= 0:
            raise ValueError(f"service std must be >= 0, got {self.sigma}")
        if int(self.s) != self.s or self.s < 1:
            raise ValueError(f"server count must be an integer >= 1, got {self.s}")

    @classmethod
    def from_service(cls, lam: float, mean_service: float, std_service: float, s: int) -> "QueueParams":
        return cls(lam=lam, mu=1.0 / mean_service, sigma=std_service, s=s)

    @property
    def offered_load(self) -> float:
        return self.lam / self.mu

    @property
    def rho(self) -> float:
        return self.lam / (self.s * self.mu)

    @property
    def xi(self) -> float:
        """Coefficient of variation of the service time."""
        return self.sigma * self.mu

    @property
    def stable(self) -> bool:
        return self.rho < 1.0


@dataclass(frozen=True)
class QueueMetrics:
    rho: float
    xi: float
    w_mms: float
    w_mds: float
    w_mgs: float
    p0: float
    c_delay: float
    zeta: float
    p_wait: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_stable(params: QueueParams) -> None:
    if not params.stable:
        raise UnstableQueueError(params.rho, params.s)


def _clamp_prob(value: float, what: str) -> float:
    if not (-_PROB_SLACK <= value <= 1.0 + _PROB_SLACK):
        raise ArithmeticError(f"{what} = {value!r} outside [0, 1]")
    return min(1.0, max(0.0, value))


def _erlang_parts(params: QueueParams) -> tuple[np.ndarray, float]:
    """Return (P(N) for N < s, C) for a stable queue with lam > 0.

    Terms a^z/z! are built by the recursion t_{z+1} = t_z * a/(z+1) in the log
    domain, then rescaled by the largest term, so s in the hundreds is safe.
    """
    s = params.s
    a = params.offered_load
    rho = params.rho
    log_a = math.log(a)
    log_terms = np.empty(s + 1)
    log_terms[0] = 0.0
    for z in range(s):
        log_terms[z + 1] = log_terms[z] + log_a - math.log(z + 1)
    log_tail = log_terms[s] - math.log1p(-rho)
    shift = max(float(log_terms[:s].max()), log_tail)
    head = np.exp(log_terms[:s] - shift)
    tail = math.exp(log_tail - shift)
    total = math.fsum(head) + tail
    return head / total, tail / total


def p0(params: QueueParams) -> float:
    """Probability that the station is empty."""
    _check_stable(params)
    if params.lam == 0:
        return 1.0
    head, _ = _erlang_parts(params)
    return _clamp_prob(float(head[0]), "P0")


def delay_probability(params: QueueParams) -> float:
    """Erlang-C probability that all chargers are busy, C = s mu (1 - rho) W_mms."""
    _check_stable(params)
    if params.lam == 0:
        return 0.0
    _, c = _erlang_parts(params)
    return _clamp_prob(c, "C")


def w_mms(params: QueueParams) -> float:
    """Mean wait in queue for exponential service (Erlang-C)."""
    _check_stable(params)
    if params.lam == 0:
        return 0.0
    return delay_probability(params) / (params.s * params.mu - params.lam)


def _mds_correction(params: QueueParams) -> float:
    # H = (s-1)/(16 s) * (sqrt((10 s + 8)/2) - 2); zero for a single server
    s, lam, mu = params.s, params.lam, params.mu
    if s == 1:
        return 0.0
    h = (s - 1) / (16.0 * s) * (math.sqrt((10.0 * s + 8.0) / 2.0) - 2.0)
    slack = s * mu - lam
    exponent = lam * (s - 1) / (h * slack * (s + 1))
    return h * slack / lam * -math.expm1(-exponent)


def w_mds(params: QueueParams) -> float:
    """Mean wait in queue for deterministic service (Kimura/Cosmetatos form).

    For ``s == 1`` this is exactly half the M/M/1 wait.
    """
    _check_stable(params)
    if params.lam == 0:
        return 0.0
    return 0.5 * (1.0 + _mds_correction(params)) * w_mms(params)


def _interpolate(wm: float, wd: float, xi: float) -> float:
    xi2 = xi * xi
    if xi2 == 1.0:
        return wm
    if xi2 == 0.0:
        return wd
    return (1.0 + xi2) * wm * wd / (2.0 * xi2 * wd + (1.0 - xi2) * wm)


def w_mgs(params: QueueParams) -> float:
    """Two-moment approximation of the M/G/s mean wait in queue."""
    _check_stable(params)
    if params.lam == 0:
        return 0.0
    return _interpolate(w_mms(params), w_mds(params), params.xi)


def geometric_ratio(params: QueueParams) -> float:
    """Decay ratio zeta of the approximate queue-length tail."""
    _check_stable(params)
    if params.lam == 0:
        return 0.0
    wm = w_mms(params)
    ratio = _interpolate(wm, w_mds(params), params.xi) / wm
    rho = params.rho
    return rho * ratio / (1.0 - rho + rho * ratio)


def state_probabilities(params: QueueParams, n_max: int) -> np.ndarray:
    """P(N) for N = 0..n_max under the geometric tail approximation.

    With exponential service (xi = 1) this is the exact M/M/s distribution.
    """
    _check_stable(params)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    out = np.zeros(n_max + 1)
    if params.lam == 0:
        out[0] = 1.0
        return out
    s = params.s
    head, c = _erlang_parts(params)
    zeta = geometric_ratio(params)
    k = min(s, n_max + 1)
    out[:k] = head[:k]
    if n_max >= s:
        out[s:] = c * (1.0 - zeta) * zeta ** np.arange(n_max - s + 1)
    return out


def waiting_probability(params: QueueParams) -> float:
    """P(N > s) = 1 - sum_{N<s} P(N) - C (1 - zeta).

    The sum starts at N = 0 so that the distribution stays normalized; the
    result reduces to C * zeta.
    """
    _check_stable(params)
    if params.lam == 0:
        return 0.0
    head, c = _erlang_parts(params)
    zeta = geometric_ratio(params)
    value = 1.0 - math.fsum(head) - c * (1.0 - zeta)
    # cancellation in 1 - sum(...) loses precision when C is tiny
    direct = c * zeta
    if abs(value - direct) > _PROB_SLACK:
        raise ArithmeticError(f"waiting probability mismatch: {value!r} vs {direct!r}")
    return _clamp_prob(direct, "P(N > s)")


def queue_metrics(params: QueueParams) -> QueueMetrics:
    """Every closed-form metric for one stable parameter set."""
    _check_stable(params)
    return QueueMetrics(
        rho=params.rho,
        xi=params.xi,
        w_mms=w_mms(params),
        w_mds=w_mds(params),
        w_mgs=w_mgs(params),
        p0=p0(params),
        c_delay=delay_probability(params),
        zeta=geometric_ratio(params),
        p_wait=waiting_probability(params),
    )
