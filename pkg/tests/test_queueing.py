import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcongestion.queueing import (QueueParams, UnstableQueueError, delay_probability, geometric_ratio, p0,
                                   queue_metrics, state_probabilities, w_mds, w_mgs, w_mms, waiting_probability)

from conftest import mms_exact


def Q(lam, mu=1.0, s=1, xi=1.0):
    return QueueParams(lam, mu, xi / mu, s)


@pytest.mark.parametrize("lam,s", [(0.5, 1), (1.0, 2), (3.0, 4), (7.3, 10), (0.2, 3)])
def test_erlang_c_against_exact_rationals(lam, s):
    ep0, ec, ew = mms_exact(lam, 1, s)
    q = Q(lam, s=s)
    assert p0(q) == pytest.approx(float(ep0), rel=1e-13)
    assert delay_probability(q) == pytest.approx(float(ec), rel=1e-13)
    assert w_mms(q) == pytest.approx(float(ew), rel=1e-13)


def test_p0_examples():
    assert p0(Q(0.5)) == pytest.approx(0.5, abs=1e-15)
    assert p0(Q(1.0, s=2)) == pytest.approx(1 / 3, abs=1e-15)
    assert p0(Q(0.0, s=4)) == 1.0


def test_mm1_wait():
    # Wq = lam / (mu (mu - lam))
    assert w_mms(Q(0.5)) == pytest.approx(0.5 / (1 * 0.5), abs=1e-15)
    assert w_mms(Q(1e-9, s=3)) < 1e-20


def test_md1_is_half_mm1():
    for lam in (0.1, 0.5, 0.95):
        assert w_mds(Q(lam)) == pytest.approx(w_mms(Q(lam)) / 2, rel=1e-15)


def test_mds_between_half_and_full_mms():
    q = Q(1.0, s=2)
    assert w_mms(q) / 2 < w_mds(q) < w_mms(q)


def test_mds_correction_value():
    # hand evaluation for lam=1, mu=1, s=2
    h = 1 / 32 * (math.sqrt(14) - 2)
    expected = 0.5 * (1 + h * 1 * (1 - math.exp(-1 / (h * 1 * 3)))) * (1 / 3)
    assert w_mds(Q(1.0, s=2)) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("s", [1, 2, 5, 17])
def test_reduction_identities(s):
    lam = 0.8 * s
    assert w_mgs(Q(lam, s=s, xi=1.0)) == pytest.approx(w_mms(Q(lam, s=s)), abs=1e-12)
    assert w_mgs(Q(lam, s=s, xi=0.0)) == pytest.approx(w_mds(Q(lam, s=s)), abs=1e-12)


def test_interpolation_is_continuous_at_exponential():
    q = Q(3.0, s=4)
    near = w_mgs(QueueParams(3.0, 1.0, 1 + 1e-9, 4))
    assert near == pytest.approx(w_mms(q), rel=1e-7)


def test_delay_probability_examples():
    assert delay_probability(Q(0.5)) == pytest.approx(0.5, abs=1e-15)
    assert delay_probability(Q(1.0, s=2)) == pytest.approx(1 / 3, abs=1e-15)
    assert delay_probability(Q(0.0, s=2)) == 0.0
    q = Q(2.2, s=3)
    assert delay_probability(q) == pytest.approx(q.s * q.mu * (1 - q.rho) * w_mms(q), rel=1e-14)


def test_state_probabilities_mm1_geometric():
    probs = state_probabilities(Q(0.5), 30)
    np.testing.assert_allclose(probs, 0.5 * 0.5 ** np.arange(31), rtol=1e-14)


def test_zeta_equals_rho_for_exponential():
    q = Q(3.3, s=5)
    assert geometric_ratio(q) == pytest.approx(q.rho, rel=1e-15)


def test_state_probabilities_partial_range():
    q = Q(4.0, s=6)
    full = state_probabilities(q, 20)
    assert state_probabilities(q, 3) == pytest.approx(full[:4])


def test_waiting_probability_examples():
    assert waiting_probability(Q(0.5)) == pytest.approx(0.25, abs=1e-15)
    assert waiting_probability(Q(1.0, s=2)) == pytest.approx(1 / 6, abs=1e-15)
    assert waiting_probability(Q(0.0, s=2)) == 0.0


def test_waiting_probability_matches_state_tail():
    q = QueueParams(4.0, 1.0, 0.7, 6)
    probs = state_probabilities(q, 6)
    assert waiting_probability(q) == pytest.approx(1 - probs.sum(), abs=1e-12)


@pytest.mark.parametrize("fn", [p0, w_mms, w_mds, w_mgs, delay_probability, waiting_probability, geometric_ratio])
def test_unstable_raises(fn):
    with pytest.raises(UnstableQueueError):
        fn(Q(2.0, s=2))


def test_invalid_params():
    with pytest.raises(ValueError):
        QueueParams(-1, 1, 0, 1)
    with pytest.raises(ValueError):
        QueueParams(1, 0, 0, 1)
    with pytest.raises(ValueError):
        QueueParams(1, 1, 0, 0)


def test_large_server_counts_do_not_overflow():
    q = QueueParams(450.0, 1.0, 0.5, 500)
    m = queue_metrics(q)
    assert all(math.isfinite(v) for v in m.to_dict().values())
    assert 0 <= m.p_wait <= m.c_delay <= 1
    q = QueueParams(1900.0, 1.0, 0.5, 2000)
    assert math.isfinite(w_mgs(q))


stable = st.builds(
    lambda s, rho, mu, xi: QueueParams(rho * s * mu, mu, xi / mu, s),
    st.integers(1, 60), st.floats(0.01, 0.98), st.floats(0.1, 10.0), st.floats(0.0, 3.0),
)


@settings(max_examples=300, deadline=None)
@given(stable)
def test_metric_ranges(q):
    m = queue_metrics(q)
    assert 0 <= m.zeta < 1
    assert 0 <= m.p_wait <= 1
    assert 0 < m.w_mds < m.w_mms or q.s == 1 and m.w_mds == pytest.approx(m.w_mms / 2)
    if q.xi <= 1:
        assert m.w_mds * (1 - 1e-12) <= m.w_mgs <= m.w_mms * (1 + 1e-12)
    else:
        assert m.w_mgs >= m.w_mms * (1 - 1e-12)


@settings(max_examples=300, deadline=None)
@given(stable)
def test_littles_law_on_geometric_tail(q):
    c, zeta = delay_probability(q), geometric_ratio(q)
    # mean queue length from the tail, summed numerically and in closed form
    closed = c * zeta / (1 - zeta)
    n = q.s + 4000
    probs = state_probabilities(q, n)
    summed = float(np.dot(np.arange(n - q.s + 1), probs[q.s:]))
    assert closed == pytest.approx(q.lam * w_mgs(q), rel=1e-9, abs=1e-300)
    if zeta < 0.99:
        assert summed == pytest.approx(closed, rel=1e-9, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.2, 40.0), st.floats(0.2, 5.0), st.floats(0.0, 2.5))
def test_monotone_in_servers(lam, mu, xi):
    sigma = xi / mu
    first = math.ceil(lam / mu) + 1
    waits = [w_mgs(QueueParams(lam, mu, sigma, s)) for s in range(first, first + 21)]
    probs = [waiting_probability(QueueParams(lam, mu, sigma, s)) for s in range(first, first + 21)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(waits, waits[1:]))
    assert all(b <= a + 1e-15 for a, b in zip(probs, probs[1:]))
