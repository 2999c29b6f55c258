import io
import math
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcongestion.demand import (DemandPoint, TravelRecord, VehicleParams, detect_dwells, extract_demands,
                                 group_by_vehicle, haversine_km, haversine_matrix, hourly_arrival_rates,
                                 parse_records, peak_hour, read_demands_csv, sample_vehicles, travel_legs,
                                 write_demands_csv)

FIXTURES = Path(__file__).parent / "fixtures"
T0 = datetime(2016, 7, 4, 8, 0, 0)
STEP_KM = 6371.0 * math.radians(0.1)  # 0.1 degree along a meridian


def fixes(vid, points):
    """points: (minutes after T0, lon, lat)."""
    return [TravelRecord(vid, T0 + timedelta(minutes=m), lon, lat) for m, lon, lat in points]


def test_parse_table_row():
    res = parse_records(["26491,20160704141051,116.426285,39.921867"])
    assert res.errors == []
    assert res.records == [TravelRecord("26491", datetime(2016, 7, 4, 14, 10, 51), 116.426285, 39.921867)]


def test_parse_empty():
    res = parse_records([])
    assert res.records == [] and res.errors == []


def test_parse_errors_are_row_level():
    rows = [
        "vehicle_id,timestamp,longitude,latitude",
        "1,20160704141051,116.4,95.0",
        "1,2016070414105,116.4,39.9",
        "1,20161304141051,116.4,39.9",
        "1,20160704141051,190.0,39.9",
        "1,20160704141051,abc,39.9",
        "1,20160704141051,116.4",
        "2,20160704141051,116.4,39.9",
        "1,20160704140000,116.4,39.9",
    ]
    res = parse_records(rows)
    assert [(e.line, e.message) for e in res.errors] == [
        (2, "latitude out of range"),
        (3, "malformed timestamp '2016070414105'"),
        (4, "malformed timestamp '20161304141051'"),
        (5, "longitude out of range"),
        (6, "non-numeric coordinate"),
        (7, "expected 4 fields, got 3"),
    ]
    assert [(r.vehicle_id, r.timestamp.minute) for r in res.records] == [("1", 0), ("2", 10)]


def test_haversine_known_distance():
    # spherical law of cosines as an independent route
    lat = math.radians(39.0)
    d = 6371.0 * math.acos(math.sin(lat) ** 2 + math.cos(lat) ** 2 * math.cos(math.radians(1.0)))
    assert d == pytest.approx(86.3, abs=0.5)
    assert haversine_km((116.0, 39.0), (117.0, 39.0)) == pytest.approx(d, rel=1e-9)
    assert haversine_km((116.0, 39.0), (116.0, 39.0)) == 0.0


coords = st.tuples(st.floats(-180, 180), st.floats(-90, 90))


@settings(max_examples=200)
@given(coords, coords)
def test_haversine_symmetric_nonnegative(a, b):
    d = haversine_km(a, b)
    assert d >= 0
    assert d == pytest.approx(haversine_km(b, a), abs=1e-9)
    assert d <= math.pi * 6371.0 + 1e-6


def test_haversine_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    a = np.column_stack([rng.uniform(116, 117, 7), rng.uniform(39, 40, 7)])
    b = np.column_stack([rng.uniform(116, 117, 5), rng.uniform(39, 40, 5)])
    m = haversine_matrix(a, b)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(haversine_km(a[i], b[j]), rel=1e-12)


def test_single_long_dwell():
    recs = fixes("a", [(5 * k, 116.4, 39.9) for k in range(10)])  # 45 minutes
    dwells = detect_dwells(recs)
    assert len(dwells) == 1
    assert dwells[0].minutes == 45


def test_short_stop_is_not_a_dwell():
    recs = fixes("a", [(5 * k, 116.4, 39.9) for k in range(5)])  # 20 minutes
    assert detect_dwells(recs) == []
    assert detect_dwells(recs[:1]) == []


def test_two_stops_separated_by_driving():
    pts = [(0, 116.40, 39.70), (10, 116.40, 39.80)]
    pts += [(10 + 10 * k, 116.40, 39.80) for k in range(1, 5)]          # 40 min at 39.80
    pts += [(60, 116.40, 39.85), (70, 116.40, 39.90)]
    pts += [(70 + 7 * k, 116.4003, 39.90) for k in range(1, 6)]        # 35 min, 25 m jitter
    pts += [(115, 116.40, 39.95)]
    dwells = detect_dwells(fixes("a", pts))
    assert [(d.anchor, d.minutes) for d in dwells] == [((116.40, 39.80), 40), ((116.40, 39.90), 35)]


def test_gap_splits_dwell():
    recs = fixes("a", [(0, 116.4, 39.9), (20, 116.4, 39.9), (100, 116.4, 39.9), (120, 116.4, 39.9)])
    assert detect_dwells(recs) == []
    assert len(detect_dwells(recs, VehicleParams(max_gap=120))) == 1


def test_weight_from_distance():
    # 25 km = 2.25 steps of 0.1 degree is awkward, so drive along the meridian by 25 km directly
    dlat = math.degrees(25.0 / 6371.0)
    pts = [(0, 116.4, 39.5), (30, 116.4, 39.5 + dlat)] + [(30 + 10 * k, 116.4, 39.5 + dlat) for k in range(1, 5)]
    (dp,) = extract_demands(fixes("a", pts))
    assert dp.weight == pytest.approx(5.0, rel=1e-9)
    assert dp.charge_duration == pytest.approx(0.5, rel=1e-9)


def test_weight_is_capped():
    pts = [(0, 116.4, 39.0), (60, 116.4, 39.0 + math.degrees(80 / 6371.0))]
    pts += [(60 + 10 * k, pts[-1][1], pts[-1][2]) for k in range(1, 4)]
    (dp,) = extract_demands(fixes("a", pts))
    assert dp.weight == 10.0
    assert dp.charge_duration == 1.0


def test_never_moving_vehicle_has_no_demand():
    recs = fixes("a", [(10 * k, 116.4, 39.9) for k in range(12)])
    assert len(detect_dwells(recs)) == 1
    assert extract_demands(recs) == []


def test_three_vehicle_fixture_is_byte_identical():
    with (FIXTURES / "three_vehicles.csv").open(newline="") as fh:
        parsed = parse_records(fh)
    assert parsed.errors == []
    points = extract_demands(parsed.records)
    buf = io.StringIO()
    write_demands_csv(points, buf)
    assert buf.getvalue() == (FIXTURES / "three_vehicles_demands.csv").read_text()
    # independent arithmetic for the uncapped weights
    assert points[0].weight == pytest.approx(2 * STEP_KM / 50 * 10, rel=1e-12)
    assert points[2].weight == pytest.approx(STEP_KM / 50 * 10, rel=1e-12)


def test_demand_csv_round_trip():
    with (FIXTURES / "three_vehicles.csv").open(newline="") as fh:
        points = extract_demands(parse_records(fh).records)
    buf = io.StringIO()
    write_demands_csv(points, buf)
    back = read_demands_csv(io.StringIO(buf.getvalue()))
    assert [p.arrival_time for p in back] == [p.arrival_time for p in points]
    assert [p.weight for p in back] == pytest.approx([p.weight for p in points], abs=1e-6)


def _random_trace(seed):
    rng = np.random.default_rng(seed)
    t, lon, lat = 0.0, 116.4, 39.9
    pts = []
    for _ in range(rng.integers(3, 12)):
        for _ in range(rng.integers(1, 8)):
            t += 1
            lon += rng.normal(0, 0.005)
            lat += rng.normal(0, 0.005)
            pts.append((t, lon, lat))
        for _ in range(rng.integers(0, 9)):
            t += 5
            pts.append((t, lon + rng.normal(0, 1e-5), lat))
        if rng.random() < 0.2:
            t += 90
    return fixes("v", pts)


@pytest.mark.parametrize("seed", range(25))
def test_path_length_conservation(seed):
    recs = _random_trace(seed)
    total = sum(haversine_km(a.location, b.location) for a, b in zip(recs, recs[1:]))
    legs = travel_legs(recs)
    assert sum(l.km for l in legs) == pytest.approx(total, abs=1e-9)
    assert [l.first for l in legs[1:]] == [l.last for l in legs[:-1]]


@pytest.mark.parametrize("seed", range(25))
def test_dwells_disjoint_and_weights_bounded(seed):
    recs = _random_trace(seed)
    dwells = detect_dwells(recs)
    assert all(a.end < b.start for a, b in zip(dwells, dwells[1:]))
    params = VehicleParams()
    points = extract_demands(recs, params)
    assert all(0 < p.weight <= params.battery_capacity for p in points)
    assert all(p.charge_duration == pytest.approx(p.weight / params.charger_power) for p in points)
    assert extract_demands(recs, params) == points


def test_hourly_rates():
    pts = [DemandPoint((0, 0), 1.0, datetime(2016, 7, 4 + d, 9, k), 0.1, "x") for d in range(2) for k in range(24)]
    rates = hourly_arrival_rates(pts)
    assert rates[9] == 24 and rates.sum() == 24
    uniform = [DemandPoint((0, 0), 1.0, datetime(2016, 7, 4, h, 30), 0.1, "x") for h in range(24)]
    np.testing.assert_array_equal(hourly_arrival_rates(uniform), np.ones(24))
    np.testing.assert_array_equal(hourly_arrival_rates([]), np.zeros(24))


def test_hourly_rates_known_histogram():
    hist = {3: 2, 7: 5, 8: 5, 22: 1}
    pts = [DemandPoint((0, 0), 1.0, datetime(2016, 7, 4 + (i % 3), h, i % 60), 0.1, "x")
           for h, c in hist.items() for i in range(c)]
    rates = hourly_arrival_rates(pts)
    expected = np.zeros(24)
    for h, c in hist.items():
        expected[h] = c / 3
    np.testing.assert_allclose(rates, expected)
    assert peak_hour(rates) == 7
    assert hourly_arrival_rates(pts, n_days=6)[7] == pytest.approx(5 / 6)


def test_sample_vehicles_is_seeded():
    recs = [TravelRecord(str(v), T0, 116.4, 39.9) for v in range(100)]
    a = sample_vehicles(recs, 0.1, seed=3)
    assert len({r.vehicle_id for r in a}) == 10
    assert a == sample_vehicles(recs, 0.1, seed=3)
    assert sample_vehicles(recs, 1.0, seed=3) == recs


def test_group_by_vehicle_sorts():
    recs = fixes("b", [(5, 1, 1), (1, 1, 1)]) + fixes("a", [(3, 1, 1)])
    groups = group_by_vehicle(recs)
    assert list(groups) == ["a", "b"]
    assert [r.timestamp.minute for r in groups["b"]] == [1, 5]
