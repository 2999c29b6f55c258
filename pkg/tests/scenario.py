"""Frozen desk-scale scenario shared by the acceptance suite.

Running this file rewrites the expected CSVs in ``tests/fixtures/scenario``:

    python3 tests/scenario.py
"""

from __future__ import annotations

import io
import sys
from functools import lru_cache
from pathlib import Path

import numpy as np

from evcongestion.demand import days_spanned, extract_demands
from evcongestion.planner import build_instance, solve_heuristic
from evcongestion.reporting import (analyze_stations, build_station_profiles, station_histogram,
                                    sweep_chargers, tradeoff_report, preferred_p, write_rows)
from evcongestion.synth import SynthConfig, generate_trajectories

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "scenario"
CONFIG = SynthConfig(n_vehicles=500, n_days=7, seed=7)
STATION_COUNTS = (5, 10)
TOTALS = list(range(140, 241, 4))
HIST_TOTAL = 160
WAIT_BINS = np.linspace(0.0, 30.0, 13)
PROB_BINS = np.linspace(0.0, 1.0, 11)


@lru_cache(maxsize=1)
def build() -> dict:
    demands = extract_demands(generate_trajectories(CONFIG))
    days = max(1, days_spanned(demands))
    scenarios = {}
    for p in STATION_COUNTS:
        inst = build_instance(demands, p)
        sol = solve_heuristic(inst, seed=0)
        sites = {j: tuple(inst.candidates[j]) for j in sol.open_sites}
        scenarios[p] = build_station_profiles(demands, sites, sol.assignment, days)
    return {"demands": demands, "scenarios": scenarios}


def tables() -> dict[str, str]:
    """Every frozen CSV, keyed by file name."""
    scen = build()["scenarios"]
    out = {}

    def emit(name, rows):
        buf = io.StringIO()
        write_rows(rows, buf)
        out[name] = buf.getvalue()

    for p, profiles in scen.items():
        emit(f"sweep_p{p}.csv", sweep_chargers(profiles, TOTALS))
        reports = [r for r in analyze_stations(profiles, HIST_TOTAL) if not r.overloaded]
        emit(f"hist_wait_min_p{p}.csv", station_histogram([r.wait_min for r in reports], WAIT_BINS).rows())
        emit(f"hist_p_wait_p{p}.csv", station_histogram([r.metrics.p_wait for r in reports], PROB_BINS).rows())
    rows = tradeoff_report(scen, TOTALS)
    emit("tradeoff.csv", rows)
    emit("preference.csv", [{"total_chargers": s, "preferred_p": "" if p is None else p}
                            for s, p in preferred_p(rows).items()])
    return out


if __name__ == "__main__":
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, text in tables().items():
        (FIXTURE_DIR / name).write_text(text)
        print(name, file=sys.stderr)
