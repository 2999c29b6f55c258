"""Command line entry point: ``evcongestion <command> ...``.

Options can also come from an INI file passed with ``--config``: keys in a
``[global]`` section set global options, keys in a section named after a
command set that command's options. Command-line flags win.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .demand import (VehicleParams, days_spanned, extract_demands, format_records_csv, parse_records,
                     read_demands_csv, sample_vehicles, write_demands_csv)
from .planner import EXACT_SIZE_LIMIT, build_instance, solution_from_json, solution_to_json, solve
from .queueing import QueueParams, UnstableQueueError, queue_metrics
from .reporting import (DEFAULT_SPEED_KMH, InfeasibleAllocationError, analyze_stations, build_station_profiles,
                        preferred_p, station_histogram, sweep_chargers, tradeoff_report, write_rows)
from .simulator import ServiceSpec, SimConfig, empirical_waiting_probability, simulate
from .synth import SynthConfig, generate_trajectories

log = logging.getLogger("evcongestion")


def _int_list(text: str) -> list[int]:
    """``"100:200:10"`` (inclusive) or ``"100,120,150"``."""
    text = text.strip()
    if ":" in text:
        parts = [int(x) for x in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _grid(text: str) -> int | tuple[int, int]:
    if "x" in text.lower():
        nx, ny = text.lower().split("x")
        return (int(nx), int(ny))
    return int(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _add_vehicle_options(p: argparse.ArgumentParser) -> None:
    d = VehicleParams()
    p.add_argument("--battery-kwh", type=float, default=d.battery_capacity)
    p.add_argument("--range-km", type=float, default=d.electric_range)
    p.add_argument("--charger-kw", type=float, default=d.charger_power)
    p.add_argument("--dwell-min", type=float, default=d.dwell_threshold)
    p.add_argument("--dwell-radius-m", type=float, default=d.dwell_radius)
    p.add_argument("--max-gap-min", type=float, default=d.max_gap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcongestion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", type=Path, help="INI file with [global] and per-command sections")
    parser.add_argument("--seed", type=int, default=None, help="master seed (command-specific default)")
    parser.add_argument("--out-dir", type=Path, default=Path("."))
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    d = SynthConfig()
    p = sub.add_parser("synth", help="generate synthetic trajectories")
    p.add_argument("--vehicles", type=int, default=d.n_vehicles)
    p.add_argument("--days", type=int, default=d.n_days)
    p.add_argument("--bbox", type=_float_list, default=list(d.bbox), help="lon0,lat0,lon1,lat1")
    p.add_argument("--hotspots", type=int, default=d.hotspot_count)
    p.add_argument("--trips-per-day", type=float, default=d.trips_per_day_mean)
    p.add_argument("--dwell-prob", type=float, default=d.dwell_prob)
    p.add_argument("--peak-hour", type=int, default=d.peak_hour)
    p.add_argument("--start-date", default=d.start_date)
    p.add_argument("-o", "--output", default="trajectories.csv")

    p = sub.add_parser("extract", help="trajectory CSV -> demand-point CSV")
    p.add_argument("input", type=Path)
    p.add_argument("--sample-fraction", type=float, default=1.0,
                   help="keep this share of vehicles as electric (uniform, seeded)")
    _add_vehicle_options(p)
    p.add_argument("-o", "--output", default="demands.csv")

    p = sub.add_parser("plan", help="p-median station siting")
    p.add_argument("demands", type=Path)
    p.add_argument("-p", "--stations", type=int, required=True)
    p.add_argument("--grid", type=_grid, default=500, help="candidate count or NXxNY")
    p.add_argument("--candidates", type=Path, help="CSV with lon,lat columns instead of a grid")
    p.add_argument("--method", choices=("auto", "exact", "heuristic"), default="auto")
    p.add_argument("--exact-limit", type=int, default=EXACT_SIZE_LIMIT)
    p.add_argument("--aggregate-m", type=float, nargs="?", const=200.0, default=0.0,
                   help="snap demands to cells of this size in metres (bare flag: 200; default off)")
    p.add_argument("-o", "--output", default=None, help="default plan_p<P>.json")

    p = sub.add_parser("analyze", help="per-station congestion for one plan")
    p.add_argument("demands", type=Path)
    p.add_argument("plan", type=Path)
    p.add_argument("--chargers", type=int, required=True)
    p.add_argument("--speed-kmh", type=float, default=DEFAULT_SPEED_KMH)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--all-hours", type=_bool, nargs="?", const=True, default=False,
                   help="also write 24-hour station tables")

    p = sub.add_parser("simulate", help="discrete-event simulation of one M/G/s queue")
    p.add_argument("--lam", type=float, help="constant arrival rate per hour")
    p.add_argument("--hourly", type=_float_list, help="24 comma-separated hourly rates")
    p.add_argument("--service", choices=("deterministic", "exponential", "erlang", "lognormal"), default="exponential")
    p.add_argument("--mean", type=float, default=1.0, help="mean service time (hours)")
    p.add_argument("--std", type=float, default=0.0, help="lognormal service std (hours)")
    p.add_argument("--erlang-k", type=int, default=2)
    p.add_argument("--servers", type=int, default=1)
    p.add_argument("--arrivals", type=int, default=1_000_000)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--engine", choices=("fast", "events"), default="fast")
    p.add_argument("-o", "--output", default="simulation.json")

    for name, helptext in (("sweep", "waits across total charger counts"),
                           ("tradeoff", "wait versus drive time across plans")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("demands", type=Path)
        p.add_argument("plans", type=Path, nargs="+" if name == "tradeoff" else 1)
        p.add_argument("--chargers", type=_int_list, required=True, help="start:stop:step or a,b,c")
        p.add_argument("--speed-kmh", type=float, default=DEFAULT_SPEED_KMH)
        if name == "sweep":
            p.add_argument("--hist-chargers", type=int, default=None,
                           help="charger total for the station histograms (default: middle of the sweep)")
            p.add_argument("--bins", type=int, default=10)
        else:
            p.add_argument("--wait-weight", type=float, default=1.0)
            p.add_argument("--drive-weight", type=float, default=1.0)
    return parser


def _apply_config(parser: argparse.ArgumentParser, path: Path) -> None:
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise SystemExit(f"config file not found: {path}")
    norm = lambda section: {k.replace("-", "_"): v for k, v in cfg.items(section)}  # noqa: E731
    if cfg.has_section("global"):
        parser.set_defaults(**norm("global"))
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subparsers.choices.items():
        if cfg.has_section(name):
            sp.set_defaults(**norm(name))


def _vehicle_params(args) -> VehicleParams:
    return VehicleParams(args.battery_kwh, args.range_km, args.charger_kw, args.dwell_min,
                         args.dwell_radius_m, args.max_gap_min)


def _load_plan(demands, path: Path):
    data = solution_from_json(path.read_text())
    if len(data["assignment"]) != len(demands):
        raise SystemExit(f"{path}: plan covers {len(data['assignment'])} demands, file has {len(demands)}")
    return data


def _profiles(demands, plan):
    return build_station_profiles(demands, plan["sites"], plan["assignment"], max(1, days_spanned(demands)))


def _read_demands(path: Path):
    with path.open(newline="") as fh:
        return read_demands_csv(fh)


def _write_csv(out_dir: Path, name: str, rows) -> Path:
    path = out_dir / name
    with path.open("w", newline="") as fh:
        write_rows(rows, fh)
    return path


def cmd_synth(args, out_dir: Path) -> dict:
    cfg = SynthConfig(n_vehicles=args.vehicles, n_days=args.days, bbox=tuple(args.bbox),
                      hotspot_count=args.hotspots, trips_per_day_mean=args.trips_per_day,
                      dwell_prob=args.dwell_prob, peak_hour=args.peak_hour, start_date=args.start_date,
                      seed=SynthConfig().seed if args.seed is None else args.seed)
    records = generate_trajectories(cfg)
    path = out_dir / args.output
    path.write_text(format_records_csv(records))
    log.info("wrote %d fixes for %d vehicles", len(records), cfg.n_vehicles)
    return {"parameters": cfg.to_dict(), "outputs": [str(path)], "records": len(records)}


def cmd_extract(args, out_dir: Path) -> dict:
    with args.input.open(newline="") as fh:
        parsed = parse_records(fh)
    records = parsed.records
    seed = 0 if args.seed is None else args.seed
    if args.sample_fraction < 1:
        records = sample_vehicles(records, args.sample_fraction, seed)
    params = _vehicle_params(args)
    points = extract_demands(records, params)
    path = out_dir / args.output
    with path.open("w", newline="") as fh:
        write_demands_csv(points, fh)
    outputs = [str(path)]
    if parsed.errors:
        outputs.append(str(_write_csv(out_dir, "parse_errors.csv",
                                      [{"line": e.line, "message": e.message, "text": e.text} for e in parsed.errors])))
        log.warning("%d rows rejected, see parse_errors.csv", len(parsed.errors))
    return {"parameters": vars(params) | {"sample_fraction": args.sample_fraction}, "seed": seed,
            "outputs": outputs, "demand_points": len(points), "rejected_rows": len(parsed.errors)}


def cmd_plan(args, out_dir: Path) -> dict:
    demands = _read_demands(args.demands)
    candidates = None
    if args.candidates:
        data = np.genfromtxt(args.candidates, delimiter=",", names=True)
        candidates = np.column_stack([data["lon"], data["lat"]])
    instance = build_instance(demands, args.stations, candidates=candidates, grid=args.grid,
                              aggregate_m=args.aggregate_m or None)
    seed = 0 if args.seed is None else args.seed
    solution = solve(instance, args.method, seed=seed, size_limit=args.exact_limit)
    total_weight = float(instance.weights.sum())
    path = out_dir / (args.output or f"plan_p{args.stations}.json")
    path.write_text(solution_to_json(instance, solution, {
        "mean_drive_km": solution.objective / total_weight,
        "candidates": instance.n_candidates,
        "demand_nodes": instance.n_demands,
    }))
    log.info("p=%d objective %.6g (%s) in %.2fs", args.stations, solution.objective,
             solution.optimality, solution.wall_time)
    return {"parameters": {"p": args.stations, "grid": args.grid, "method": args.method,
                           "aggregate_m": args.aggregate_m}, "seed": seed, "outputs": [str(path)],
            "objective": solution.objective, "optimality": solution.optimality}


def _histograms(out_dir: Path, reports, bins: int, tag: str) -> list[str]:
    ok = [r for r in reports if not r.overloaded]
    paths = []
    for metric, values in (("wait_min", [r.wait_min for r in ok]), ("p_wait", [r.metrics.p_wait for r in ok])):
        if values:
            paths.append(str(_write_csv(out_dir, f"hist_{metric}{tag}.csv", station_histogram(values, bins).rows())))
    return paths


def cmd_analyze(args, out_dir: Path) -> dict:
    demands = _read_demands(args.demands)
    plan = _load_plan(demands, args.plan)
    profiles = _profiles(demands, plan)
    try:
        reports = analyze_stations(profiles, args.chargers, args.speed_kmh)
    except InfeasibleAllocationError as exc:
        raise SystemExit(str(exc))
    outputs = [str(_write_csv(out_dir, "stations.csv", [r.row() for r in reports]))]
    outputs += _histograms(out_dir, reports, args.bins, "")
    if args.all_hours:
        from .reporting import station_metrics
        rows = []
        for prof, rep in zip(profiles, reports):
            for h in range(24):
                rows.append(station_metrics(prof, rep.s_chargers, args.speed_kmh, hour=h).row())
        outputs.append(str(_write_csv(out_dir, "stations_hourly.csv", rows)))
    return {"parameters": {"chargers": args.chargers, "speed_kmh": args.speed_kmh}, "outputs": outputs}


def cmd_simulate(args, out_dir: Path) -> dict:
    if (args.lam is None) == (args.hourly is None):
        raise SystemExit("give exactly one of --lam or --hourly")
    service = ServiceSpec(args.service, args.mean, args.std, args.erlang_k)
    seed = 0 if args.seed is None else args.seed
    cfg = SimConfig(arrival=args.lam if args.lam is not None else args.hourly, service=service, s=args.servers,
                    n_arrivals=args.arrivals, warmup=args.warmup, seed=seed, replications=args.replications,
                    engine=args.engine)
    result = simulate(cfg)
    wp = empirical_waiting_probability(result)
    payload = {"result": result.to_dict(),
               "empirical_waiting_probability": {"estimate": wp.estimate, "binomial_hw": wp.binomial_hw,
                                                 "replication_hw": wp.replication_hw}}
    if args.lam is not None:
        try:
            payload["analytic"] = queue_metrics(QueueParams(args.lam, 1 / args.mean, service.sd, args.servers)).to_dict()
        except UnstableQueueError as exc:
            payload["analytic"] = {"error": str(exc)}
    path = out_dir / args.output
    path.write_text(json.dumps(payload, indent=2))
    return {"parameters": {"arrival": cfg.arrival, "service": vars(service), "servers": cfg.s,
                           "n_arrivals": cfg.n_arrivals, "warmup": cfg.effective_warmup,
                           "replications": cfg.replications, "engine": cfg.engine},
            "seed": seed, "outputs": [str(path)]}


def cmd_sweep(args, out_dir: Path) -> dict:
    demands = _read_demands(args.demands)
    plan = _load_plan(demands, args.plans[0])
    profiles = _profiles(demands, plan)
    rows = sweep_chargers(profiles, args.chargers, args.speed_kmh)
    outputs = [str(_write_csv(out_dir, "sweep.csv", rows))]
    feasible = [r.total_chargers for r in rows if r.status == "ok"]
    hist_total = args.hist_chargers or (feasible[len(feasible) // 2] if feasible else None)
    if hist_total is not None:
        reports = analyze_stations(profiles, hist_total, args.speed_kmh)
        outputs += _histograms(out_dir, reports, args.bins, f"_S{hist_total}")
    return {"parameters": {"chargers": args.chargers, "hist_chargers": hist_total, "p": plan["p"]},
            "outputs": outputs}


def cmd_tradeoff(args, out_dir: Path) -> dict:
    demands = _read_demands(args.demands)
    scenarios = {}
    for path in args.plans:
        plan = _load_plan(demands, path)
        scenarios[int(plan["p"])] = _profiles(demands, plan)
    rows = tradeoff_report(scenarios, args.chargers, args.speed_kmh, args.wait_weight, args.drive_weight)
    pref = preferred_p(rows)
    outputs = [str(_write_csv(out_dir, "tradeoff.csv", rows)),
               str(_write_csv(out_dir, "preference.csv",
                              [{"total_chargers": s, "preferred_p": "" if p is None else p} for s, p in pref.items()]))]
    return {"parameters": {"chargers": args.chargers, "plans": [str(p) for p in args.plans],
                           "wait_weight": args.wait_weight, "drive_weight": args.drive_weight},
            "outputs": outputs}


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "plan": cmd_plan, "analyze": cmd_analyze,
            "simulate": cmd_simulate, "sweep": cmd_sweep, "tradeoff": cmd_tradeoff}


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"not serializable: {type(value)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        _apply_config(parser, known.config)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    info = COMMANDS[args.command](args, out_dir)
    manifest = {
        "command": args.command,
        "version": __version__,
        "argv": argv,
        "seed": args.seed,
        "config": str(args.config) if args.config else None,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        **info,
    }
    (out_dir / f"manifest_{args.command}.json").write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
