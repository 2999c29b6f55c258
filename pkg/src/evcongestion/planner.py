"""p-median siting of charging stations.

Choose ``p`` of the candidate sites so that the energy-weighted distance from
every demand point to its nearest open site is minimal. Small instances are
solved to proven optimality by branch-and-bound on the site variables with
Lagrangian bounds (the assignment constraints are dualized). Large instances
use greedy construction followed by Teitz-Bart vertex interchange.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .demand import DemandPoint, haversine_matrix

__all__ = [
    "PlanningInstance",
    "PlanSolution",
    "LagrangianBound",
    "RelaxationReport",
    "InstanceTooLargeError",
    "grid_candidates",
    "aggregate_demands",
    "build_instance",
    "evaluate",
    "solve_exact",
    "solve_heuristic",
    "solve",
    "lower_bound",
    "subgradient",
    "verify_relaxation",
    "instance_to_json",
    "instance_from_json",
    "solution_to_json",
    "solution_from_json",
]

EXACT_SIZE_LIMIT = 60
PROVEN_OPTIMAL = "proven_optimal"
HEURISTIC = "heuristic"
# relative slack when comparing objective values
_REL_TOL = 1e-11


class InstanceTooLargeError(ValueError):
    pass


@dataclass
class PlanningInstance:
    """Candidate sites ``U`` (k, 2), demand nodes ``V`` (n, 2), weights, distances (n, k) in km.

    ``demand_index[i]`` maps original demand point ``i`` to its node (identity
    unless demands were snapped to a grid).
    """

    candidates: np.ndarray
    demand_locations: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    p: int
    demand_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates, dtype=float).reshape(-1, 2)
        self.demand_locations = np.asarray(self.demand_locations, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float)
        self.distances = np.asarray(self.distances, dtype=float)
        n, k = len(self.weights), len(self.candidates)
        if self.distances.shape != (n, k):
            raise ValueError(f"distance matrix shape {self.distances.shape} != ({n}, {k})")
        if not 1 <= self.p <= k:
            raise ValueError(f"need 1 <= p <= {k} candidates, got p = {self.p}")
        if (self.distances < 0).any():
            raise ValueError("distances must be non-negative")
        if (self.weights <= 0).any():
            raise ValueError("demand weights must be positive")
        if self.demand_index is None:
            self.demand_index = np.arange(n)

    @property
    def n_demands(self) -> int:
        return len(self.weights)

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def with_p(self, p: int) -> "PlanningInstance":
        return PlanningInstance(self.candidates, self.demand_locations, self.weights, self.distances, p,
                                self.demand_index)

    def scaled(self, factor: float) -> "PlanningInstance":
        return PlanningInstance(self.candidates, self.demand_locations, self.weights * factor,
                                self.distances, self.p, self.demand_index)


@dataclass
class PlanSolution:
    open_sites: list[int]
    assignment: np.ndarray
    objective: float
    optimality: str
    wall_time: float = 0.0
    nodes: int = 0

    def __post_init__(self):
        self.open_sites = sorted(int(j) for j in self.open_sites)
        self.assignment = np.asarray(self.assignment, dtype=int)


@dataclass(frozen=True)
class LagrangianBound:
    value: float
    open_sites: tuple[int, ...]
    subgradient: np.ndarray


@dataclass
class RelaxationReport:
    open_sites: list[int]
    binary_objective: float
    relaxed_objective: float
    ties: list[tuple[int, list[int]]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return abs(self.binary_objective - self.relaxed_objective)

    @property
    def holds(self) -> bool:
        return self.gap <= 1e-9 * max(1.0, abs(self.binary_objective))


def grid_candidates(bbox: Sequence[float], nx: int, ny: int) -> np.ndarray:
    """Cell centres of an ``nx`` by ``ny`` grid over (lon0, lat0, lon1, lat1), row-major by latitude."""
    lon0, lat0, lon1, lat1 = bbox
    xs = lon0 + (np.arange(nx) + 0.5) * (lon1 - lon0) / nx
    ys = lat0 + (np.arange(ny) + 0.5) * (lat1 - lat0) / ny
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _grid_shape(count: int, bbox: Sequence[float]) -> tuple[int, int]:
    # factor pair of ``count`` whose cell aspect best matches the box (in km)
    lon0, lat0, lon1, lat1 = bbox
    mid = math.radians((lat0 + lat1) / 2)
    width = max((lon1 - lon0) * math.cos(mid), 1e-12)
    height = max(lat1 - lat0, 1e-12)
    target = math.log(width / height)
    pairs = [(nx, count // nx) for nx in range(1, count + 1) if count % nx == 0]
    return min(pairs, key=lambda pr: (abs(math.log(pr[0] / pr[1]) - target), pr[0]))


def _bbox(points: np.ndarray) -> tuple[float, float, float, float]:
    lon0, lat0 = points.min(axis=0)
    lon1, lat1 = points.max(axis=0)
    return (float(lon0), float(lat0), float(lon1), float(lat1))


def aggregate_demands(locations: np.ndarray, weights: np.ndarray, cell_m: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Snap demands to square cells of ``cell_m`` metres; weights summed.

    Returns (node locations at the weighted centroid, node weights, node index per demand).
    """
    locations = np.asarray(locations, dtype=float)
    weights = np.asarray(weights, dtype=float)
    mid = math.radians(float(locations[:, 1].mean()))
    dlat = cell_m / 1000.0 / 111.195
    dlon = dlat / max(math.cos(mid), 1e-6)
    keys = np.column_stack([np.floor(locations[:, 0] / dlon), np.floor(locations[:, 1] / dlat)]).astype(np.int64)
    _, first, index = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    index = index.ravel()
    # order nodes by first appearance for stable output
    order = np.argsort(first, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    index = remap[index]
    m = len(order)
    w = np.bincount(index, weights=weights, minlength=m)
    lon = np.bincount(index, weights=weights * locations[:, 0], minlength=m) / w
    lat = np.bincount(index, weights=weights * locations[:, 1], minlength=m) / w
    return np.column_stack([lon, lat]), w, index


def build_instance(demands: Sequence[DemandPoint], p: int, candidates: Optional[np.ndarray] = None,
                   grid: int | tuple[int, int] = 500, aggregate_m: Optional[float] = None,
                   distance: Callable[[np.ndarray, np.ndarray], np.ndarray] = haversine_matrix) -> PlanningInstance:
    """Assemble an instance from demand points.

    Without explicit ``candidates`` the sites are a uniform grid over the
    demand bounding box: ``grid`` is either (nx, ny) or a total count that is
    factored into the grid shape closest to the box's aspect ratio.
    ``distance(demand_locations, candidates)`` returns the (n, k) km matrix;
    swap in a road-network lookup here if one is available.
    """
    if not demands:
        raise ValueError("no demand points")
    locs = np.array([d.location for d in demands], dtype=float)
    weights = np.array([d.weight for d in demands], dtype=float)
    if candidates is None:
        box = _bbox(locs)
        nx, ny = grid if isinstance(grid, tuple) else _grid_shape(int(grid), box)
        candidates = grid_candidates(box, nx, ny)
    candidates = np.asarray(candidates, dtype=float).reshape(-1, 2)
    if p > len(candidates):
        raise ValueError(f"p = {p} exceeds the {len(candidates)} candidate sites")
    index = None
    if aggregate_m:
        locs, weights, index = aggregate_demands(locs, weights, aggregate_m)
    return PlanningInstance(candidates, locs, weights, distance(locs, candidates), p, index)


def evaluate(instance: PlanningInstance, open_sites: Sequence[int]) -> tuple[float, np.ndarray]:
    """Objective and nearest-open-site assignment (lowest index wins ties)."""
    sites = np.sort(np.asarray(open_sites, dtype=int))
    sub = instance.distances[:, sites]
    pick = np.argmin(sub, axis=1)
    nearest = sub[np.arange(len(pick)), pick]
    return float(np.dot(instance.weights, nearest)), sites[pick]


def _solution(instance: PlanningInstance, open_sites, optimality: str, t0: float, nodes: int = 0) -> PlanSolution:
    obj, assign = evaluate(instance, open_sites)
    return PlanSolution(list(open_sites), assign, obj, optimality, time.perf_counter() - t0, nodes)


def _improves(new: float, old: float) -> bool:
    return new < old - _REL_TOL * max(1.0, abs(old))


# -- heuristic -----------------------------------------------------------------

def _greedy(instance: PlanningInstance) -> list[int]:
    wd = instance.distances
    w = instance.weights
    best = np.full(instance.n_demands, np.inf)
    chosen: list[int] = []
    for _ in range(instance.p):
        cost = w @ np.minimum(best[:, None], wd)
        cost[chosen] = np.inf
        j = int(np.argmin(cost))
        chosen.append(j)
        best = np.minimum(best, wd[:, j])
    return chosen


def _nearest_two(instance: PlanningInstance, sites: list[int]):
    sub = instance.distances[:, sites]
    if len(sites) == 1:
        return sub[:, 0].copy(), np.full(instance.n_demands, np.inf), np.full(instance.n_demands, sites[0])
    order = np.argsort(sub, axis=1, kind="stable")[:, :2]
    rows = np.arange(instance.n_demands)
    d1 = sub[rows, order[:, 0]]
    d2 = sub[rows, order[:, 1]]
    return d1, d2, np.asarray(sites)[order[:, 0]]


def _interchange(instance: PlanningInstance, sites: list[int], order: np.ndarray) -> list[int]:
    """Teitz-Bart: for each closed site (in ``order``) apply the best improving swap; repeat until stable."""
    w = instance.weights
    k = instance.n_candidates
    sites = list(sites)
    d1, d2, c1 = _nearest_two(instance, sites)
    current = float(np.dot(w, d1))
    improved = True
    while improved:
        improved = False
        for c in order:
            if c in sites:
                continue
            col = instance.distances[:, c]
            keep = np.minimum(d1, col)
            base = float(np.dot(w, keep))
            # extra cost of closing j: its customers fall back to min(second nearest, c)
            loss = np.bincount(c1, weights=w * (np.minimum(d2, col) - keep), minlength=k)
            open_arr = np.array(sorted(sites))
            totals = base + loss[open_arr]
            pos = int(np.argmin(totals))
            if _improves(float(totals[pos]), current):
                sites[sites.index(int(open_arr[pos]))] = int(c)
                d1, d2, c1 = _nearest_two(instance, sites)
                current = float(np.dot(w, d1))
                improved = True
    return sites


def solve_heuristic(instance: PlanningInstance, seed: int = 0) -> PlanSolution:
    """Greedy construction, then vertex interchange visiting closed sites in a seeded order."""
    t0 = time.perf_counter()
    greedy = _greedy(instance)
    if instance.p == instance.n_candidates:
        return _solution(instance, greedy, HEURISTIC, t0)
    order = np.random.default_rng(seed).permutation(instance.n_candidates)
    return _solution(instance, _interchange(instance, greedy, order), HEURISTIC, t0)


# -- Lagrangian bounds ---------------------------------------------------------

def lower_bound(instance: PlanningInstance, multipliers: Sequence[float],
                fixed_open: Sequence[int] = (), fixed_closed: Sequence[int] = ()) -> LagrangianBound:
    """Lagrangian bound with the assign-every-demand constraints dualized.

    For any multipliers ``u``, ``sum(u) + sum of the p smallest reduced costs
    sum_i min(0, D_i L_ij - u_i)`` (respecting fixed sites) bounds the optimum
    from below.
    """
    u = np.asarray(multipliers, dtype=float)
    slack = instance.weights[:, None] * instance.distances - u[:, None]
    reduced = np.minimum(slack, 0.0).sum(axis=0)
    p = instance.p
    opened = sorted(int(j) for j in fixed_open)
    closed = set(int(j) for j in fixed_closed)
    free = np.array([j for j in range(instance.n_candidates) if j not in closed and j not in opened], dtype=int)
    need = p - len(opened)
    if need < 0 or need > len(free):
        raise ValueError("fixings leave no feasible site set")
    if need:
        pick = free[np.argsort(reduced[free], kind="stable")[:need]]
        opened = sorted(opened + [int(j) for j in pick])
    value = float(u.sum() + reduced[opened].sum())
    grad = 1.0 - (slack[:, opened] < 0).sum(axis=1)
    return LagrangianBound(value, tuple(opened), grad)


def _initial_multipliers(instance: PlanningInstance, fixed_closed=()) -> np.ndarray:
    wd = instance.weights[:, None] * instance.distances
    if fixed_closed:
        wd = wd.copy()
        wd[:, list(fixed_closed)] = np.inf
    return wd.min(axis=1)


def subgradient(instance: PlanningInstance, upper: float, iterations: int = 200,
                multipliers: Optional[np.ndarray] = None, fixed_open=(), fixed_closed=(),
                step: float = 2.0, patience: int = 10) -> tuple[LagrangianBound, np.ndarray]:
    """Polyak-step subgradient ascent; returns the best bound and its multipliers."""
    u = _initial_multipliers(instance, fixed_closed) if multipliers is None else np.array(multipliers, dtype=float)
    best = lower_bound(instance, u, fixed_open, fixed_closed)
    best_u = u.copy()
    stall = 0
    for _ in range(iterations):
        lb = lower_bound(instance, u, fixed_open, fixed_closed)
        if lb.value > best.value:
            best, best_u, stall = lb, u.copy(), 0
        else:
            stall += 1
            if stall >= patience:
                step *= 0.5
                stall = 0
        norm = float(lb.subgradient @ lb.subgradient)
        if norm == 0 or step < 1e-6 or upper - lb.value <= _REL_TOL * max(1.0, abs(upper)):
            break
        u = u + step * (upper - lb.value) / norm * lb.subgradient
    return best, best_u


# -- branch and bound ----------------------------------------------------------

def solve_exact(instance: PlanningInstance, size_limit: int = EXACT_SIZE_LIMIT,
                node_iterations: int = 30, root_iterations: int = 200) -> PlanSolution:
    """Branch-and-bound over open/closed site decisions, depth first, open branch first."""
    if instance.n_candidates > size_limit:
        raise InstanceTooLargeError(
            f"{instance.n_candidates} candidate sites exceed the exact-solver limit of {size_limit}; "
            "use solve_heuristic or raise size_limit")
    t0 = time.perf_counter()
    k, p = instance.n_candidates, instance.p
    incumbent = solve_heuristic(instance, seed=0)
    best_obj, best_sites = incumbent.objective, list(incumbent.open_sites)

    def consider(sites) -> None:
        nonlocal best_obj, best_sites
        obj, _ = evaluate(instance, sites)
        if obj < best_obj or (obj == best_obj and sorted(sites) < sorted(best_sites)):
            best_obj, best_sites = obj, sorted(int(j) for j in sites)

    nodes = 0
    stack: list[tuple[tuple[int, ...], tuple[int, ...], Optional[np.ndarray]]] = [((), (), None)]
    while stack:
        opened, closed, u = stack.pop()
        nodes += 1
        n_free = k - len(opened) - len(closed)
        if len(opened) == p:
            consider(opened)
            continue
        if len(opened) + n_free == p:
            consider([j for j in range(k) if j not in closed])
            continue
        iters = root_iterations if u is None else node_iterations
        bound, u_node = subgradient(instance, best_obj, iters, u, opened, closed)
        consider(bound.open_sites)
        if bound.value >= best_obj - _REL_TOL * max(1.0, abs(best_obj)):
            continue
        free = [j for j in bound.open_sites if j not in opened]
        if not free:
            free = [j for j in range(k) if j not in opened and j not in closed]
        slack = instance.weights[:, None] * instance.distances[:, free] - u_node[:, None]
        reduced = np.minimum(slack, 0.0).sum(axis=0)
        j = free[int(np.argmin(reduced))]
        stack.append((opened, tuple(sorted(closed + (j,))), u_node))
        stack.append((tuple(sorted(opened + (j,))), closed, u_node))
    return _solution(instance, best_sites, PROVEN_OPTIMAL, t0, nodes)


def solve(instance: PlanningInstance, method: str = "auto", seed: int = 0,
          size_limit: int = EXACT_SIZE_LIMIT) -> PlanSolution:
    """``exact`` always branches (an explicit request overrides the size limit);
    ``auto`` branches only within ``size_limit`` and falls back to the heuristic."""
    if method == "exact":
        return solve_exact(instance, size_limit=max(size_limit, instance.n_candidates))
    if method == "auto" and instance.n_candidates <= size_limit:
        return solve_exact(instance, size_limit=size_limit)
    if method in ("heuristic", "auto"):
        return solve_heuristic(instance, seed)
    raise ValueError(f"unknown method {method!r}")


# -- relaxation check ----------------------------------------------------------

def verify_relaxation(instance: PlanningInstance, solution: Optional[PlanSolution] = None,
                      tie_tol: float = 1e-12) -> RelaxationReport:
    """Compare binary nearest-site assignment with the LP over 0 <= A_ij <= B_j.

    The LP is solved by HiGHS for the optimal site set, independently of the
    nearest-site rule. Demands with several equally near open sites are listed
    as ties; any split between them is also optimal.
    """
    if solution is None:
        solution = solve_exact(instance)
    sites = list(solution.open_sites)
    binary, _ = evaluate(instance, sites)
    n, m = instance.n_demands, len(sites)
    cost = (instance.weights[:, None] * instance.distances[:, sites]).ravel()
    rows = np.repeat(np.arange(n), m)
    a_eq = np.zeros((n, n * m))
    a_eq[rows, np.arange(n * m)] = 1.0
    lp = linprog(cost, A_eq=a_eq, b_eq=np.ones(n), bounds=(0.0, 1.0), method="highs")
    if lp.status != 0:
        raise RuntimeError(f"assignment LP failed: {lp.message}")
    sub = instance.distances[:, sites]
    near = sub.min(axis=1)
    ties = []
    for i in range(n):
        tied = [sites[j] for j in range(m) if sub[i, j] - near[i] <= tie_tol * max(1.0, near[i])]
        if len(tied) > 1:
            ties.append((i, tied))
    return RelaxationReport(sites, binary, float(lp.fun), ties)


# -- JSON ----------------------------------------------------------------------

def instance_to_json(instance: PlanningInstance) -> str:
    return json.dumps({
        "p": instance.p,
        "sites": instance.candidates.tolist(),
        "demands": [{"lon": float(x), "lat": float(y), "weight": float(w)}
                    for (x, y), w in zip(instance.demand_locations, instance.weights)],
    }, indent=2)


def instance_from_json(text: str) -> PlanningInstance:
    data = json.loads(text)
    sites = np.asarray(data["sites"], dtype=float).reshape(-1, 2)
    locs = np.array([[d["lon"], d["lat"]] for d in data["demands"]], dtype=float).reshape(-1, 2)
    weights = np.array([d["weight"] for d in data["demands"]], dtype=float)
    return PlanningInstance(sites, locs, weights, haversine_matrix(locs, sites), int(data["p"]))


def solution_to_json(instance: PlanningInstance, solution: PlanSolution, extra: Optional[dict] = None) -> str:
    """Solution record; ``assignment`` is per original demand point (node assignment expanded)."""
    per_demand = solution.assignment[instance.demand_index]
    payload = {
        "p": instance.p,
        "objective": solution.objective,
        "optimality": solution.optimality,
        "wall_time_s": solution.wall_time,
        "open_sites": [{"index": j, "lon": float(instance.candidates[j, 0]), "lat": float(instance.candidates[j, 1])}
                       for j in solution.open_sites],
        "assignment": per_demand.tolist(),
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2)


def solution_from_json(text: str) -> dict:
    """Parsed solution: ``sites`` maps site index to (lon, lat); ``assignment`` per demand point."""
    data = json.loads(text)
    data["sites"] = {int(s["index"]): (float(s["lon"]), float(s["lat"])) for s in data["open_sites"]}
    return data
