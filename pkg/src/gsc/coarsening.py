"""Graph coarsening: aggregated models whose optima are valid upper bounds.

A handful of pivot nodes is drawn at random and every other node joins the
nearest pivot.  Edges inside a partition are dropped (their transport cost
becomes zero) and edges crossing partitions are pooled per
(source partition, destination partition, product) into one aggregated edge
with the summed capacity and the cheapest member cost.  Balances are summed
per partition.  Every feasible allocation of the original model maps onto a
feasible point of the coarse model with no smaller welfare, which is what
``lift_check`` verifies constructively.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .milp import (
    AGG_FLOW,
    BUILD,
    DEMAND,
    PROCESS,
    SUPPLY,
    ArcTable,
    Backend,
    MilpProblem,
    SolverError,
    SolverParams,
    assemble,
    extract_allocation,
    solve,
)
from .model import Allocation, SupplyChainInstance, evaluate_welfare
from .stats import summarize

log = logging.getLogger(__name__)

DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b)


@dataclass(frozen=True)
class AggEdge:
    k: int
    src_part: int
    dst_part: int
    product: int
    members: tuple[int, ...]
    capacity: float
    cost: float


@dataclass(frozen=True, eq=False)
class CoarsePlan:
    pivots: tuple[int, ...]
    partition_of: np.ndarray
    local_edges: np.ndarray
    global_edges: np.ndarray
    agg_edges: tuple[AggEdge, ...]
    seed: int | None = None

    @property
    def n_partitions(self) -> int:
        return len(self.pivots)

    @property
    def n_agg_edges(self) -> int:
        return len(self.agg_edges)

    def arc_table(self) -> ArcTable:
        ag = self.agg_edges
        return ArcTable(
            src=np.array([e.src_part for e in ag], dtype=np.int64),
            dst=np.array([e.dst_part for e in ag], dtype=np.int64),
            product=np.array([e.product for e in ag], dtype=np.int64),
            capacity=np.array([e.capacity for e in ag], dtype=float),
            cost=np.array([e.cost for e in ag], dtype=float),
            ids=np.arange(len(ag), dtype=np.int64),
            kind=AGG_FLOW,
        )

    def agg_of_edge(self, n_edges: int) -> np.ndarray:
        """Aggregated-edge index per original edge, -1 for local edges."""
        out = np.full(n_edges, -1, dtype=np.int64)
        for e in self.agg_edges:
            out[list(e.members)] = e.k
        return out


def select_pivots(inst: SupplyChainInstance, C: int, rng_seed: int) -> list[int]:
    """Draw ``C`` distinct pivot nodes uniformly; returned in ascending id order."""
    if not 1 <= C <= inst.n_nodes:
        raise ValueError(f"partition count {C} outside [1, {inst.n_nodes}]")
    rng = np.random.default_rng(rng_seed)
    return sorted(int(n) for n in rng.choice(inst.n_nodes, size=C, replace=False))


def assign_partitions(inst: SupplyChainInstance, pivots, distance: DistanceFn = euclidean) -> np.ndarray:
    """Map every node to the partition of its nearest pivot.

    The total-distance assignment problem separates per node, so nearest
    pivot is its exact optimum.  Ties go to the lowest partition index.
    Pivots always map to their own partition.
    """
    pivots = np.asarray(pivots, dtype=np.int64)
    if len(pivots) == 0:
        raise ValueError("at least one pivot is required")
    if len(np.unique(pivots)) != len(pivots):
        raise ValueError("pivots must be distinct")
    dist = np.asarray(distance(inst.coords, inst.coords[pivots]), dtype=float)
    part = np.argmin(dist, axis=1).astype(np.int64)
    part[pivots] = np.arange(len(pivots))
    return part


def classify_and_aggregate(inst: SupplyChainInstance, partition_of):
    """Split edges into local and global and pool the global ones.

    Returns ``(local_edges, global_edges, agg_edges)``; aggregated edges are
    ordered by (source partition, destination partition, product).
    """
    part = np.asarray(partition_of, dtype=np.int64)
    ea = inst.edge_arrays
    cs, cr = part[ea["src"]], part[ea["dst"]]
    is_local = cs == cr
    local = np.flatnonzero(is_local)
    glob = np.flatnonzero(~is_local)

    agg: list[AggEdge] = []
    if len(glob):
        keys = np.column_stack([cs[glob], cr[glob], ea["product"][glob]])
        order = np.lexsort((glob, keys[:, 2], keys[:, 1], keys[:, 0]))
        keys, members = keys[order], glob[order]
        starts = np.flatnonzero(np.r_[True, np.any(keys[1:] != keys[:-1], axis=1)])
        ends = np.r_[starts[1:], len(members)]
        cap, cost = ea["capacity"], ea["cost"]
        for k, (lo, hi) in enumerate(zip(starts, ends)):
            m = members[lo:hi]
            agg.append(AggEdge(
                k=k,
                src_part=int(keys[lo, 0]),
                dst_part=int(keys[lo, 1]),
                product=int(keys[lo, 2]),
                members=tuple(int(e) for e in m),
                capacity=math.fsum(cap[m]),
                cost=float(cost[m].min()),
            ))
    return local, glob, agg


def build_plan(inst: SupplyChainInstance, C: int, rng_seed: int, distance: DistanceFn = euclidean) -> CoarsePlan:
    pivots = select_pivots(inst, C, rng_seed)
    part = assign_partitions(inst, pivots, distance)
    return plan_from_partition(inst, pivots, part, seed=rng_seed)


def plan_from_partition(inst: SupplyChainInstance, pivots, partition_of, seed: int | None = None) -> CoarsePlan:
    local, glob, agg = classify_and_aggregate(inst, partition_of)
    part = np.asarray(partition_of, dtype=np.int64).copy()
    part.setflags(write=False)
    return CoarsePlan(tuple(int(p) for p in pivots), part, local, glob, tuple(agg), seed)


def formulate_coarse(inst: SupplyChainInstance, plan: CoarsePlan) -> MilpProblem:
    """Aggregated model: one balance per (partition, product), pooled arcs."""
    part = plan.partition_of
    C = plan.n_partitions
    if part.shape != (inst.n_nodes,) or part.min(initial=0) < 0 or part.max(initial=0) >= C:
        raise ValueError("plan partition map does not cover the instance's nodes")
    for i, p in enumerate(plan.pivots):
        if part[p] != i:
            raise ValueError(f"pivot {p} is not in its own partition {i}")
    return assemble(inst, plan.arc_table(), group_of_node=part, n_groups=C,
                    name=f"{inst.name or 'instance'}-coarse-C{C}")


def coarse_welfare(inst: SupplyChainInstance, plan: CoarsePlan, alloc: Allocation, agg_flow: np.ndarray) -> float:
    """Welfare with local transport free and pooled flows at the cheapest cost."""
    ta, sa, ca = inst.tech_arrays, inst.supplier_arrays, inst.consumer_arrays
    cost = np.array([e.cost for e in plan.agg_edges], dtype=float)
    return float(
        ca["value"] @ alloc.d - sa["cost"] @ alloc.s - cost @ agg_flow
        - ta["op_cost"] @ alloc.xi - ta["install_cost"] @ np.asarray(alloc.y, float)
    )


@dataclass
class LiftReport:
    ok: bool
    agg_flow: np.ndarray
    full_welfare: float
    coarse_welfare: float
    violations: list[str] = field(default_factory=list)
    max_residual: float = 0.0

    def __bool__(self):
        return self.ok


def lift_check(inst: SupplyChainInstance, plan: CoarsePlan, alloc: Allocation, tol: float = 1e-7) -> LiftReport:
    """Map a full allocation into the coarse space and check every coarse constraint.

    Pooled flows are member-flow sums.  Checked: pooled capacity bounds,
    the local in-flow/out-flow identity per (partition, product), the summed
    partition balances, the build coupling and welfare monotonicity.  Any
    failure on a feasible input is a bug.
    """
    part = plan.partition_of
    C, P = plan.n_partitions, inst.n_products
    ea, sa, ca, ta = inst.edge_arrays, inst.supplier_arrays, inst.consumer_arrays, inst.tech_arrays
    f = np.asarray(alloc.f, float)
    viol: list[str] = []

    agg_flow = np.array([math.fsum(f[list(e.members)]) for e in plan.agg_edges], dtype=float)
    for e, v in zip(plan.agg_edges, agg_flow):
        if v < -tol * (1 + e.capacity) or v > e.capacity + tol * (1 + e.capacity):
            viol.append(f"aggregated edge {e.k} flow {v:.9g} outside [0, {e.capacity:.9g}]")

    # local flows leave and enter the same partition
    loc = plan.local_edges
    loc_in = np.zeros((C, P))
    loc_out = np.zeros((C, P))
    np.add.at(loc_in, (part[ea["dst"][loc]], ea["product"][loc]), f[loc])
    np.add.at(loc_out, (part[ea["src"][loc]], ea["product"][loc]), f[loc])
    scale = np.zeros((C, P))
    np.add.at(scale, (part[ea["src"]], ea["product"]), np.abs(f))
    for c, p in np.argwhere(np.abs(loc_in - loc_out) > tol * (1 + scale)):
        viol.append(f"local flow identity broken at (partition {c}, product {p})")

    bal = np.zeros((C, P))
    mag = np.zeros((C, P))

    def add(nodes, prods, v):
        np.add.at(bal, (part[nodes], prods), v)
        np.add.at(mag, (part[nodes], prods), np.abs(v))

    add(sa["node"], sa["product"], np.asarray(alloc.s, float))
    add(ca["node"], ca["product"], -np.asarray(alloc.d, float))
    if len(ta["yield_tech"]):
        yt = ta["yield_tech"]
        add(ta["node"][yt], ta["yield_product"], ta["yield_gamma"] * np.asarray(alloc.xi, float)[yt])
    for e, v in zip(plan.agg_edges, agg_flow):
        bal[e.dst_part, e.product] += v
        bal[e.src_part, e.product] -= v
        mag[e.dst_part, e.product] += abs(v)
        mag[e.src_part, e.product] += abs(v)
    resid = np.abs(bal)
    for c, p in np.argwhere(resid > tol * (1 + mag)):
        viol.append(f"aggregated balance (partition {c}, product {p}) residual {bal[c, p]:.9g}")

    y = np.asarray(alloc.y, float)
    xi = np.asarray(alloc.xi, float)
    cap = ta["unit_capacity"] * y
    for t in np.flatnonzero(xi > cap + tol * (1 + cap)):
        viol.append(f"technology {t} processes {xi[t]:.9g} above built capacity {cap[t]:.9g}")

    full_w = evaluate_welfare(inst, alloc)
    coarse_w = coarse_welfare(inst, plan, alloc, agg_flow)
    if coarse_w < full_w - tol * (1 + abs(full_w)):
        viol.append(f"coarse welfare {coarse_w:.12g} below original welfare {full_w:.12g}")
    return LiftReport(not viol, agg_flow, full_w, coarse_w, viol, float(resid.max(initial=0.0)))


def lift_vector(prob: MilpProblem, inst: SupplyChainInstance, alloc: Allocation, agg_flow: np.ndarray) -> np.ndarray:
    """Column vector of a coarse problem holding a lifted allocation."""
    x = np.zeros(prob.n_vars)
    sources = {SUPPLY: alloc.s, DEMAND: alloc.d, PROCESS: alloc.xi, BUILD: alloc.y, AGG_FLOW: agg_flow}
    for kind, values in sources.items():
        cols, ids = prob.columns(kind)
        x[cols] = np.asarray(values, float)[ids]
    return x


@dataclass
class TrialResult:
    trial_index: int
    seed: int
    status: str
    welfare: float | None = None
    solve_seconds: float = 0.0
    n_vars: int = 0
    n_agg_edges: int = 0
    message: str = ""
    plan: CoarsePlan | None = None

    @property
    def ok(self) -> bool:
        return self.welfare is not None


@dataclass
class UpperBoundStats:
    trials: list[TrialResult]
    best: float | None
    mean: float
    sd: float
    ci95: float
    best_plan: CoarsePlan | None = None
    best_trial: int | None = None
    partitions: int = 0

    @property
    def welfares(self) -> list[float]:
        return [t.welfare for t in self.trials if t.ok]

    @property
    def failures(self) -> list[TrialResult]:
        return [t for t in self.trials if not t.ok]

    @property
    def avg_solve_seconds(self) -> float:
        return float(np.mean([t.solve_seconds for t in self.trials])) if self.trials else math.nan


def _run_trial(inst, C, index, seed, params, backend, distance) -> TrialResult:
    plan = build_plan(inst, C, seed, distance)
    prob = formulate_coarse(inst, plan)
    try:
        res = solve(prob, params, backend)
    except SolverError as exc:
        log.warning("upper-bound trial %d failed: %s", index, exc)
        return TrialResult(index, seed, "error", n_vars=prob.n_vars, n_agg_edges=plan.n_agg_edges,
                           message=str(exc))
    out = TrialResult(index, seed, res.status.value, solve_seconds=res.wall_time, n_vars=prob.n_vars,
                      n_agg_edges=plan.n_agg_edges, message=str(res.message), plan=plan)
    # a time-limited coarse solve certifies only its dual bound, not its incumbent
    ub = res.upper_bound
    if ub is not None:
        if res.status.has_solution:
            extract_allocation(inst, prob, res)
        out.welfare = float(ub)
    return out


def upper_bound_run(inst: SupplyChainInstance, C: int, num_trials: int, params: SolverParams | None = None,
                    backend: str | Backend | None = None, base_seed: int = 0, workers: int = 1,
                    distance: DistanceFn = euclidean) -> UpperBoundStats:
    """Run ``num_trials`` pivot-draw/aggregate/solve pipelines; ``best`` is the smallest bound."""
    if num_trials < 1:
        raise ValueError("num_trials must be at least 1")
    params = params or SolverParams()
    jobs = [(inst, C, i, base_seed + i, params, backend, distance) for i in range(num_trials)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(lambda j: _run_trial(*j), jobs))
    else:
        trials = [_run_trial(*j) for j in jobs]
    trials.sort(key=lambda t: t.trial_index)

    good = [t for t in trials if t.ok]
    summary = summarize([t.welfare for t in good])
    best = min(good, key=lambda t: (t.welfare, t.trial_index)) if good else None
    for t in trials:
        if t is not best:
            t.plan = None
    return UpperBoundStats(
        trials=trials,
        best=best.welfare if best else None,
        mean=summary.mean,
        sd=summary.sd,
        ci95=summary.ci95,
        best_plan=best.plan if best else None,
        best_trial=best.trial_index if best else None,
        partitions=C,
    )
