"""Edge sampling: restricted models whose optima are feasible lower bounds.

Dropping an edge from the model is the same as forcing its flow to zero, so
every restricted solution, padded with zeros, is feasible in the original
instance and its welfare bounds the true optimum from below.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .milp import (
    ArcTable,
    Backend,
    MilpProblem,
    SolverError,
    SolverParams,
    assemble,
    extract_allocation,
    solve,
)
from .model import Allocation, SupplyChainInstance
from .stats import summarize

log = logging.getLogger(__name__)

SAMPLING_MODES = ("uniform", "stratified", "pair")


@dataclass(frozen=True, eq=False)
class EdgeSample:
    """One draw: sorted arrays of active and removed edge ids."""

    active: np.ndarray
    removed: np.ndarray
    seed: int
    draw_index: int = 0
    mode: str = "uniform"

    @property
    def size(self) -> int:
        return len(self.active)

    def __eq__(self, other):
        if not isinstance(other, EdgeSample):
            return NotImplemented
        return (np.array_equal(self.active, other.active) and np.array_equal(self.removed, other.removed)
                and (self.seed, self.draw_index, self.mode) == (other.seed, other.draw_index, other.mode))


def _stratified_quota(counts: np.ndarray, a: int) -> np.ndarray:
    """Spread ``a`` as evenly as possible over groups capped by ``counts``."""
    quota = np.zeros_like(counts)
    left = a
    open_ = counts > 0
    while left > 0 and open_.any():
        idx = np.flatnonzero(open_)
        share, extra = divmod(left, len(idx))
        give = np.full(len(idx), share)
        give[:extra] += 1
        give = np.minimum(give, counts[idx] - quota[idx])
        quota[idx] += give
        left -= int(give.sum())
        open_ = quota < counts
    return quota


def sample_universe(inst: SupplyChainInstance, mode: str = "uniform") -> int:
    """Largest valid sample size: edges, or distinct node pairs in ``pair`` mode."""
    if mode == "pair":
        ea = inst.edge_arrays
        return len(np.unique(np.column_stack([ea["src"], ea["dst"]]), axis=0))
    return inst.n_edges


def sample_edges(inst: SupplyChainInstance, a: int, rng_seed: int, draw_index: int = 0,
                 mode: str = "uniform") -> EdgeSample:
    """Draw ``a`` active edges uniformly without replacement.

    ``uniform`` takes the first ``a`` entries of a seeded permutation, so for
    a fixed seed a smaller sample is always contained in a larger one.
    ``stratified`` gives every product an equal quota.  ``pair`` samples
    ``a`` ordered node pairs and activates every product edge on them; there
    ``a`` counts pairs, not edges.
    """
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    L = inst.n_edges
    rng = np.random.default_rng(rng_seed)
    if mode == "pair":
        ea = inst.edge_arrays
        pairs, pair_of_edge = np.unique(np.column_stack([ea["src"], ea["dst"]]), axis=0, return_inverse=True)
        if not 0 <= a <= len(pairs):
            raise ValueError(f"pair sample size {a} outside [0, {len(pairs)}]")
        chosen = rng.permutation(len(pairs))[:a]
        mask = np.isin(pair_of_edge.ravel(), chosen)
    else:
        if not 0 <= a <= L:
            raise ValueError(f"sample size {a} outside [0, {L}]")
        mask = np.zeros(L, dtype=bool)
        if mode == "uniform":
            mask[rng.permutation(L)[:a]] = True
        else:
            prods = inst.edge_arrays["product"]
            counts = np.bincount(prods, minlength=inst.n_products)
            for p, q in enumerate(_stratified_quota(counts, a)):
                members = np.flatnonzero(prods == p)
                mask[members[rng.permutation(len(members))[:q]]] = True
    return EdgeSample(np.flatnonzero(mask), np.flatnonzero(~mask), rng_seed, draw_index, mode)


def formulate_sampled(inst: SupplyChainInstance, sample: EdgeSample) -> MilpProblem:
    """The full model with every removed edge's flow variable left out."""
    both = np.concatenate([sample.active, sample.removed])
    if len(both) != inst.n_edges or not np.array_equal(np.sort(both), np.arange(inst.n_edges)):
        raise ValueError("sample does not partition the instance's edge set")
    return assemble(inst, ArcTable.from_edges(inst, sample.active),
                    name=f"{inst.name or 'instance'}-sampled-{sample.draw_index}")


@dataclass
class DrawResult:
    draw_index: int
    seed: int
    status: str
    welfare: float | None = None
    solve_seconds: float = 0.0
    n_vars: int = 0
    message: str = ""
    allocation: Allocation | None = None

    @property
    def ok(self) -> bool:
        return self.welfare is not None


@dataclass
class LowerBoundStats:
    draws: list[DrawResult]
    best: float | None
    mean: float
    sd: float
    ci95: float
    best_allocation: Allocation | None = None
    best_draw: int | None = None
    edges: int = 0

    @property
    def welfares(self) -> list[float]:
        return [d.welfare for d in self.draws if d.ok]

    @property
    def failures(self) -> list[DrawResult]:
        return [d for d in self.draws if not d.ok]

    @property
    def avg_solve_seconds(self) -> float:
        return float(np.mean([d.solve_seconds for d in self.draws])) if self.draws else math.nan


def _run_draw(inst, a, omega, seed, params, backend, mode) -> DrawResult:
    sample = sample_edges(inst, a, seed, omega, mode)
    prob = formulate_sampled(inst, sample)
    try:
        res = solve(prob, params, backend)
    except SolverError as exc:
        log.warning("lower-bound draw %d failed: %s", omega, exc)
        return DrawResult(omega, seed, "error", n_vars=prob.n_vars, message=str(exc))
    out = DrawResult(omega, seed, res.status.value, solve_seconds=res.wall_time, n_vars=prob.n_vars,
                     message=str(res.message))
    if res.status.has_solution:
        # any feasible point of the restriction is feasible for the original
        alloc = extract_allocation(inst, prob, res)
        out.welfare = alloc.welfare
        out.allocation = alloc
    return out


def lower_bound_run(inst: SupplyChainInstance, a: int, num_draws: int, params: SolverParams | None = None,
                    backend: str | Backend | None = None, base_seed: int = 0, workers: int = 1,
                    mode: str = "uniform") -> LowerBoundStats:
    """Solve ``num_draws`` restricted models with seeds ``base_seed + draw``.

    Failed draws stay in ``draws`` with ``welfare=None``; statistics use only
    the draws that produced a solution.
    """
    if num_draws < 1:
        raise ValueError("num_draws must be at least 1")
    params = params or SolverParams()
    jobs = [(inst, a, w, base_seed + w, params, backend, mode) for w in range(num_draws)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(lambda j: _run_draw(*j), jobs))
    else:
        draws = [_run_draw(*j) for j in jobs]
    draws.sort(key=lambda d: d.draw_index)

    good = [d for d in draws if d.ok]
    summary = summarize([d.welfare for d in good])
    best = max(good, key=lambda d: (d.welfare, -d.draw_index)) if good else None
    for d in draws:
        if d is not best:
            d.allocation = None
    return LowerBoundStats(
        draws=draws,
        best=best.welfare if best else None,
        mean=summary.mean,
        sd=summary.sd,
        ci95=summary.ci95,
        best_allocation=best.allocation if best else None,
        best_draw=best.draw_index if best else None,
        edges=a,
    )


__all__ = [
    "EdgeSample", "DrawResult", "LowerBoundStats", "sample_edges", "formulate_sampled",
    "lower_bound_run", "sample_universe", "SAMPLING_MODES",
]
