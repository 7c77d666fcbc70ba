"""Multi-level bounding protocol: sample for lower bounds, coarsen for upper bounds."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coarsening import UpperBoundStats, upper_bound_run
from .milp import Backend, SolverParams, get_backend
from .model import SupplyChainInstance
from .sampling import LowerBoundStats, lower_bound_run, sample_universe

log = logging.getLogger(__name__)

MAX = "max"


class UndefinedGapError(ZeroDivisionError):
    pass


class LevelFailedError(RuntimeError):
    """A level produced no usable lower or upper bound."""


def gap(lb: float, ub: float, tol: float = 1e-9) -> float:
    """Relative optimality gap in percent, measured against the upper bound."""
    if lb > ub + tol * (1 + abs(ub)):
        raise ValueError(f"lower bound {lb!r} exceeds upper bound {ub!r}")
    if ub == 0:
        if lb == 0:
            return 0.0
        raise UndefinedGapError("gap is undefined for a zero upper bound")
    return max(0.0, 100.0 * ((ub - lb) / abs(ub)))


def format_gap(pct: float) -> str:
    """Three significant figures, e.g. ``0.57%`` or ``40.7%``."""
    if math.isnan(pct):
        return "nan"
    if abs(pct) < 5e-12:
        return "0%"
    return f"{pct:.3g}%"


@dataclass(frozen=True)
class LevelSpec:
    """Sample size, partition count and draws for one level.

    ``edges`` and ``partitions`` may be the string ``"max"``, resolved
    against an instance by :meth:`resolve`.
    """

    edges: int | str
    partitions: int | str
    draws: int = 10

    @classmethod
    def parse(cls, text: str) -> "LevelSpec":
        parts = text.strip().split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"level {text!r} is not of the form edges:partitions[:draws]")

        def num(tok, what):
            tok = tok.strip().lower()
            if tok == MAX:
                return MAX
            try:
                v = int(tok)
            except ValueError:
                raise ValueError(f"level {text!r}: {what} must be an integer or 'max'") from None
            if v < 0:
                raise ValueError(f"level {text!r}: {what} must be nonnegative")
            return v

        draws = num(parts[2], "draws") if len(parts) == 3 else 10
        if draws == MAX or draws < 1:
            raise ValueError(f"level {text!r}: draws must be a positive integer")
        return cls(num(parts[0], "edges"), num(parts[1], "partitions"), draws)

    def resolve(self, inst: SupplyChainInstance, max_edges: int | None = None) -> "LevelSpec":
        max_edges = inst.n_edges if max_edges is None else max_edges
        edges = max_edges if self.edges == MAX else self.edges
        parts = inst.n_nodes if self.partitions == MAX else self.partitions
        if not 0 <= edges <= max_edges:
            raise ValueError(f"level asks for a sample of {edges}; at most {max_edges} available")
        if not 1 <= parts <= inst.n_nodes:
            raise ValueError(f"level asks for {parts} partitions; instance has {inst.n_nodes} nodes")
        if self.draws < 1:
            raise ValueError("draws must be at least 1")
        return LevelSpec(edges, parts, self.draws)

    def __str__(self):
        return f"{self.edges}:{self.partitions}:{self.draws}"


def parse_levels(text: str) -> list[LevelSpec]:
    levels = [LevelSpec.parse(tok) for tok in text.split(",") if tok.strip()]
    if not levels:
        raise ValueError("at least one level is required")
    return levels


def level_seeds(seed: int, level: int) -> tuple[int, int]:
    """Base seeds (sampling, coarsening) for one level.

    Derived from (seed, level) alone, so inserting or appending levels never
    changes the draws of the others.
    """
    lb_seed, ub_seed = np.random.SeedSequence([seed, level]).generate_state(2, dtype=np.uint32)
    return int(lb_seed), int(ub_seed)


@dataclass
class LevelResult:
    level: int
    spec: LevelSpec
    lower: LowerBoundStats
    upper: UpperBoundStats
    lb_seed: int
    ub_seed: int
    best_lb: float  # running best over this and earlier levels
    best_ub: float
    gap: float  # of the running bounds, percent
    level_gap: float  # of this level's own bounds, percent
    lb_seconds: float = 0.0
    ub_seconds: float = 0.0


@dataclass
class BoundReport:
    levels: list[LevelResult]
    seed: int
    params: SolverParams
    backend: str
    instance: str = ""
    sampling_mode: str = "uniform"
    gap_tol: float = 0.0
    stopped_early: str = ""
    wall_time: dict[str, float] = field(default_factory=dict)

    @property
    def best_lb(self) -> float:
        return self.levels[-1].best_lb

    @property
    def best_ub(self) -> float:
        return self.levels[-1].best_ub

    @property
    def final_gap(self) -> float:
        return self.levels[-1].gap

    @property
    def best_allocation(self):
        for lvl in reversed(self.levels):
            if lvl.lower.best == lvl.best_lb:
                return lvl.lower.best_allocation
        return None


def run_gsc(
    inst: SupplyChainInstance,
    levels: list[LevelSpec],
    params: SolverParams | None = None,
    backend: str | Backend | None = None,
    seed: int = 0,
    gap_tol: float = 0.0,
    time_budget: float | None = None,
    workers: int = 1,
    sampling_mode: str = "uniform",
) -> BoundReport:
    """Run every level in order, tracking running best bounds and their gap.

    Stops after a level whose running gap is at most ``gap_tol`` percent
    (only when ``gap_tol > 0``) or once ``time_budget`` seconds have passed.
    """
    if not levels:
        raise ValueError("at least one level is required")
    params = params or SolverParams()
    backend_name = get_backend(backend).name
    universe = sample_universe(inst, sampling_mode)
    resolved = [lv.resolve(inst, universe) for lv in levels]

    results: list[LevelResult] = []
    best_lb, best_ub = -math.inf, math.inf
    t_lb = t_ub = 0.0
    start = time.perf_counter()
    stopped = ""
    for i, spec in enumerate(resolved):
        lb_seed, ub_seed = level_seeds(seed, i)
        t0 = time.perf_counter()
        lower = lower_bound_run(inst, spec.edges, spec.draws, params, backend, lb_seed, workers, sampling_mode)
        t1 = time.perf_counter()
        upper = upper_bound_run(inst, spec.partitions, spec.draws, params, backend, ub_seed, workers)
        t2 = time.perf_counter()
        t_lb += t1 - t0
        t_ub += t2 - t1
        if lower.best is None or upper.best is None:
            msgs = [d.message for d in lower.failures] + [t.message for t in upper.failures]
            raise LevelFailedError(f"level {i + 1} ({spec}) produced no bound: " + "; ".join(msgs[:4]))
        best_lb = max(best_lb, lower.best)
        best_ub = min(best_ub, upper.best)
        res = LevelResult(
            level=i + 1, spec=spec, lower=lower, upper=upper, lb_seed=lb_seed, ub_seed=ub_seed,
            best_lb=best_lb, best_ub=best_ub, gap=gap(best_lb, best_ub, tol=1e-6),
            level_gap=gap(lower.best, upper.best, tol=1e-6), lb_seconds=t1 - t0, ub_seconds=t2 - t1,
        )
        results.append(res)
        log.info("level %d (%s): LB %.6g UB %.6g gap %s", res.level, spec, best_lb, best_ub, format_gap(res.gap))
        if gap_tol > 0 and res.gap <= gap_tol:
            stopped = f"gap {format_gap(res.gap)} within tolerance after level {res.level}"
            break
        if time_budget is not None and time.perf_counter() - start >= time_budget and i + 1 < len(resolved):
            stopped = f"time budget exhausted after level {res.level}"
            break
    return BoundReport(
        levels=results, seed=seed, params=params, backend=backend_name, instance=inst.name,
        sampling_mode=sampling_mode, gap_tol=gap_tol, stopped_early=stopped,
        wall_time={"lower": t_lb, "upper": t_ub, "total": time.perf_counter() - start},
    )
