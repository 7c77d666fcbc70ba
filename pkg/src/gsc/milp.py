"""Solver-agnostic MILP container, model assembly and solver backends.

The welfare problem and its sampled and coarse variants all share one
shape: supply, demand, arc-flow, processing and build variables, one balance
row per (group, product) and one build-coupling row per technology.  A
"group" is a node for the full and sampled models and a partition for the
coarse model; an "arc" is an edge or an aggregated edge.  ``assemble`` builds
that shape once for all three.
"""

from __future__ import annotations

import enum
import hashlib
import io
import math
import os
import resource
import time
from dataclasses import dataclass
from typing import IO, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import Allocation, SupplyChainInstance, evaluate_welfare, validate_instance

# Semantic tags for variables, stored as small ints in ``MilpProblem.var_kind``.
KINDS = ("supply", "demand", "flow", "process", "build", "agg_flow")
SUPPLY, DEMAND, FLOW, PROCESS, BUILD, AGG_FLOW = range(len(KINDS))
_PREFIX = ("s", "d", "f", "xi", "y", "fk")

EQ, LE, GE = "=", "<=", ">="

BACKEND_ENV = "GSC_BACKEND"


class InvalidInstanceError(ValueError):
    pass


class BackendUnavailableError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


class NoSolutionError(RuntimeError):
    pass


class ReconciliationError(RuntimeError):
    pass


@dataclass(frozen=True)
class VarRef:
    index: int
    kind: str  # "continuous" | "integer"
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class MilpProblem:
    """A maximization MILP in row form.

    Rows are ``A[i] @ x  (sense[i])  rhs[i]``.  Variable bounds live in
    ``lb``/``ub``, never as rows.  ``var_kind``/``var_id`` give each column
    its semantic tag, e.g. ``(FLOW, 12)`` is the flow on edge 12.
    """

    c: np.ndarray
    A: sp.csr_matrix
    sense: tuple[str, ...]
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    var_kind: np.ndarray
    var_id: np.ndarray
    name: str = ""

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    @property
    def n_integer(self) -> int:
        return int(self.integer.sum())

    @property
    def n_continuous(self) -> int:
        return self.n_vars - self.n_integer

    @property
    def n_equalities(self) -> int:
        return sum(1 for s in self.sense if s == EQ)

    @property
    def n_inequalities(self) -> int:
        return self.n_rows - self.n_equalities

    @property
    def variables(self) -> list[VarRef]:
        return [
            VarRef(j, "integer" if self.integer[j] else "continuous", float(self.lb[j]), float(self.ub[j]))
            for j in range(self.n_vars)
        ]

    @property
    def var_labels(self) -> dict[int, tuple[str, int]]:
        return {j: self.label(j) for j in range(self.n_vars)}

    def label(self, j: int) -> tuple[str, int]:
        return KINDS[self.var_kind[j]], int(self.var_id[j])

    def var_name(self, j: int) -> str:
        return f"{_PREFIX[self.var_kind[j]]}_{self.var_id[j]}"

    def columns(self, kind: int) -> tuple[np.ndarray, np.ndarray]:
        """Column positions and entity ids for one variable kind."""
        cols = np.flatnonzero(self.var_kind == kind)
        return cols, self.var_id[cols]

    def has_kind(self, kind: int) -> bool:
        return bool(np.any(self.var_kind == kind))

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(x, float)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest row or bound violation at ``x`` (absolute)."""
        x = np.asarray(x, float)
        act = self.row_activity(x)
        sense = np.array(self.sense, dtype=object)
        diff = act - self.rhs
        viol = np.where(sense == EQ, np.abs(diff), np.where(sense == LE, diff, -diff))
        worst = float(viol.max(initial=0.0))
        if self.n_vars:
            worst = max(worst, float(np.max(self.lb - x)), float(np.max(x - self.ub)))
        return worst

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.c, self.A.indptr, self.A.indices, self.A.data, self.rhs, self.lb, self.ub,
                    self.integer, self.var_kind, self.var_id):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("".join(self.sense).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ArcTable:
    """Transport arcs between row groups; one flow variable per arc."""

    src: np.ndarray
    dst: np.ndarray
    product: np.ndarray
    capacity: np.ndarray
    cost: np.ndarray
    ids: np.ndarray
    kind: int = FLOW

    @classmethod
    def from_edges(cls, inst: SupplyChainInstance, edge_ids=None) -> "ArcTable":
        ea = inst.edge_arrays
        ids = np.arange(inst.n_edges) if edge_ids is None else np.asarray(edge_ids, dtype=np.int64)
        return cls(ea["src"][ids], ea["dst"][ids], ea["product"][ids],
                   ea["capacity"][ids], ea["cost"][ids], ids.astype(np.int64))


def assemble(
    inst: SupplyChainInstance,
    arcs: ArcTable,
    group_of_node: np.ndarray | None = None,
    n_groups: int | None = None,
    name: str = "",
) -> MilpProblem:
    """Build the welfare-maximization model over row groups.

    Column order is suppliers, consumers, arcs (in the order given),
    processing amounts, build counts.  Rows are the ``n_groups * |P|``
    balances ordered by (group, product), then one coupling row
    ``xi_t - unit_capacity_t * y_t <= 0`` per technology.  Balance rows with
    no participants are kept so row counts match the closed-form sizes.
    """
    if group_of_node is None:
        group_of_node = np.arange(inst.n_nodes)
        n_groups = inst.n_nodes
    group_of_node = np.asarray(group_of_node, dtype=np.int64)
    P = inst.n_products
    sa, ca, ta = inst.supplier_arrays, inst.consumer_arrays, inst.tech_arrays
    ns, nd, na, nt = len(inst.suppliers), len(inst.consumers), len(arcs.ids), len(inst.technologies)

    off_d = ns
    off_a = off_d + nd
    off_x = off_a + na
    off_y = off_x + nt
    n = off_y + nt
    n_bal = n_groups * P

    def row(nodes, prods):
        return group_of_node[nodes] * P + prods

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(np.asarray(r, dtype=np.int64))
        cols.append(np.asarray(c, dtype=np.int64))
        vals.append(np.broadcast_to(np.asarray(v, float), np.shape(r)))

    put(row(sa["node"], sa["product"]), np.arange(ns), 1.0)
    put(row(ca["node"], ca["product"]), off_d + np.arange(nd), -1.0)
    arc_cols = off_a + np.arange(na)
    put(arcs.dst * P + arcs.product, arc_cols, 1.0)
    put(arcs.src * P + arcs.product, arc_cols, -1.0)
    if len(ta["yield_tech"]):
        put(row(ta["node"][ta["yield_tech"]], ta["yield_product"]),
            off_x + ta["yield_tech"], ta["yield_gamma"])
    put(n_bal + np.arange(nt), off_x + np.arange(nt), 1.0)
    put(n_bal + np.arange(nt), off_y + np.arange(nt), -ta["unit_capacity"])

    m = n_bal + nt
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n)
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()

    c = np.concatenate([-sa["cost"], ca["value"], -arcs.cost, -ta["op_cost"], -ta["install_cost"]])
    ub = np.concatenate([sa["capacity"], ca["capacity"], arcs.capacity,
                         ta["unit_capacity"] * ta["max_facilities"], ta["max_facilities"].astype(float)])
    integer = np.zeros(n, dtype=bool)
    integer[off_y:] = True
    var_kind = np.concatenate([
        np.full(ns, SUPPLY), np.full(nd, DEMAND), np.full(na, arcs.kind),
        np.full(nt, PROCESS), np.full(nt, BUILD),
    ]).astype(np.int8)
    var_id = np.concatenate([np.arange(ns), np.arange(nd), arcs.ids, np.arange(nt), np.arange(nt)]).astype(np.int64)
    return MilpProblem(
        c=c.astype(float),
        A=A,
        sense=(EQ,) * n_bal + (LE,) * nt,
        rhs=np.zeros(m),
        lb=np.zeros(n),
        ub=ub.astype(float),
        integer=integer,
        var_kind=var_kind,
        var_id=var_id,
        name=name,
    )


def formulate_full(inst: SupplyChainInstance) -> MilpProblem:
    violations = validate_instance(inst)
    if violations:
        raise InvalidInstanceError("; ".join(map(str, violations[:5])))
    return assemble(inst, ArcTable.from_edges(inst), name=inst.name or "full")


def model_size(n_suppliers, n_consumers, n_arcs, n_techs, n_groups, n_products) -> dict[str, int]:
    """Closed-form variable and row counts of an assembled model."""
    return {
        "continuous": n_suppliers + n_consumers + n_arcs + n_techs,
        "integer": n_techs,
        "equalities": n_groups * n_products,
        "inequalities": n_techs,
    }


def problem_size(prob: MilpProblem) -> dict[str, int]:
    return {
        "continuous": prob.n_continuous,
        "integer": prob.n_integer,
        "equalities": prob.n_equalities,
        "inequalities": prob.n_inequalities,
    }


# ---------------------------------------------------------------- solving


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible-with-gap"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    TIME_LIMIT = "time-limit"
    MEMORY_LIMIT = "memory-limit"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


@dataclass(frozen=True)
class SolverParams:
    time_limit: float | None = None
    mip_gap: float = 0.0
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        for k in ("mip_gap", "threads", "seed"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.time_limit is not None and self.time_limit < 0:
            raise ValueError("time_limit must be nonnegative")


@dataclass
class SolveResult:
    status: Status
    objective: float | None = None
    x: np.ndarray | None = None
    mip_gap: float | None = None
    bound: float | None = None  # best proven upper bound on the maximum
    wall_time: float = 0.0
    peak_memory: int | None = None  # bytes, process-wide high-water mark
    backend: str = ""
    message: str = ""

    def __post_init__(self):
        self.status = Status(self.status)
        if self.status.has_solution != (self.objective is not None):
            raise ValueError(f"objective must be present iff status has a solution ({self.status.value})")

    @property
    def upper_bound(self) -> float | None:
        """A value no smaller than the true optimum, when one is known."""
        if self.status is Status.OPTIMAL:
            return self.objective
        return self.bound


class Backend(Protocol):
    name: str

    def solve(self, prob: MilpProblem, params: SolverParams) -> SolveResult: ...


def _peak_memory() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _row_bounds(prob: MilpProblem) -> tuple[np.ndarray, np.ndarray]:
    sense = np.array(prob.sense, dtype=object)
    lo = np.where(sense == LE, -np.inf, prob.rhs)
    hi = np.where(sense == GE, np.inf, prob.rhs)
    return lo.astype(float), hi.astype(float)


class HighsBackend:
    """HiGHS through ``scipy.optimize.milp``.

    scipy exposes neither a thread count nor a random seed for HiGHS, so
    those parameters are accepted and ignored.
    """

    name = "highs"

    def solve(self, prob: MilpProblem, params: SolverParams) -> SolveResult:
        options = {"disp": False, "presolve": True, "mip_rel_gap": params.mip_gap}
        if params.time_limit is not None:
            options["time_limit"] = max(params.time_limit, 1e-6)
        lo, hi = _row_bounds(prob)
        constraints = [LinearConstraint(prob.A, lo, hi)] if prob.n_rows else []
        res = milp(
            -prob.c,
            integrality=prob.integer.astype(np.uint8),
            bounds=Bounds(prob.lb, prob.ub),
            constraints=constraints,
            options=options,
        )
        dual = getattr(res, "mip_dual_bound", None)
        bound = -dual if dual is not None and np.isfinite(dual) else None
        gap = getattr(res, "mip_gap", None)
        if res.status == 0:
            obj = float(-res.fun)
            return SolveResult(Status.OPTIMAL, obj, np.asarray(res.x), gap, bound if bound is not None else obj,
                               message=res.message)
        if res.status == 1:
            if res.x is not None:
                return SolveResult(Status.FEASIBLE, float(-res.fun), np.asarray(res.x), gap, bound,
                                   message=res.message)
            return SolveResult(Status.TIME_LIMIT, bound=bound, message=res.message)
        if res.status == 2:
            return SolveResult(Status.INFEASIBLE, message=res.message)
        if res.status == 3:
            return SolveResult(Status.UNBOUNDED, message=res.message)
        raise SolverError(f"HiGHS failed on {prob.name or 'problem'}: {res.message}")


class BranchAndBoundBackend:
    """Depth-first branch and bound over LP relaxations.

    Meant for small models, as an independent check on the integer handling
    of the main backend.
    """

    name = "bnb"

    def __init__(self, int_tol: float = 1e-6, max_nodes: int = 100_000):
        self.int_tol = int_tol
        self.max_nodes = max_nodes

    def solve(self, prob: MilpProblem, params: SolverParams) -> SolveResult:
        start = time.perf_counter()
        sense = np.array(prob.sense, dtype=object)
        A = prob.A.tocsr()
        eq = sense == EQ
        A_eq, b_eq = (A[eq], prob.rhs[eq]) if eq.any() else (None, None)
        ub_rows = sp.vstack([A[sense == LE], -A[sense == GE]]).tocsr()
        b_ub = np.concatenate([prob.rhs[sense == LE], -prob.rhs[sense == GE]])
        if ub_rows.shape[0] == 0:
            ub_rows, b_ub = None, None
        int_cols = np.flatnonzero(prob.integer)

        def relax(lb, ub):
            return linprog(-prob.c, A_ub=ub_rows, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                           bounds=np.column_stack([lb, ub]), method="highs")

        best_x, best = None, -math.inf
        stack = [(prob.lb.copy(), prob.ub.copy(), math.inf)]
        nodes = 0
        abs_tol = 1e-9
        while stack:
            if params.time_limit is not None and time.perf_counter() - start > params.time_limit:
                break
            if nodes >= self.max_nodes:
                break
            lb, ub, parent = stack.pop()
            if parent <= best + abs_tol + params.mip_gap * abs(best):
                continue
            nodes += 1
            r = relax(lb, ub)
            if r.status == 2:
                continue
            if r.status == 3:
                return SolveResult(Status.UNBOUNDED, backend=self.name, message="LP relaxation unbounded")
            if r.status != 0:
                raise SolverError(f"LP relaxation failed: {r.message}")
            obj = -r.fun
            if obj <= best + abs_tol + params.mip_gap * abs(best):
                continue
            x = r.x
            frac = np.abs(x[int_cols] - np.round(x[int_cols]))
            if not len(int_cols) or frac.max() <= self.int_tol:
                x = x.copy()
                x[int_cols] = np.round(x[int_cols])
                best_x, best = x, float(prob.c @ x)
                continue
            j = int_cols[int(np.argmax(frac))]
            down_ub = ub.copy()
            down_ub[j] = math.floor(x[j])
            up_lb = lb.copy()
            up_lb[j] = math.ceil(x[j])
            # up branch is popped first
            stack.append((lb, down_ub, obj))
            stack.append((up_lb, ub, obj))

        if stack:
            open_bound = max(p for _, _, p in stack)
            bound = max(best, open_bound)
            if best_x is None:
                return SolveResult(Status.TIME_LIMIT, bound=bound, backend=self.name)
            gap = (bound - best) / max(abs(bound), 1e-12)
            return SolveResult(Status.FEASIBLE, best, best_x, gap, bound, backend=self.name)
        if best_x is None:
            return SolveResult(Status.INFEASIBLE, backend=self.name)
        return SolveResult(Status.OPTIMAL, best, best_x, 0.0, best, backend=self.name)


_BACKENDS = {"highs": HighsBackend, "bnb": BranchAndBoundBackend}


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(backend: str | Backend | None = None) -> Backend:
    """Resolve a backend object from a name, an instance or the environment."""
    if backend is None:
        backend = os.environ.get(BACKEND_ENV, "highs")
    if isinstance(backend, str):
        try:
            return _BACKENDS[backend.lower()]()
        except KeyError:
            raise BackendUnavailableError(
                f"unknown solver backend {backend!r}; available: {', '.join(available_backends())}"
            ) from None
    return backend


def _solve_empty(prob: MilpProblem) -> SolveResult:
    if prob.max_violation(np.zeros(0)) > 0:
        return SolveResult(Status.INFEASIBLE, message="empty problem with unsatisfiable rows")
    return SolveResult(Status.OPTIMAL, 0.0, np.zeros(0), 0.0, 0.0)


def solve(prob: MilpProblem, params: SolverParams | None = None, backend: str | Backend | None = None) -> SolveResult:
    params = params or SolverParams()
    impl = get_backend(backend)
    start = time.perf_counter()
    try:
        if prob.n_vars == 0:
            result = _solve_empty(prob)
        else:
            result = impl.solve(prob, params)
    except MemoryError as exc:
        result = SolveResult(Status.MEMORY_LIMIT, message=str(exc))
    except SolverError:
        raise
    except Exception as exc:
        raise SolverError(f"backend {impl.name!r} failed on {prob.name or 'problem'}: {exc}") from exc
    result.wall_time = time.perf_counter() - start
    result.peak_memory = _peak_memory()
    result.backend = impl.name
    return result


def extract_allocation(inst: SupplyChainInstance, prob: MilpProblem, result: SolveResult,
                       rtol: float = 1e-6) -> Allocation:
    """Map a solution vector back onto the instance's entities.

    Flows of edges absent from ``prob`` are zero.  For coarse models the
    aggregated flows are kept in ``agg_flow`` and per-edge flows stay zero.
    """
    if not result.status.has_solution or result.x is None:
        raise NoSolutionError(f"no solution to extract (status {result.status.value})")
    x = np.asarray(result.x, float).copy()
    x[prob.integer] = np.round(x[prob.integer])
    x = np.clip(x, prob.lb, prob.ub)

    alloc = Allocation.zeros(inst)
    for kind, target in ((SUPPLY, alloc.s), (DEMAND, alloc.d), (FLOW, alloc.f), (PROCESS, alloc.xi)):
        cols, ids = prob.columns(kind)
        target[ids] = x[cols]
    cols, ids = prob.columns(BUILD)
    alloc.y[ids] = x[cols].astype(np.int64)

    if prob.has_kind(AGG_FLOW):
        cols, ids = prob.columns(AGG_FLOW)
        alloc.agg_flow = np.zeros(int(ids.max()) + 1 if len(ids) else 0)
        alloc.agg_flow[ids] = x[cols]
        welfare = float(prob.c @ x)
    else:
        welfare = evaluate_welfare(inst, alloc)
    if abs(welfare - result.objective) > rtol * (1 + abs(result.objective)):
        raise ReconciliationError(
            f"recomputed welfare {welfare!r} disagrees with solver objective {result.objective!r}"
        )
    alloc.welfare = welfare
    return alloc


# ---------------------------------------------------------------- export


def _fmt(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def write_lp(prob: MilpProblem, dest: str | os.PathLike | IO[str]) -> None:
    """Write the problem in CPLEX LP text format.

    Variables are named ``<tag>_<id>`` (``s``, ``d``, ``f``, ``xi``, ``y``,
    ``fk``); balance rows are ``bal_<row>`` and coupling rows ``cap_<tech>``.
    """
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as fh:
            write_lp(prob, fh)
        return
    names = [prob.var_name(j) for j in range(prob.n_vars)]

    def expr(idx, coef):
        parts = []
        for j, v in zip(idx, coef):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_fmt(abs(v))} {names[j]}")
        if not parts:
            return "0"
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else "-" + text[1:]

    out = dest
    out.write(f"\\ {prob.name or 'problem'}\nMaximize\n")
    nz = np.flatnonzero(prob.c)
    out.write(f" obj: {expr(nz, prob.c[nz])}\nSubject To\n")
    n_tech = int((prob.var_kind == BUILD).sum())
    n_bal = prob.n_rows - n_tech
    for i in range(prob.n_rows):
        lo, hi = prob.A.indptr[i], prob.A.indptr[i + 1]
        label = f"bal_{i}" if i < n_bal else f"cap_{i - n_bal}"
        body = expr(prob.A.indices[lo:hi], prob.A.data[lo:hi])
        out.write(f" {label}: {body} {prob.sense[i]} {_fmt(prob.rhs[i])}\n")
    out.write("Bounds\n")
    for j in range(prob.n_vars):
        out.write(f" {_fmt(prob.lb[j])} <= {names[j]} <= {_fmt(prob.ub[j])}\n")
    ints = np.flatnonzero(prob.integer)
    if len(ints):
        out.write("General\n " + " ".join(names[j] for j in ints) + "\n")
    out.write("End\n")


def lp_text(prob: MilpProblem) -> str:
    buf = io.StringIO()
    write_lp(prob, buf)
    return buf.getvalue()
