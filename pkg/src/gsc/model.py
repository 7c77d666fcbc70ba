"""Supply-chain problem data, index tables, welfare and feasibility checks.

Entities carry dense integer ids (``0..n-1``); names are metadata only.  The
instance is frozen after construction and caches numpy views of the
participant attributes so that model builders can work column-wise.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Product:
    id: int
    name: str = ""


@dataclass(frozen=True)
class NodeSite:
    id: int
    coord: tuple[float, float] = (0.0, 0.0)
    name: str = ""


@dataclass(frozen=True)
class Supplier:
    id: int
    node: int
    product: int
    capacity: float
    cost: float


@dataclass(frozen=True)
class Consumer:
    id: int
    node: int
    product: int
    capacity: float
    value: float


@dataclass(frozen=True)
class Technology:
    """A conversion facility type installed at one node.

    ``yields`` maps product id to the units generated (positive) or consumed
    (negative) per unit of the reference product processed.  Products that
    are absent have yield zero.
    """

    id: int
    node: int
    ref_product: int
    yields: Mapping[int, float]
    unit_capacity: float
    max_facilities: int
    op_cost: float
    install_cost: float


@dataclass(frozen=True)
class TransportEdge:
    id: int
    src: int
    dst: int
    product: int
    capacity: float
    cost: float


@dataclass(frozen=True)
class IndexTables:
    """Participant lookups keyed by node and product.

    All values are sorted tuples of entity ids, so two tables built from the
    same participant lists compare equal.
    """

    suppliers_at: dict[tuple[int, int], tuple[int, ...]]
    consumers_at: dict[tuple[int, int], tuple[int, ...]]
    techs_at: dict[int, tuple[int, ...]]
    edges_in: dict[tuple[int, int], tuple[int, ...]]
    edges_out: dict[tuple[int, int], tuple[int, ...]]


def build_index(
    suppliers: Sequence[Supplier],
    consumers: Sequence[Consumer],
    technologies: Sequence[Technology],
    edges: Sequence[TransportEdge],
) -> IndexTables:
    sup = defaultdict(list)
    con = defaultdict(list)
    tec = defaultdict(list)
    ein = defaultdict(list)
    eout = defaultdict(list)
    for s in suppliers:
        sup[s.node, s.product].append(s.id)
    for c in consumers:
        con[c.node, c.product].append(c.id)
    for t in technologies:
        tec[t.node].append(t.id)
    for e in edges:
        ein[e.dst, e.product].append(e.id)
        eout[e.src, e.product].append(e.id)

    def freeze(d):
        return {k: tuple(sorted(v)) for k, v in sorted(d.items())}

    return IndexTables(freeze(sup), freeze(con), freeze(tec), freeze(ein), freeze(eout))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SupplyChainInstance:
    products: tuple[Product, ...]
    nodes: tuple[NodeSite, ...]
    suppliers: tuple[Supplier, ...] = ()
    consumers: tuple[Consumer, ...] = ()
    technologies: tuple[Technology, ...] = ()
    edges: tuple[TransportEdge, ...] = ()
    unique_edges: bool = False
    allow_self_loops: bool = False
    name: str = ""

    def __post_init__(self):
        for attr in ("products", "nodes", "suppliers", "consumers", "technologies", "edges"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_products(self) -> int:
        return len(self.products)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def index(self) -> IndexTables:
        return build_index(self.suppliers, self.consumers, self.technologies, self.edges)

    @cached_property
    def coords(self) -> np.ndarray:
        return _readonly(np.array([n.coord for n in self.nodes], dtype=float).reshape(-1, 2))

    # Column views used by the formulation code.
    @cached_property
    def supplier_arrays(self) -> dict[str, np.ndarray]:
        return _columns(self.suppliers, ("node", "product", "capacity", "cost"))

    @cached_property
    def consumer_arrays(self) -> dict[str, np.ndarray]:
        return _columns(self.consumers, ("node", "product", "capacity", "value"))

    @cached_property
    def edge_arrays(self) -> dict[str, np.ndarray]:
        return _columns(self.edges, ("src", "dst", "product", "capacity", "cost"))

    @cached_property
    def tech_arrays(self) -> dict[str, np.ndarray]:
        cols = _columns(
            self.technologies,
            ("node", "ref_product", "unit_capacity", "max_facilities", "op_cost", "install_cost"),
        )
        rows, prods, gammas = [], [], []
        for t in self.technologies:
            for p, g in sorted(t.yields.items()):
                if g != 0:
                    rows.append(t.id)
                    prods.append(p)
                    gammas.append(g)
        cols["yield_tech"] = _readonly(np.array(rows, dtype=np.int64))
        cols["yield_product"] = _readonly(np.array(prods, dtype=np.int64))
        cols["yield_gamma"] = _readonly(np.array(gammas, dtype=float))
        return cols


_INT_FIELDS = {"node", "product", "src", "dst", "ref_product", "max_facilities"}


def _columns(items, names) -> dict[str, np.ndarray]:
    out = {}
    for name in names:
        dtype = np.int64 if name in _INT_FIELDS else float
        out[name] = _readonly(np.array([getattr(x, name) for x in items], dtype=dtype))
    return out


@dataclass
class Allocation:
    """A decision vector over the original instance.

    ``agg_flow`` is only populated for solutions of coarse models, whose
    aggregated flows are never mapped back to individual edges.
    """

    s: np.ndarray
    d: np.ndarray
    f: np.ndarray
    xi: np.ndarray
    y: np.ndarray
    welfare: float = 0.0
    agg_flow: np.ndarray | None = None

    @classmethod
    def zeros(cls, inst: SupplyChainInstance) -> "Allocation":
        nt = len(inst.technologies)
        return cls(
            s=np.zeros(len(inst.suppliers)),
            d=np.zeros(len(inst.consumers)),
            f=np.zeros(inst.n_edges),
            xi=np.zeros(nt),
            y=np.zeros(nt, dtype=np.int64),
        )

    def scaled(self, factor: float) -> "Allocation":
        """Scale the continuous fields; ``y`` is kept."""
        return Allocation(
            s=self.s * factor,
            d=self.d * factor,
            f=self.f * factor,
            xi=self.xi * factor,
            y=self.y.copy(),
            welfare=self.welfare * factor,
        )


class DimensionError(ValueError):
    """Allocation vectors do not match the instance."""


@dataclass(frozen=True)
class Violation:
    entity: str
    id: int | tuple
    rule: str

    def __str__(self):
        return f"{self.entity} {self.id}: {self.rule}"


def validate_instance(inst: SupplyChainInstance) -> list[Violation]:
    """Return every broken data invariant; an empty list means valid."""
    out: list[Violation] = []
    n_nodes, n_prod = inst.n_nodes, inst.n_products

    for kind, items in (("product", inst.products), ("node", inst.nodes),
                        ("supplier", inst.suppliers), ("consumer", inst.consumers),
                        ("technology", inst.technologies), ("edge", inst.edges)):
        ids = [x.id for x in items]
        if ids != list(range(len(items))):
            out.append(Violation(kind, -1, "ids must be contiguous 0..n-1 in order"))

    def check_ref(entity, eid, node=None, product=None):
        if node is not None and not 0 <= node < n_nodes:
            out.append(Violation(entity, eid, f"unknown node {node}"))
        if product is not None and not 0 <= product < n_prod:
            out.append(Violation(entity, eid, f"unknown product {product}"))

    def nonneg(entity, eid, label, value):
        if not np.isfinite(value):
            out.append(Violation(entity, eid, f"non-finite {label}"))
        elif value < 0:
            out.append(Violation(entity, eid, f"negative {label}"))

    for s in inst.suppliers:
        check_ref("supplier", s.id, s.node, s.product)
        nonneg("supplier", s.id, "capacity", s.capacity)
        nonneg("supplier", s.id, "cost", s.cost)
    for c in inst.consumers:
        check_ref("consumer", c.id, c.node, c.product)
        nonneg("consumer", c.id, "capacity", c.capacity)
        nonneg("consumer", c.id, "value", c.value)
    for t in inst.technologies:
        check_ref("technology", t.id, t.node, t.ref_product)
        for p in t.yields:
            check_ref("technology", t.id, product=p)
        if t.yields.get(t.ref_product, 0) == 0:
            out.append(Violation("technology", t.id, "reference product has zero yield"))
        nonneg("technology", t.id, "capacity", t.unit_capacity)
        nonneg("technology", t.id, "operating cost", t.op_cost)
        nonneg("technology", t.id, "install cost", t.install_cost)
        if t.max_facilities < 0 or int(t.max_facilities) != t.max_facilities:
            out.append(Violation("technology", t.id, "max_facilities must be a nonnegative integer"))
    seen = {}
    for e in inst.edges:
        check_ref("edge", e.id, e.src)
        check_ref("edge", e.id, e.dst, e.product)
        if e.src == e.dst and not inst.allow_self_loops:
            out.append(Violation("edge", e.id, "self-loop edge"))
        nonneg("edge", e.id, "capacity", e.capacity)
        nonneg("edge", e.id, "cost", e.cost)
        key = (e.src, e.dst, e.product)
        if inst.unique_edges and key in seen:
            out.append(Violation("edge", e.id, f"duplicates edge {seen[key]} on {key}"))
        seen.setdefault(key, e.id)
    return out


def _check_dims(inst: SupplyChainInstance, alloc: Allocation) -> None:
    expected = {
        "s": len(inst.suppliers),
        "d": len(inst.consumers),
        "f": inst.n_edges,
        "xi": len(inst.technologies),
        "y": len(inst.technologies),
    }
    for name, n in expected.items():
        got = np.shape(getattr(alloc, name))
        if got != (n,):
            raise DimensionError(f"allocation field {name!r} has shape {got}, expected ({n},)")


def evaluate_welfare(inst: SupplyChainInstance, alloc: Allocation) -> float:
    """Demand value served minus supply, transport, processing and build costs."""
    _check_dims(inst, alloc)
    sa, ca, ea, ta = inst.supplier_arrays, inst.consumer_arrays, inst.edge_arrays, inst.tech_arrays
    terms = [
        ca["value"] @ np.asarray(alloc.d, float),
        -(sa["cost"] @ np.asarray(alloc.s, float)),
        -(ea["cost"] @ np.asarray(alloc.f, float)),
        -(ta["op_cost"] @ np.asarray(alloc.xi, float)),
        -(ta["install_cost"] @ np.asarray(alloc.y, float)),
    ]
    return float(sum(terms))


def nodal_balance(inst: SupplyChainInstance, alloc: Allocation) -> tuple[np.ndarray, np.ndarray]:
    """Per-(node, product) balance residuals and inflow magnitudes.

    Returns two ``(n_nodes, n_products)`` arrays: the signed residual of the
    balance row and the total absolute flow entering the row, which serves as
    the scale for the relative tolerance.
    """
    _check_dims(inst, alloc)
    shape = (inst.n_nodes, inst.n_products)
    res = np.zeros(shape)
    mag = np.zeros(shape)
    sa, ca, ea, ta = inst.supplier_arrays, inst.consumer_arrays, inst.edge_arrays, inst.tech_arrays
    s, d, f, xi = (np.asarray(v, float) for v in (alloc.s, alloc.d, alloc.f, alloc.xi))
    np.add.at(res, (sa["node"], sa["product"]), s)
    np.add.at(mag, (sa["node"], sa["product"]), np.abs(s))
    np.add.at(res, (ca["node"], ca["product"]), -d)
    np.add.at(mag, (ca["node"], ca["product"]), np.abs(d))
    np.add.at(res, (ea["dst"], ea["product"]), f)
    np.add.at(mag, (ea["dst"], ea["product"]), np.abs(f))
    np.add.at(res, (ea["src"], ea["product"]), -f)
    np.add.at(mag, (ea["src"], ea["product"]), np.abs(f))
    if len(ta["yield_tech"]):
        flow = ta["yield_gamma"] * xi[ta["yield_tech"]]
        nodes = ta["node"][ta["yield_tech"]]
        np.add.at(res, (nodes, ta["yield_product"]), flow)
        np.add.at(mag, (nodes, ta["yield_product"]), np.abs(flow))
    return res, mag


@dataclass
class FeasibilityReport:
    feasible: bool
    balance_residual: np.ndarray
    violations: list[str] = field(default_factory=list)

    @property
    def max_balance_residual(self) -> float:
        return float(np.abs(self.balance_residual).max(initial=0.0))

    def __bool__(self):
        return self.feasible


def _bound_violations(label, x, lo, hi, tol, out):
    x = np.asarray(x, float)
    lo = np.broadcast_to(np.asarray(lo, float), x.shape)
    hi = np.broadcast_to(np.asarray(hi, float), x.shape)
    bad = np.flatnonzero((x < lo - tol * (1 + np.abs(lo))) | (x > hi + tol * (1 + np.abs(hi))))
    for i in bad[:20]:
        out.append(f"{label}[{i}]={x[i]:.9g} outside [{lo[i]:.9g}, {hi[i]:.9g}]")
    if len(bad) > 20:
        out.append(f"{label}: {len(bad) - 20} more bound violations")


def check_feasibility(inst: SupplyChainInstance, alloc: Allocation, tol: float = 1e-6) -> FeasibilityReport:
    """Check nodal balances, capacity bounds, integrality and build coupling."""
    res, mag = nodal_balance(inst, alloc)
    out: list[str] = []
    bad = np.argwhere(np.abs(res) > tol * (1 + mag))
    for n, p in bad[:20]:
        out.append(f"balance (node {n}, product {p}) residual {res[n, p]:.9g}")
    if len(bad) > 20:
        out.append(f"{len(bad) - 20} more balance violations")

    sa, ca, ea, ta = inst.supplier_arrays, inst.consumer_arrays, inst.edge_arrays, inst.tech_arrays
    _bound_violations("s", alloc.s, 0, sa["capacity"], tol, out)
    _bound_violations("d", alloc.d, 0, ca["capacity"], tol, out)
    _bound_violations("f", alloc.f, 0, ea["capacity"], tol, out)
    _bound_violations("y", alloc.y, 0, ta["max_facilities"], tol, out)
    y = np.asarray(alloc.y, float)
    for t in np.flatnonzero(np.abs(y - np.round(y)) > tol):
        out.append(f"y[{t}]={y[t]:.9g} not integral")
    _bound_violations("xi", alloc.xi, 0, ta["unit_capacity"] * y, tol, out)
    return FeasibilityReport(feasible=not out, balance_residual=res, violations=out)
