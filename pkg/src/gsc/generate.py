"""Synthetic supply-chain instances with a known-profitable corridor.

Product 0 is the raw material.  Technologies turn product ``i`` into
``i + 1`` (and, where it exists, a by-product ``i + 2``), so the product
graph is acyclic.  With a single product a technology is a local producer of
product 0.  Transport edges run in both directions between node pairs,
either between all pairs or within a radius.
"""

from __future__ import annotations

import graphlib
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .model import (
    Consumer,
    NodeSite,
    Product,
    Supplier,
    SupplyChainInstance,
    Technology,
    TransportEdge,
    validate_instance,
)

EDGE_RULES = ("all-pairs", "radius")

Range = tuple[float, float]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    nodes: int
    products: int = 1
    technologies: int = 0
    tech_density: float = 0.25
    suppliers: int | None = None  # default: half the nodes, at least one
    consumers: int | None = None  # default: a third of the nodes, at least one
    supply_cost: Range = (1.0, 3.0)
    supply_capacity: Range = (5.0, 20.0)
    consumer_value: Range = (8.0, 20.0)
    consumer_capacity: Range = (5.0, 20.0)
    value_step: float = 1.6  # value multiplier per product stage
    edge_rule: str = "all-pairs"
    radius: float = 0.5
    cost_per_distance: float = 10.0
    base_cost: Range = (0.1, 0.5)  # drawn once per product
    edge_capacity: Range = (10.0, 40.0)
    tech_capacity: Range = (5.0, 15.0)
    max_facilities: tuple[int, int] = (1, 2)
    tech_op_cost: Range = (0.5, 2.0)
    tech_install_cost: Range = (5.0, 20.0)
    yield_range: Range = (0.6, 0.9)
    include_self_loops: bool = False
    seed: int = 0
    name: str = ""

    @classmethod
    def toy(cls, seed: int = 0) -> "GenConfig":
        """Two nodes, one supplier (cost 1, capacity 5), one consumer (value 10,
        capacity 5), edges of cost 2.  The optimum ships 5 units for welfare 35."""
        return cls(
            nodes=2, products=1, suppliers=1, consumers=1,
            supply_cost=(1, 1), supply_capacity=(5, 5), consumer_value=(10, 10), consumer_capacity=(5, 5),
            cost_per_distance=0.0, base_cost=(2, 2), edge_capacity=(10, 10), seed=seed, name="toy",
        )

    @classmethod
    def small_study(cls, seed: int = 0) -> "GenConfig":
        """Twenty nodes, one raw product, all-pairs edges including self-loops (400 edges)."""
        return cls(
            nodes=20, products=1, suppliers=8, consumers=6, include_self_loops=True,
            supply_cost=(1.0, 2.0), supply_capacity=(10.0, 20.0),
            consumer_value=(6.0, 12.0), consumer_capacity=(15.0, 30.0),
            cost_per_distance=8.0, base_cost=(0.2, 0.2), edge_capacity=(8.0, 25.0),
            seed=seed, name=f"small-study-{seed}",
        )

    def n_suppliers(self) -> int:
        return self.suppliers if self.suppliers is not None else max(1, self.nodes // 2)

    def n_consumers(self) -> int:
        return self.consumers if self.consumers is not None else max(1, self.nodes // 3)

    def validate(self) -> None:
        if self.nodes < 1:
            raise ConfigError("nodes must be positive")
        if self.products < 1:
            raise ConfigError("products must be positive")
        if self.technologies < 0:
            raise ConfigError("technologies must be nonnegative")
        if self.n_suppliers() < 1 or self.n_consumers() < 1:
            raise ConfigError("supplier and consumer counts must be positive")
        if not 0 <= self.tech_density <= 1:
            raise ConfigError("tech_density must lie in [0, 1]")
        if self.edge_rule not in EDGE_RULES:
            raise ConfigError(f"edge_rule must be one of {EDGE_RULES}")
        if self.radius < 0 or self.cost_per_distance < 0 or self.value_step < 0:
            raise ConfigError("radius, cost_per_distance and value_step must be nonnegative")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                lo, hi = v
                if lo < 0 or hi < lo:
                    raise ConfigError(f"{f.name} must be a nonempty nonnegative range, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items() if k in known}
        return cls(**kw)


def _yields(rng, k: int, P: int, yr: Range) -> tuple[int, dict[int, float]]:
    if P == 1:
        return 0, {0: 1.0}
    src = k % (P - 1)
    out = {src: -1.0, src + 1: round(float(rng.uniform(*yr)), 4)}
    if src + 2 < P:
        out[src + 2] = round(float(rng.uniform(0.05, 0.2)), 4)
    return src, out


def generate(cfg: GenConfig) -> SupplyChainInstance:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    N, P = cfg.nodes, cfg.products

    def draw(r: Range, size=None):
        return np.round(rng.uniform(r[0], r[1], size=size), 6)

    coords = np.round(rng.uniform(0.0, 1.0, size=(N, 2)), 6)
    nodes = [NodeSite(i, (float(x), float(y))) for i, (x, y) in enumerate(coords)]
    products = [Product(p, "raw" if p == 0 else f"product-{p}") for p in range(P)]
    stage_value = cfg.value_step ** np.arange(P)
    base = draw(cfg.base_cost, P)
    dist = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))

    # corridor endpoints: first supplier at a, first consumer at b
    a, b = (0, 0) if N == 1 else tuple(int(v) for v in rng.choice(N, 2, replace=False))

    def edge_cost(i, j, p):
        return round(float(cfg.cost_per_distance * dist[i, j] + base[p]), 6)

    edges = []
    for p in range(P):
        for i in range(N):
            for j in range(N):
                if i == j and not cfg.include_self_loops:
                    continue
                keep = cfg.edge_rule == "all-pairs" or dist[i, j] <= cfg.radius or (p == 0 and (i, j) == (a, b))
                if keep:
                    edges.append(TransportEdge(len(edges), i, j, p, float(draw(cfg.edge_capacity)), edge_cost(i, j, p)))

    nS, nD = cfg.n_suppliers(), cfg.n_consumers()
    sup_nodes = np.r_[a, rng.integers(0, N, nS - 1)]
    suppliers = [
        Supplier(i, int(n), 0, float(draw(cfg.supply_capacity)), float(draw(cfg.supply_cost)))
        for i, n in enumerate(sup_nodes)
    ]
    con_nodes = np.r_[b, rng.integers(0, N, nD - 1)]
    con_prods = np.r_[0, rng.integers(0, P, nD - 1)]
    consumers = []
    for j, (n, p) in enumerate(zip(con_nodes, con_prods)):
        value = float(draw(cfg.consumer_value) * stage_value[p])
        consumers.append(Consumer(j, int(n), int(p), float(draw(cfg.consumer_capacity)), round(value, 6)))
    corridor = suppliers[0].cost + (edge_cost(a, b, 0) if a != b else 0.0) + 1.0
    if consumers[0].value < corridor:
        consumers[0] = replace(consumers[0], value=round(corridor, 6))

    techs = []
    per_type = max(1, round(cfg.tech_density * N)) if cfg.technologies else 0
    for k in range(cfg.technologies):
        ref, yields = _yields(rng, k, P, cfg.yield_range)
        for n in sorted(rng.choice(N, size=min(per_type, N), replace=False)):
            techs.append(Technology(
                id=len(techs), node=int(n), ref_product=ref, yields=yields,
                unit_capacity=float(draw(cfg.tech_capacity)),
                max_facilities=int(rng.integers(cfg.max_facilities[0], cfg.max_facilities[1] + 1)),
                op_cost=float(draw(cfg.tech_op_cost)),
                install_cost=float(draw(cfg.tech_install_cost)),
            ))

    inst = SupplyChainInstance(
        products=products, nodes=nodes, suppliers=suppliers, consumers=consumers,
        technologies=techs, edges=edges, unique_edges=True, allow_self_loops=cfg.include_self_loops,
        name=cfg.name or f"gen-n{N}-p{P}-t{cfg.technologies}-s{cfg.seed}",
    )
    bad = validate_instance(inst)
    if bad:
        raise ConfigError("generated instance is invalid: " + "; ".join(map(str, bad[:5])))
    check_yield_dag(inst)
    return inst


def check_yield_dag(inst: SupplyChainInstance) -> list[int]:
    """Topological order of products under the technologies' conversions.

    Raises ``graphlib.CycleError`` if some chain of technologies can turn a
    product back into itself.
    """
    graph: dict[int, set[int]] = {p.id: set() for p in inst.products}
    for t in inst.technologies:
        consumed = [p for p, g in t.yields.items() if g < 0]
        produced = [p for p, g in t.yields.items() if g > 0]
        for q in produced:
            graph[q].update(consumed)
    return list(graphlib.TopologicalSorter(graph).static_order())


@dataclass(frozen=True)
class InstanceFamily:
    """A reproducible batch of small instances spanning the test ranges."""

    count: int = 50
    nodes: tuple[int, int] = (5, 40)
    products: tuple[int, int] = (1, 3)
    technologies: tuple[int, int] = (1, 3)
    seed: int = 2024
    overrides: dict = field(default_factory=dict)

    def configs(self) -> list[GenConfig]:
        rng = np.random.default_rng(self.seed)
        out = []
        for i in range(self.count):
            n = int(rng.integers(self.nodes[0], self.nodes[1] + 1))
            p = int(rng.integers(self.products[0], self.products[1] + 1))
            t = int(rng.integers(self.technologies[0], self.technologies[1] + 1))
            rule = "all-pairs" if n * n * p <= 2500 else "radius"
            radius = min(1.0, math.sqrt(2500 / (n * n * p)) * 0.6)
            out.append(GenConfig(nodes=n, products=p, technologies=t, edge_rule=rule, radius=radius,
                                 seed=int(rng.integers(2**31)), name=f"family-{self.seed}-{i}",
                                 **self.overrides))
        return out

    def instances(self) -> list[SupplyChainInstance]:
        return [generate(c) for c in self.configs()]
