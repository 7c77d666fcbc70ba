from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from gsc.generate import GenConfig, InstanceFamily, generate
from gsc.milp import SolveResult, Status, extract_allocation, formulate_full, solve
from gsc.model import (
    Consumer,
    NodeSite,
    Product,
    Supplier,
    SupplyChainInstance,
    Technology,
    TransportEdge,
)


def toy_instance() -> SupplyChainInstance:
    """One supplier (cost 1, cap 5) two nodes away from one consumer (value 10, cap 5)."""
    return SupplyChainInstance(
        products=[Product(0)],
        nodes=[NodeSite(0, (0.0, 0.0)), NodeSite(1, (1.0, 0.0))],
        suppliers=[Supplier(0, 0, 0, 5.0, 1.0)],
        consumers=[Consumer(0, 1, 0, 5.0, 10.0)],
        technologies=[],
        edges=[TransportEdge(0, 0, 1, 0, 10.0, 2.0), TransportEdge(1, 1, 0, 0, 10.0, 2.0)],
        unique_edges=True,
        name="toy",
    )


def tech_instance() -> SupplyChainInstance:
    """Raw product 0 converted to product 1 at node 1, sold at node 2."""
    return SupplyChainInstance(
        products=[Product(0), Product(1)],
        nodes=[NodeSite(0, (0.0, 0.0)), NodeSite(1, (1.0, 0.0)), NodeSite(2, (2.0, 0.0))],
        suppliers=[Supplier(0, 0, 0, 10.0, 1.0)],
        consumers=[Consumer(0, 2, 1, 10.0, 20.0)],
        technologies=[Technology(0, 1, 0, {0: -1.0, 1: 0.8}, 4.0, 2, 1.0, 3.0)],
        edges=[
            TransportEdge(0, 0, 1, 0, 10.0, 1.0),
            TransportEdge(1, 1, 2, 1, 10.0, 1.0),
            TransportEdge(2, 0, 2, 0, 10.0, 0.5),
        ],
        unique_edges=True,
        name="tech",
    )


def optimum(inst, backend=None):
    prob = formulate_full(inst)
    res = solve(prob, backend=backend)
    assert res.status is Status.OPTIMAL
    return res.objective, extract_allocation(inst, prob, res)


def random_feasible_allocation(inst, rng):
    """A random point of the full model: optimum of a perturbed objective, scaled toward zero.

    The feasible set holds zero and is closed under scaling the continuous
    part with the build decisions fixed, so the scaled point stays feasible.
    """
    prob = formulate_full(inst)
    noise = rng.normal(0.0, 1.0 + np.abs(prob.c))
    perturbed = dataclasses.replace(prob, c=prob.c + noise)
    res = solve(perturbed)
    assert res.status.has_solution
    x = np.asarray(res.x, float)
    wrapped = SolveResult(Status.OPTIMAL, float(prob.c @ np.clip(np.where(prob.integer, np.round(x), x),
                                                                     prob.lb, prob.ub)), x)
    alloc = extract_allocation(inst, prob, wrapped)
    return alloc.scaled(float(rng.uniform(0.0, 1.0)))


@pytest.fixture
def toy():
    return toy_instance()


@pytest.fixture
def tech():
    return tech_instance()


@pytest.fixture(scope="session")
def small_study():
    return generate(GenConfig.small_study(0))


@pytest.fixture(scope="session")
def family():
    return InstanceFamily(count=12, seed=7).instances()
