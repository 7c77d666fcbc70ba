import dataclasses
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsc.coarsening import (
    assign_partitions,
    build_plan,
    classify_and_aggregate,
    coarse_welfare,
    formulate_coarse,
    lift_check,
    lift_vector,
    plan_from_partition,
    select_pivots,
    upper_bound_run,
)
from gsc.generate import GenConfig, generate
from gsc.milp import SolveResult, Status, get_backend, model_size, problem_size
from gsc.model import Allocation, NodeSite, TransportEdge, evaluate_welfare

from conftest import optimum, random_feasible_allocation

INST = generate(GenConfig(nodes=8, products=2, technologies=2, seed=21))


def brute_force_assignment(coords, pivots):
    """Exhaustive minimum of total pivot distance, pivots pinned to their own partition."""
    pivots = list(pivots)
    free = [n for n in range(len(coords)) if n not in pivots]
    best, best_cost = None, math.inf
    for choice in itertools.product(range(len(pivots)), repeat=len(free)):
        cost = sum(math.dist(coords[n], coords[pivots[c]]) for n, c in zip(free, choice))
        if cost < best_cost - 1e-12:
            best, best_cost = choice, cost
    part = np.empty(len(coords), dtype=int)
    part[pivots] = range(len(pivots))
    part[free] = best
    return part, best_cost


def total_distance(coords, pivots, part):
    return sum(math.dist(coords[n], coords[pivots[part[n]]]) for n in range(len(coords)))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 9), st.integers(1, 3), st.integers(0, 2**31))
def test_assignment_matches_brute_force(n, C, seed):
    inst = generate(GenConfig(nodes=n, products=1, seed=seed % 1000))
    C = min(C, n)
    pivots = select_pivots(inst, C, seed)
    part = assign_partitions(inst, pivots)
    oracle, cost = brute_force_assignment(inst.coords, pivots)
    assert total_distance(inst.coords, pivots, part) == pytest.approx(cost, abs=1e-12)
    assert np.array_equal(part, oracle)


def test_pivots_sorted_distinct_and_seeded():
    p = select_pivots(INST, 4, 12)
    assert p == sorted(set(p)) and len(p) == 4
    assert p == select_pivots(INST, 4, 12)
    with pytest.raises(ValueError):
        select_pivots(INST, 0, 1)
    with pytest.raises(ValueError):
        select_pivots(INST, INST.n_nodes + 1, 1)


def test_ties_go_to_lowest_partition(toy):
    nodes = [NodeSite(0, (0.0, 0.0)), NodeSite(1, (1.0, 0.0)), NodeSite(2, (2.0, 0.0))]
    inst = dataclasses.replace(toy, nodes=nodes)
    assert assign_partitions(inst, [0, 2]).tolist() == [0, 0, 1]


def test_pivot_always_owns_its_partition(toy):
    # coincident nodes: each pivot must stay in its own partition
    inst = dataclasses.replace(toy, nodes=[NodeSite(0, (0.0, 0.0)), NodeSite(1, (0.0, 0.0))])
    assert assign_partitions(inst, [0, 1]).tolist() == [0, 1]


def test_custom_distance_hook():
    def manhattan(a, b):
        return np.abs(a[:, None, :] - b[None, :, :]).sum(-1)

    part = assign_partitions(INST, [0, 3], distance=manhattan)
    d = manhattan(INST.coords, INST.coords[[0, 3]])
    assert np.array_equal(part[[1, 2, 4, 5, 6, 7]], np.argmin(d, axis=1)[[1, 2, 4, 5, 6, 7]])


def test_aggregation_by_hand(toy):
    nodes = [NodeSite(i, (float(i), 0.0)) for i in range(4)]
    edges = [
        TransportEdge(0, 0, 1, 0, 3.0, 1.0),  # local in partition 0
        TransportEdge(1, 0, 2, 0, 4.0, 5.0),  # 0 -> 1
        TransportEdge(2, 1, 3, 0, 6.0, 2.0),  # 0 -> 1, cheaper
        TransportEdge(3, 3, 0, 0, 1.0, 7.0),  # 1 -> 0
    ]
    inst = dataclasses.replace(toy, nodes=nodes, edges=edges)
    local, glob, agg = classify_and_aggregate(inst, [0, 0, 1, 1])
    assert local.tolist() == [0] and glob.tolist() == [1, 2, 3]
    assert [(e.src_part, e.dst_part, e.product, e.members, e.capacity, e.cost) for e in agg] == [
        (0, 1, 0, (1, 2), 10.0, 2.0),
        (1, 0, 0, (3,), 1.0, 7.0),
    ]


@pytest.mark.parametrize("C", [1, 2, 3, 5, 8])
def test_plan_invariants(C):
    plan = build_plan(INST, C, 4)
    assert plan.n_partitions == C
    assert sorted(np.r_[plan.local_edges, plan.global_edges].tolist()) == list(range(INST.n_edges))
    members = sorted(m for e in plan.agg_edges for m in e.members)
    assert members == sorted(plan.global_edges.tolist())
    keys = [(e.src_part, e.dst_part, e.product) for e in plan.agg_edges]
    assert len(set(keys)) == len(keys) == plan.n_agg_edges
    assert plan.n_agg_edges <= C * (C - 1) * INST.n_products
    ea = INST.edge_arrays
    for e in plan.agg_edges:
        m = list(e.members)
        assert e.capacity == pytest.approx(ea["capacity"][m].sum())
        assert e.cost == ea["cost"][m].min()
    prob = formulate_coarse(INST, plan)
    nt = len(INST.technologies)
    assert problem_size(prob) == model_size(len(INST.suppliers), len(INST.consumers), plan.n_agg_edges, nt, C,
                                            INST.n_products)
    agg = plan.agg_of_edge(INST.n_edges)
    assert (agg[plan.local_edges] == -1).all() and (agg[plan.global_edges] >= 0).all()


def test_foreign_plan_rejected():
    plan = build_plan(INST, 3, 0)
    broken = dataclasses.replace(plan, pivots=tuple(reversed(plan.pivots)))
    with pytest.raises(ValueError):
        formulate_coarse(INST, broken)


@pytest.mark.parametrize("seed", range(4))
def test_upper_bound_dominates_optimum(seed):
    phi, _ = optimum(INST)
    for C in (1, 2, 4):
        ub = upper_bound_run(INST, C, 3, base_seed=seed)
        assert ub.best >= phi - 1e-6 * (1 + abs(phi))
        assert ub.best == min(ub.welfares)


def test_singleton_partitions_are_exact_with_unique_edges():
    phi, _ = optimum(INST)
    ub = upper_bound_run(INST, INST.n_nodes, 2)
    assert all(w == pytest.approx(phi, abs=1e-6 * (1 + abs(phi))) for w in ub.welfares)


def test_parallel_edges_make_singletons_a_strict_relaxation(toy):
    # a cheap low-capacity edge and a dear high-capacity one on the same arc
    edges = [TransportEdge(0, 0, 1, 0, 1.0, 1.0), TransportEdge(1, 0, 1, 0, 10.0, 8.0)]
    inst = dataclasses.replace(toy, edges=edges, unique_edges=False)
    phi, _ = optimum(inst)
    assert phi == pytest.approx((10 - 1 - 1) * 1 + (10 - 1 - 8) * 4)
    ub = upper_bound_run(inst, 2, 1)
    assert ub.best == pytest.approx((10 - 1 - 1) * 5)


def test_lift_of_optimum(tech):
    phi, alloc = optimum(tech)
    for C in (1, 2, 3):
        plan = build_plan(tech, C, 0)
        rep = lift_check(tech, plan, alloc)
        assert rep, rep.violations
        assert rep.full_welfare == pytest.approx(phi)
        assert rep.coarse_welfare >= phi - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_lift_vector_is_coarse_feasible(seed, C):
    rng = np.random.default_rng(seed)
    alloc = random_feasible_allocation(INST, rng)
    plan = build_plan(INST, C, seed)
    rep = lift_check(INST, plan, alloc)
    assert rep, rep.violations
    prob = formulate_coarse(INST, plan)
    x = lift_vector(prob, INST, alloc, rep.agg_flow)
    assert prob.max_violation(x) <= 1e-7 * (1 + np.abs(x).max(initial=0))
    assert prob.c @ x == pytest.approx(rep.coarse_welfare, rel=1e-9, abs=1e-9)
    assert rep.coarse_welfare >= evaluate_welfare(INST, alloc) - 1e-9


def test_lift_flags_infeasible_input():
    plan = build_plan(INST, 2, 0)
    bad = Allocation.zeros(INST)
    e = int(plan.global_edges[0])
    bad.f[e] = INST.edges[e].capacity * 10 + 100
    rep = lift_check(INST, plan, bad)
    assert not rep
    assert any("balance" in v for v in rep.violations)


def test_coarse_welfare_drops_local_costs(toy):
    _, alloc = optimum(toy)
    plan = plan_from_partition(toy, [0], np.array([0, 0]))
    assert plan.n_agg_edges == 0
    assert coarse_welfare(toy, plan, alloc, np.zeros(0)) == pytest.approx(10 * 5 - 5)


class _TimeLimited:
    """Returns an incumbent below the optimum and a dual bound above it."""

    name = "time-limited"

    def __init__(self):
        self.inner = get_backend("highs")

    def solve(self, prob, params):
        res = self.inner.solve(prob, params)
        x = np.zeros_like(res.x)
        return SolveResult(Status.FEASIBLE, 0.0, x, 1.0, res.objective + 5.0)


def test_time_limited_trial_uses_dual_bound():
    exact = upper_bound_run(INST, 3, 2, base_seed=1)
    limited = upper_bound_run(INST, 3, 2, base_seed=1, backend=_TimeLimited())
    assert limited.welfares == pytest.approx([w + 5.0 for w in exact.welfares])


def test_trial_seeds_and_threads():
    a = upper_bound_run(INST, 3, 5, base_seed=40)
    b = upper_bound_run(INST, 3, 5, base_seed=40, workers=3)
    assert [t.seed for t in a.trials] == list(range(40, 45))
    assert a.welfares == b.welfares
    assert a.best_plan.seed == 40 + a.best_trial
