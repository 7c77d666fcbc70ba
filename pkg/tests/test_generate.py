import dataclasses
import graphlib

import numpy as np
import pytest

from gsc.generate import ConfigError, GenConfig, InstanceFamily, check_yield_dag, generate
from gsc.model import Technology, validate_instance

from conftest import optimum


def test_deterministic():
    cfg = GenConfig(nodes=9, products=3, technologies=2, seed=4)
    assert generate(cfg) == generate(cfg)
    assert generate(cfg) != generate(dataclasses.replace(cfg, seed=5))


@pytest.mark.parametrize("P,T", [(1, 0), (1, 2), (2, 1), (3, 3)])
def test_valid_and_acyclic(P, T):
    inst = generate(GenConfig(nodes=6, products=P, technologies=T, seed=1))
    assert validate_instance(inst) == [] and inst.unique_edges
    order = check_yield_dag(inst)
    assert sorted(order) == list(range(P))
    for t in inst.technologies:
        assert t.yields[t.ref_product] == (1.0 if P == 1 else -1.0)
        assert all(g > 0 for p, g in t.yields.items() if p != t.ref_product)


def test_cycle_detected():
    loop = [Technology(0, 0, 0, {0: -1.0, 1: 1.0}, 1, 1, 0, 0), Technology(1, 0, 1, {1: -1.0, 0: 1.0}, 1, 1, 0, 0)]
    inst = generate(GenConfig(nodes=2, products=2, seed=0))
    with pytest.raises(graphlib.CycleError):
        check_yield_dag(dataclasses.replace(inst, technologies=loop))


def test_all_pairs_edge_count():
    inst = generate(GenConfig(nodes=5, products=2, seed=3))
    assert inst.n_edges == 5 * 4 * 2
    with_loops = generate(GenConfig(nodes=5, products=2, include_self_loops=True, seed=3))
    assert with_loops.n_edges == 5 * 5 * 2 and with_loops.allow_self_loops


def test_radius_rule_keeps_corridor():
    cfg = GenConfig(nodes=15, products=2, edge_rule="radius", radius=0.05, seed=8)
    inst = generate(cfg)
    d = np.linalg.norm(inst.coords[inst.edge_arrays["src"]] - inst.coords[inst.edge_arrays["dst"]], axis=1)
    assert inst.n_edges < 15 * 14 * 2
    corridor = (inst.suppliers[0].node, inst.consumers[0].node)
    far = [(e.src, e.dst) for e, dist in zip(inst.edges, d) if dist > 0.05]
    assert set(far) <= {corridor}


def test_edge_costs_follow_distance():
    inst = generate(GenConfig(nodes=6, products=1, cost_per_distance=3.0, base_cost=(0.5, 0.5), seed=2))
    ea = inst.edge_arrays
    d = np.linalg.norm(inst.coords[ea["src"]] - inst.coords[ea["dst"]], axis=1)
    assert np.allclose(ea["cost"], 3.0 * d + 0.5, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_corridor_makes_welfare_positive(seed):
    phi, _ = optimum(generate(GenConfig(nodes=6, products=2, technologies=1, seed=seed)))
    assert phi > 0


def test_presets():
    toy = generate(GenConfig.toy())
    assert optimum(toy)[0] == pytest.approx(35.0)
    ss = generate(GenConfig.small_study(0))
    assert (ss.n_nodes, ss.n_products, ss.n_edges) == (20, 1, 400)


@pytest.mark.parametrize("kw", [
    {"nodes": 0}, {"nodes": 3, "products": 0}, {"nodes": 3, "technologies": -1},
    {"nodes": 3, "edge_rule": "knn"}, {"nodes": 3, "tech_density": 2.0},
    {"nodes": 3, "supply_cost": (3.0, 1.0)}, {"nodes": 3, "suppliers": 0},
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        generate(GenConfig(**kw))


def test_config_dict_round_trip():
    cfg = GenConfig(nodes=7, products=2, technologies=1, seed=3, name="x")
    assert GenConfig.from_dict(cfg.to_dict()) == cfg


def test_family_spans_ranges():
    fam = InstanceFamily(count=30, seed=1)
    cfgs = fam.configs()
    assert len(cfgs) == 30 and cfgs == fam.configs()
    assert all(5 <= c.nodes <= 40 and 1 <= c.products <= 3 and 1 <= c.technologies <= 3 for c in cfgs)
    assert {c.edge_rule for c in cfgs} == {"all-pairs", "radius"}
