import re

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from gsc.generate import GenConfig, generate
from gsc.milp import (
    BACKEND_ENV,
    BUILD,
    FLOW,
    BackendUnavailableError,
    InvalidInstanceError,
    MilpProblem,
    NoSolutionError,
    SolveResult,
    SolverParams,
    Status,
    available_backends,
    extract_allocation,
    formulate_full,
    get_backend,
    lp_text,
    model_size,
    problem_size,
    solve,
    write_lp,
)
from gsc.model import check_feasibility, evaluate_welfare

from conftest import optimum


def tiny(c, rows, sense, rhs, ub, integer=None):
    n = len(c)
    return MilpProblem(
        c=np.asarray(c, float), A=sp.csr_matrix(np.asarray(rows, float).reshape(len(rhs), n)),
        sense=tuple(sense), rhs=np.asarray(rhs, float), lb=np.zeros(n), ub=np.asarray(ub, float),
        integer=np.zeros(n, bool) if integer is None else np.asarray(integer, bool),
        var_kind=np.full(n, FLOW, np.int8), var_id=np.arange(n),
    )


@pytest.mark.parametrize("backend", ["highs", "bnb"])
def test_toy_optimum(toy, backend):
    phi, alloc = optimum(toy, backend)
    assert phi == pytest.approx(35.0)
    assert alloc.s[0] == pytest.approx(5.0) and alloc.d[0] == pytest.approx(5.0)
    assert alloc.f[0] == pytest.approx(5.0) and alloc.f[1] == pytest.approx(0.0)


@pytest.mark.parametrize("backend", ["highs", "bnb"])
def test_tech_optimum_by_hand(tech, backend):
    phi, alloc = optimum(tech, backend)
    assert phi == pytest.approx(8 * 12.2 - 2 * 3.0)
    assert alloc.y[0] == 2
    assert check_feasibility(tech, alloc)


@pytest.mark.parametrize("seed", range(6))
def test_backends_agree_on_generated_instances(seed):
    inst = generate(GenConfig(nodes=5, products=2, technologies=2, tech_density=0.4, seed=seed))
    a, alloc_a = optimum(inst, "highs")
    b, alloc_b = optimum(inst, "bnb")
    assert a == pytest.approx(b, rel=1e-6, abs=1e-6)
    for alloc in (alloc_a, alloc_b):
        assert check_feasibility(inst, alloc)
        assert evaluate_welfare(inst, alloc) == pytest.approx(alloc.welfare)


def test_column_and_row_layout(tech):
    prob = formulate_full(tech)
    assert [prob.label(j) for j in range(prob.n_vars)] == [
        ("supply", 0), ("demand", 0), ("flow", 0), ("flow", 1), ("flow", 2), ("process", 0), ("build", 0)]
    assert prob.var_name(6) == "y_0"
    assert prob.sense == ("=",) * 6 + ("<=",)
    # coupling row: xi - 4 y <= 0
    assert prob.A[6].toarray().ravel().tolist() == [0, 0, 0, 0, 0, 1, -4]
    # balance of product 0 at node 1: inflow on edge 0, consumed by the technology
    assert prob.A[1 * 2 + 0].toarray().ravel().tolist() == [0, 0, 1, 0, 0, -1, 0]
    assert prob.ub[5] == 8.0 and prob.ub[6] == 2.0
    assert prob.integer.tolist() == [False] * 6 + [True]


def test_sizes_match_closed_form(tech):
    prob = formulate_full(tech)
    assert problem_size(prob) == model_size(1, 1, 3, 1, 3, 2)
    assert prob.n_rows == 3 * 2 + 1


def test_invalid_instance_refused(toy):
    import dataclasses

    from gsc.model import TransportEdge

    bad = dataclasses.replace(toy, edges=[TransportEdge(0, 0, 1, 0, -1.0, 1.0), toy.edges[1]])
    with pytest.raises(InvalidInstanceError):
        formulate_full(bad)


def test_fingerprint_is_deterministic():
    cfg = GenConfig(nodes=6, products=2, technologies=1, seed=3)
    a, b = formulate_full(generate(cfg)), formulate_full(generate(cfg))
    assert a.fingerprint() == b.fingerprint()
    c = formulate_full(generate(GenConfig(nodes=6, products=2, technologies=1, seed=4)))
    assert a.fingerprint() != c.fingerprint()


@pytest.mark.parametrize("backend", ["highs", "bnb"])
def test_infeasible_rows(backend):
    prob = tiny([1.0], [[1.0], [1.0]], [">=", "<="], [2.0, 1.0], [5.0])
    assert solve(prob, backend=backend).status is Status.INFEASIBLE


@pytest.mark.parametrize("backend", ["highs", "bnb"])
def test_unbounded(backend):
    prob = tiny([1.0, 0.0], [[1.0, -1.0]], ["<="], [0.0], [np.inf, np.inf])
    assert solve(prob, backend=backend).status is Status.UNBOUNDED


def test_empty_problem():
    prob = tiny([], np.zeros((0, 0)), [], [], [])
    res = solve(prob)
    assert res.status is Status.OPTIMAL and res.objective == 0.0


def test_general_integer_branching():
    # max x + y, 2x + 2y <= 7, integer: optimum 3
    prob = tiny([1.0, 1.0], [[2.0, 2.0]], ["<="], [7.0], [10.0, 10.0], integer=[True, True])
    for backend in ("highs", "bnb"):
        res = solve(prob, backend=backend)
        assert res.objective == pytest.approx(3.0)
        assert prob.max_violation(res.x) <= 1e-9


def test_time_limit_reports_bound():
    prob = tiny([1.0, 1.0], [[2.0, 2.0]], ["<="], [7.0], [10.0, 10.0], integer=[True, True])
    res = solve(prob, SolverParams(time_limit=0.0), backend="bnb")
    assert res.status in (Status.TIME_LIMIT, Status.FEASIBLE, Status.OPTIMAL)
    if res.status is Status.TIME_LIMIT:
        assert res.objective is None and res.bound >= 3.0


def test_solve_result_contract():
    with pytest.raises(ValueError):
        SolveResult(Status.OPTIMAL)
    with pytest.raises(ValueError):
        SolveResult(Status.INFEASIBLE, objective=1.0)
    assert SolveResult(Status.OPTIMAL, 2.0, np.zeros(1)).upper_bound == 2.0


def test_extract_needs_solution(toy):
    prob = formulate_full(toy)
    with pytest.raises(NoSolutionError):
        extract_allocation(toy, prob, SolveResult(Status.INFEASIBLE))


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(mip_gap=-1)
    with pytest.raises(ValueError):
        SolverParams(time_limit=-0.5)


def test_backend_selection(monkeypatch):
    assert set(available_backends()) == {"bnb", "highs"}
    monkeypatch.setenv(BACKEND_ENV, "bnb")
    assert get_backend().name == "bnb"
    monkeypatch.delenv(BACKEND_ENV)
    assert get_backend().name == "highs"
    with pytest.raises(BackendUnavailableError):
        get_backend("gurobi")


def test_result_metadata(toy):
    res = solve(formulate_full(toy))
    assert res.backend == "highs" and res.wall_time >= 0 and res.peak_memory > 0


# LP export: parse the text back and compare with the matrix.

def _parse_lp(text, names):
    pos = {n: j for j, n in enumerate(names)}
    sections = re.split(r"^(Maximize|Subject To|Bounds|General|End)\s*$", text, flags=re.M)
    body = dict(zip(sections[1::2], sections[2::2]))

    def linear(expr):
        v = np.zeros(len(names))
        tok = expr.split()
        if tok[0] not in "+-":
            tok = ["+"] + tok
        for sign, coef, name in zip(tok[0::3], tok[1::3], tok[2::3]):
            v[pos[name]] += (-1 if sign == "-" else 1) * float(coef)
        return v

    c = linear(body["Maximize"].split(":", 1)[1])
    rows, senses, rhs = [], [], []
    for line in body["Subject To"].strip().splitlines():
        expr = line.split(":", 1)[1]
        m = re.match(r"(.*)\s(<=|>=|=)\s(\S+)$", expr)
        rows.append(linear(m.group(1)))
        senses.append(m.group(2))
        rhs.append(float(m.group(3)))
    lb, ub = np.zeros(len(names)), np.zeros(len(names))
    for line in body["Bounds"].strip().splitlines():
        lo, name, hi = re.match(r"\s*(\S+) <= (\w+) <= (\S+)", line).groups()
        lb[pos[name]], ub[pos[name]] = float(lo), float(hi)
    ints = body.get("General", "").split()
    return c, np.array(rows), senses, np.array(rhs), lb, ub, sorted(pos[n] for n in ints)


def test_lp_export_round_trip(tmp_path):
    inst = generate(GenConfig(nodes=4, products=2, technologies=2, tech_density=0.5, seed=11))
    prob = formulate_full(inst)
    path = tmp_path / "m.lp"
    write_lp(prob, path)
    text = path.read_text()
    assert text == lp_text(prob)
    names = [prob.var_name(j) for j in range(prob.n_vars)]
    c, A, senses, rhs, lb, ub, ints = _parse_lp(text, names)
    assert np.allclose(c, prob.c, rtol=0, atol=0)
    assert np.array_equal(A, prob.A.toarray())
    assert tuple(senses) == prob.sense
    assert np.array_equal(rhs, prob.rhs) and np.array_equal(lb, prob.lb) and np.array_equal(ub, prob.ub)
    assert ints == np.flatnonzero(prob.integer).tolist()
    assert text.count("cap_") == len(inst.technologies)
    assert all(names[j].startswith("y_") for j in ints)
    assert prob.columns(BUILD)[0].tolist() == ints


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_max_violation_zero_on_scaled_optimum(seed, t):
    inst = generate(GenConfig(nodes=4, products=1, technologies=1, seed=seed))
    prob = formulate_full(inst)
    res = solve(prob)
    x = res.x.copy()
    x[~prob.integer] *= t
    assert prob.max_violation(x) <= 1e-7
