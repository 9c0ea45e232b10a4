import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_tiny_instance, tiny_network, tiny_requests
from slicereserve.infra import load_topology
from slicereserve.milp import (INFEASIBLE, OPTIMAL, TIMEOUT, SliceAssignment, SolverUnavailable, TinyInstance,
                               TinySlice, brute_force_solve, build_problem2, build_problem3, cost_breakdown,
                               extract_assignment, slice_cost, solve, validate_assignment)
from slicereserve.slices import PriorityClass, make_request
from slicereserve.uncertainty import BackgroundModel, BackgroundTargets, background_targets, slice_targets

ZERO_BG = BackgroundTargets.zero()


def _pipeline(inst, backend="builtin"):
    net = tiny_network(inst)
    reqs, targets, grants = tiny_requests(inst)
    model = build_problem2(reqs, [grants[r.id] for r in reqs], [], net, targets, ZERO_BG)
    res = solve(model, rel_gap=0.0, backend=backend)
    return net, reqs, targets, model, res


def _single_vnf(target_factor, cap=(1.0, 1.0), fixed=(10.0, 4.0)):
    r = np.array([[0.3, 0.0, 0.0]])
    return TinyInstance(
        node_cap=np.array([[cap[0], 1.0, 1.0], [cap[1], 1.0, 1.0]]), link_cap=np.array([1.0]), links=((0, 1),),
        unit_cost=np.ones((2, 3)), link_cost=np.ones(1), fixed_cost=np.array(fixed), adapt_cost=np.full(2, 20.0),
        slices=(TinySlice(r, (), np.zeros(0), target_factor * r[None], np.zeros((1, 0))),))


# --- brute-force oracle examples ----------------------------------------------

def test_brute_force_two_instances_on_cheaper_node():
    status, obj, sol = brute_force_solve(_single_vnf(1.5))
    k, _ = sol[0]
    assert status == OPTIMAL
    assert k[0].tolist() == [[0], [2]]
    # two instances of r_c = 0.3 at unit cost, fixed cost 4, two additions at 20
    assert obj == pytest.approx(2 * 0.3 + 4 + 2 * 20)


def test_brute_force_zero_target():
    status, obj, sol = brute_force_solve(_single_vnf(0.0))
    assert status == OPTIMAL and obj == 0.0 and not sol[0][0].any()


def test_brute_force_zero_capacity():
    status, obj, _ = brute_force_solve(_single_vnf(1.5, cap=(0.0, 0.0)))
    assert status == INFEASIBLE and obj == np.inf


def test_brute_force_rejects_large_space():
    inst = _single_vnf(1.0)
    sl = inst.slices[0]
    wide = TinySlice(np.tile(sl.r, (7, 1)), (), np.zeros(0), np.tile(sl.targets_node, (1, 7, 1)), np.zeros((1, 0)))
    with pytest.raises(ValueError, match="enumeration limit"):
        brute_force_solve(TinyInstance(**{**inst.__dict__, "slices": (wide,)}))


def test_pipeline_matches_examples():
    for factor, status in ((1.5, OPTIMAL), (0.0, OPTIMAL)):
        inst = _single_vnf(factor)
        _, _, _, _, res = _pipeline(inst)
        assert res.status == status
        assert res.objective == pytest.approx(brute_force_solve(inst)[1], abs=1e-6)
    assert _pipeline(_single_vnf(1.5, cap=(0.0, 0.0)))[4].status == INFEASIBLE


# --- oracle equivalence --------------------------------------------------------

def _check_equivalence(inst, backend="builtin"):
    status, obj, _ = brute_force_solve(inst)
    net, reqs, targets, model, res = _pipeline(inst, backend)
    assert res.status == status
    if status != OPTIMAL:
        return None
    assert res.objective == pytest.approx(obj, abs=1e-6)
    assert not model.violations(res.x)
    assign = extract_assignment(model, res.x, reqs)
    assert validate_assignment(assign, net, {r.id: r for r in reqs}, targets, ZERO_BG) == []
    return net, reqs, model, res, assign


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_builtin_matches_brute_force(seed):
    _check_equivalence(random_tiny_instance(np.random.default_rng(seed)))


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_external_matches_brute_force(seed):
    _check_equivalence(random_tiny_instance(np.random.default_rng(seed)), backend="external")


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_linearization_exact(seed):
    out = _check_equivalence(random_tiny_instance(np.random.default_rng(seed)))
    if out is None:
        return
    net, reqs, model, res, assign = out
    total = sum(slice_cost(assign[r.id], net, r).total for r in reqs)
    assert res.objective == pytest.approx(total, abs=1e-6)
    for r in reqs:
        a = assign[r.id]
        inc = a.positive_increments(r)
        for key in set(inc) | set(a.adjustments):
            assert a.adjustments.get(key, 0.0) == pytest.approx(inc.get(key, 0), abs=1e-6)


# --- validator -----------------------------------------------------------------

@pytest.fixture(scope="module")
def solved_type1(catalog):
    net = load_topology("fat-tree-15")
    req = make_request(catalog, id=0, slice_type=1, priority_class=PriorityClass.STANDARD, arrival_time=0.0,
                       k_on=1, lifetime=2, pattern=2)
    tg = {0: slice_targets(req)}
    bg = background_targets(BackgroundModel.from_fractions(net))
    model = build_problem3(req, [], net, tg, bg)
    res = solve(model, rel_gap=0.0)
    assert res.status == OPTIMAL
    return net, req, tg, bg, extract_assignment(model, res.x, [req])[0]


def test_validator_accepts_solver_output(solved_type1):
    net, req, tg, bg, a = solved_type1
    assert validate_assignment({0: a}, net, {0: req}, tg, bg) == []


def test_validator_names_cover_row(solved_type1):
    net, req, tg, bg, a = solved_type1
    key = next(k for k in sorted(a.nodes) if k[2] == "vVOC")
    broken = SliceAssignment(0, True, {**a.nodes, key: a.nodes[key] - 1}, dict(a.links))
    found = validate_assignment({0: broken}, net, {0: req}, tg, bg)
    assert any(v.startswith(f"cover[s=0,slot={key[0]},vnf=vVOC,type=") for v in found)


def test_validator_names_convention(solved_type1):
    net, req, tg, bg, a = solved_type1
    broken = SliceAssignment(0, True, {**a.nodes, (5, "leaf0", "vGW"): 1}, dict(a.links))
    found = validate_assignment({0: broken}, net, {0: req}, tg, bg)
    assert any(v.startswith("convention[s=0,slot=5]") for v in found)
    denied = SliceAssignment(0, False, dict(a.nodes))
    assert any("denied" in v for v in validate_assignment({0: denied}, net, {0: req}, tg, bg))


def test_validator_immutability(solved_type1):
    net, req, tg, bg, a = solved_type1
    other = SliceAssignment(0, True, {k: v + 1 for k, v in a.nodes.items()}, dict(a.links))
    found = validate_assignment({0: other}, net, {0: req}, tg, bg, committed={0: a})
    assert any(v.startswith("immutable[s=0]") for v in found)


def test_validator_capacity(solved_type1):
    net, req, tg, bg, a = solved_type1
    heavy = SliceAssignment(0, True, {**a.nodes, (1, "leaf0", "vBBU"): 100}, dict(a.links))
    found = validate_assignment({0: heavy}, net, {0: req}, tg, bg)
    assert any(v.startswith("capacity[slot=1,node=leaf0,type=w]") for v in found)


def test_validator_adjustment(solved_type1):
    net, req, tg, bg, a = solved_type1
    low = SliceAssignment(0, True, dict(a.nodes), dict(a.links), {})
    assert any(v.startswith("adapt[") for v in validate_assignment({0: low}, net, {0: req}, tg, bg))


# --- cost breakdown ----------------------------------------------------------------

UNIT = """
nodes:
  - {id: a, cpu: 10, mem: 10, wireless: 10}
  - {id: b, cpu: 10, mem: 10, wireless: 10}
links:
  - {from: a, to: b, bandwidth: 10}
"""


@pytest.fixture(scope="module")
def type1(catalog):
    return make_request(catalog, id=0, slice_type=1, priority_class=PriorityClass.STANDARD, arrival_time=0.0,
                        k_on=1, lifetime=2, pattern=2)


def test_cost_resource_part(type1):
    net = load_topology(UNIT)
    node_only = SliceAssignment(0, True, {(1, "a", "vVOC"): 1})
    assert cost_breakdown(node_only, net, type1, 1).resource_cost == pytest.approx(1.10)
    with_link = SliceAssignment(0, True, {(1, "a", "vVOC"): 1}, {(1, ("a", "b"), ("vVOC", "vGW")): 1})
    assert cost_breakdown(with_link, net, type1, 1).resource_cost == pytest.approx(1.32)


def test_cost_fixed_part(type1):
    net = load_topology(UNIT)
    a = SliceAssignment(0, True, {(1, "a", "vVOC"): 2, (1, "a", "vGW"): 1, (1, "b", "vGW"): 1})
    assert cost_breakdown(a, net, type1, 1).fixed_cost == pytest.approx(20.0)
    assert cost_breakdown(a, net, type1, 2).fixed_cost == 0.0


def test_cost_adaptation_part(type1):
    net = load_topology(UNIT)
    up = SliceAssignment(0, True, {(1, "a", "vVOC"): 1, (2, "a", "vVOC"): 3})
    assert cost_breakdown(up, net, type1, 2).adaptation_cost == pytest.approx(40.0)
    # the first active slot counts every instance as an addition
    assert cost_breakdown(up, net, type1, 1).adaptation_cost == pytest.approx(20.0)
    down = SliceAssignment(0, True, {(1, "a", "vVOC"): 3, (2, "a", "vVOC"): 1})
    assert cost_breakdown(down, net, type1, 2).adaptation_cost == 0.0


@given(nodes=st.dictionaries(st.tuples(st.sampled_from([1, 2]), st.sampled_from(["a", "b"]),
                                       st.sampled_from(["vVOC", "vGW", "vBBU"])), st.integers(0, 5), max_size=8))
def test_cost_parts_nonnegative_and_sum(type1, nodes):
    net = load_topology(UNIT)
    c = slice_cost(SliceAssignment(0, True, nodes), net, type1)
    assert min(c.resource_cost, c.fixed_cost, c.adaptation_cost) >= 0
    assert c.total == pytest.approx(c.resource_cost + c.fixed_cost + c.adaptation_cost)


# --- solver plumbing -------------------------------------------------------------------

def test_solution_satisfies_rows(solved_type1, catalog):
    net, req, tg, bg, _ = solved_type1
    model = build_problem3(req, [], net, tg, bg)
    res = solve(model)
    assert not model.violations(res.x)
    assert res.objective == pytest.approx(model.evaluate(res.x), abs=1e-6)


def test_builtin_and_external_agree(solved_type1):
    net, req, tg, bg, _ = solved_type1
    model = build_problem3(req, [], net, tg, bg)
    a = solve(model, rel_gap=0.0)
    b = solve(model, rel_gap=0.0, backend="external")
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_node_budget_reports_timeout(catalog):
    net = load_topology("fat-tree-15")
    reqs = [make_request(catalog, id=i, slice_type=1 + i % 3, priority_class=PriorityClass.STANDARD,
                         arrival_time=0.0, k_on=1, lifetime=3, pattern=1) for i in range(3)]
    tg = {r.id: slice_targets(r) for r in reqs}
    model = build_problem2(reqs, [True] * 3, [], net, tg, background_targets(BackgroundModel.from_fractions(net)))
    res = solve(model, node_limit=1)
    assert res.status in (TIMEOUT, OPTIMAL)
    assert res.nodes <= 1
    if res.status == TIMEOUT and res.has_solution:
        assert not model.violations(res.x)


def test_unknown_backend():
    inst = _single_vnf(1.0)
    net = tiny_network(inst)
    reqs, targets, _ = tiny_requests(inst)
    model = build_problem2(reqs, [True], [], net, targets, ZERO_BG)
    with pytest.raises(SolverUnavailable):
        solve(model, backend="nope")


def test_missing_external_binary(monkeypatch, tmp_path):
    monkeypatch.setenv("SLICERESERVE_SOLVER_PATH", str(tmp_path / "no-such-solver"))
    inst = _single_vnf(1.0)
    reqs, targets, _ = tiny_requests(inst)
    model = build_problem2(reqs, [True], [], tiny_network(inst), targets, ZERO_BG)
    with pytest.raises(SolverUnavailable):
        solve(model, backend="external")
    assert os.environ["SLICERESERVE_SOLVER_PATH"].endswith("no-such-solver")
