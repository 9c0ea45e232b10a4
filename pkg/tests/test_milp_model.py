import highspy
import numpy as np
import pytest

from slicereserve.infra import RESOURCE_TYPES, load_topology
from slicereserve.milp import (BackgroundOverload, Committed, CorruptedState, MilpModel, MissingTargets,
                               SliceAssignment, build_problem2, build_problem3, expected_counts, solve)
from slicereserve.milp.model import BINARY, CONTINUOUS, INTEGER
from slicereserve.slices import PriorityClass, make_request
from slicereserve.uncertainty import BackgroundModel, BackgroundTargets, background_targets, slice_targets

TWO_NODES = """
nodes:
  - {id: a, cpu: 4, mem: 8, wireless: 2}
  - {id: b, cpu: 4, mem: 8, wireless: 2}
links:
  - {from: a, to: b, bandwidth: 10, bidirectional: true}
  - {from: a, to: a, bandwidth: 10}
"""


def _req(catalog, sid=0, stype=1, k_on=1, lifetime=1, pattern=1, premium=False, **kw):
    cls = PriorityClass.PREMIUM if premium else PriorityClass.STANDARD
    return make_request(catalog, id=sid, slice_type=stype, priority_class=cls, arrival_time=kw.get("t", 0.0),
                        k_on=k_on, lifetime=lifetime, pattern=pattern)


def _formula(n_nodes, n_links, n_vnfs, n_vlinks, slots):
    # per (slice, slot): node-usage flags, counts and increments per (node, vnf), multiplicities per (link, vlink)
    return slots * (n_nodes + 2 * n_nodes * n_vnfs + n_links * n_vlinks)


def test_empty_batch(fat_tree):
    model = build_problem2([], [], [], fat_tree, {}, BackgroundTargets.zero())
    assert model.num_vars == 0
    res = solve(model)
    assert res.status == "optimal" and res.objective == 0.0


def test_variable_count_two_nodes(catalog):
    net = load_topology(TWO_NODES)
    req = _req(catalog, stype=1)
    model = build_problem2([req], [True], [], net, {0: slice_targets(req)}, BackgroundTargets.zero())
    assert model.num_vars == _formula(2, 3, 3, 2, 1) == 2 + 12 + 6
    kinds = [v.kind for v in model.variables]
    assert kinds.count(BINARY) == 2
    assert kinds.count(CONTINUOUS) == 6
    assert kinds.count(INTEGER) == 12
    assert all(np.isfinite(v.ub) for v in model.variables if v.kind != CONTINUOUS)


@pytest.mark.parametrize("stype, lifetime", [(1, 1), (2, 2), (3, 3)])
def test_row_counts_single_slice(fat_tree, catalog, stype, lifetime):
    req = _req(catalog, stype=stype, lifetime=lifetime)
    bg = background_targets(BackgroundModel.from_fractions(fat_tree))
    model = build_problem3(req, [], fat_tree, {0: slice_targets(req)}, bg)
    n, e = len(fat_tree.nodes), len(fat_tree.links)
    ns, es = len(req.template.vnfs), len(req.template.vlinks)
    fam = model.family_counts()
    assert model.num_vars == _formula(n, e, ns, es, lifetime)
    assert fam["flow"] == lifetime * n * es
    assert fam["cover_node"] + fam["cover_link"] == lifetime * (ns * len(RESOURCE_TYPES) + es)
    assert fam["adapt"] + fam["adapt_nonneg"] == lifetime * 2 * n * ns
    assert fam["capacity_node"] == lifetime * n * len(RESOURCE_TYPES)
    assert fam["capacity_link"] == lifetime * e
    assert fam["linking"] == lifetime * n
    counts = expected_counts(fat_tree, req)
    assert counts["variables"] == model.num_vars and counts["flow"] == fam["flow"]


def test_problem3_matches_problem2_single(fat_tree, catalog):
    req = _req(catalog, stype=2, lifetime=2, pattern=2)
    tg = {0: slice_targets(req)}
    bg = background_targets(BackgroundModel.from_fractions(fat_tree))
    a = build_problem2([req], [True], [], fat_tree, tg, bg)
    b = build_problem3(req, [], fat_tree, tg, bg)
    assert a.to_lp() == b.to_lp()


def test_denied_slice_solves_to_zero(catalog):
    net = load_topology(TWO_NODES)
    req = _req(catalog)
    model = build_problem2([req], [False], [], net, {0: slice_targets(req)}, BackgroundTargets.zero())
    res = solve(model)
    assert res.status == "optimal"
    assert res.objective == 0.0 and not np.any(res.x)


def test_denied_slice_needs_no_targets(catalog):
    net = load_topology(TWO_NODES)
    model = build_problem2([_req(catalog)], [False], [], net, {}, BackgroundTargets.zero())
    assert solve(model).objective == 0.0


def test_missing_targets(catalog):
    net = load_topology(TWO_NODES)
    with pytest.raises(MissingTargets):
        build_problem2([_req(catalog)], [True], [], net, {}, BackgroundTargets.zero())


def test_builder_does_not_prejudge_infeasible(catalog):
    net = load_topology(TWO_NODES.replace("cpu: 4", "cpu: 0.01"))
    req = _req(catalog, stype=1)
    model = build_problem3(req, [], net, {0: slice_targets(req)}, BackgroundTargets.zero())
    assert model.num_vars > 0
    assert solve(model).status == "infeasible"


def test_background_overload_diagnostic(catalog):
    net = load_topology(TWO_NODES)
    bg = BackgroundTargets({("a", "c"): 5.0}, {})
    req = _req(catalog)
    with pytest.raises(BackgroundOverload, match="node a"):
        build_problem3(req, [], net, {0: slice_targets(req)}, bg)


def test_corrupted_committed_state(catalog):
    net = load_topology(TWO_NODES)
    old = _req(catalog, sid=1)
    bogus = SliceAssignment(1, True, {(1, "a", "vVOC"): 100})
    req = _req(catalog)
    with pytest.raises(CorruptedState):
        build_problem3(req, [Committed(old, bogus)], net, {0: slice_targets(req)}, BackgroundTargets.zero())


def test_committed_enters_capacity_as_constant(catalog):
    net = load_topology(TWO_NODES)
    old = _req(catalog, sid=1)
    held = SliceAssignment(1, True, {(1, "a", "vVOC"): 4})
    req = _req(catalog)
    model = build_problem3(req, [Committed(old, held)], net, {0: slice_targets(req)}, BackgroundTargets.zero())
    row = next(r for r in model.constraints if r.family == "capacity_node" and r.key == (1, "a", "c"))
    assert row.rhs == pytest.approx(4 - 4 * 0.29)
    assert all(k[1] == 0 for k in model.index)  # no variables for the committed slice


def test_duplicate_and_bad_rows():
    m = MilpModel()
    m.add_var("x", "x", INTEGER, 0, 3)
    with pytest.raises(KeyError):
        m.add_var("x", "x", INTEGER, 0, 3)
    with pytest.raises(ValueError):
        m.add_var("y", "y", INTEGER, 0, float("inf"))
    with pytest.raises(IndexError):
        m.add_row("r", {5: 1.0}, "<=", 1.0, "test")


def test_lp_export_structure(catalog):
    net = load_topology(TWO_NODES)
    req = _req(catalog, lifetime=2, pattern=2)
    model = build_problem3(req, [], net, {0: slice_targets(req)}, BackgroundTargets.zero())
    text = model.to_lp()
    for section in ("Minimize", "Subject To", "Bounds", "Generals", "Binaries", "End"):
        assert f"\n{section}\n" in f"\n{text}"
    assert "cover_0_1_vVOC_c:" in text
    assert "flow_0_2_a_vVOC_vGW:" in text


def test_lp_export_round_trip_through_highs(tmp_path, catalog):
    """The exported text, read back by an independent parser, has the builtin optimum."""
    net = load_topology(TWO_NODES)
    req = _req(catalog, lifetime=2, pattern=2)
    model = build_problem3(req, [], net, {0: slice_targets(req)}, BackgroundTargets.zero())
    path = tmp_path / "m.lp"
    path.write_text(model.to_lp())
    h = highspy.Highs()
    h.silent()
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
    h.setOptionValue("mip_rel_gap", 0.0)
    h.run()
    ours = solve(model, rel_gap=0.0)
    assert h.getInfo().objective_function_value == pytest.approx(ours.objective, abs=1e-6)
    assert h.getNumCol() == model.num_vars
    assert h.getNumRow() == len(model.constraints)
