"""End-to-end acceptance criteria; each test records one PASS/FAIL line in the terminal summary."""
import contextlib
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import CRITERIA
from oracles import random_tiny_instance, sampled_satisfaction, tiny_network, tiny_requests, upper_tail_quantile
from slicereserve.engine import JPR, SPR, ScenarioConfig, arrival_slot, run
from slicereserve.experiments import adaptation_run, peer_load
from slicereserve.infra import load_topology
from slicereserve.milp import (OPTIMAL, brute_force_solve, build_problem2, extract_assignment,
                               slice_cost, solve, validate_assignment)
from slicereserve.policy import PolicyParams
from slicereserve.slices import (PriorityClass, UserCountModel, UserDemandStats, aggregate_moments,
                                 builtin_slice_catalog, make_request, user_count_moments)
from slicereserve.uncertainty import (BackgroundModel, BackgroundTargets, background_targets, gamma_background,
                                      gamma_ssp, slice_targets)

# violations gathered by every criterion that simulates or solves
SAFETY: dict[str, list[str]] = {}


@contextlib.contextmanager
def criterion(n, text):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException:
        CRITERIA.append(f"criterion {n}: FAIL  {text}  {detail.get('note', '')}".rstrip())
        raise
    CRITERIA.append(f"criterion {n}: PASS  {text}  ({time.perf_counter() - t0:.1f}s) {detail.get('note', '')}"
                    .rstrip())


@pytest.fixture(scope="module")
def catalog():
    return builtin_slice_catalog()


@pytest.fixture(scope="module")
def fat15():
    return load_topology("fat-tree-15")


def test_criterion_01_background_quantiles():
    with criterion(1, "background relaxation quantiles") as d:
        t0 = time.perf_counter()
        g01, g001 = gamma_background(0.1), gamma_background(0.01)
        elapsed = time.perf_counter() - t0
        assert abs(g01 - upper_tail_quantile(0.1)) <= 1e-5 and abs(g01 - 1.281552) <= 1e-5
        assert abs(g001 - upper_tail_quantile(0.01)) <= 1e-5 and abs(g001 - 2.326348) <= 1e-5
        d["note"] = f"{g01:.6f} {g001:.6f}"
        assert elapsed < 1.0


@pytest.mark.parametrize("stype", [1, 2, 3])
def test_criterion_02_ssp_guarantee(catalog, stype):
    with criterion(2, f"satisfaction guarantee, slice type {stype}") as d:
        t0 = time.perf_counter()
        st = catalog[stype]
        target = st.target_ssp
        worst = 1.0
        for p in (0.5, 1.0):
            count = UserCountModel(50, (p,))
            mom = aggregate_moments(st.user_stats, *user_count_moments(count, 0))
            res = gamma_ssp(mom, st.user_stats, count, 0, target)
            n = 10**5
            freq = sampled_satisfaction(res.targets, st.user_stats.mean, st.user_stats.covariance, 50, p, n,
                                        seed=stype)
            sigma = np.sqrt(target * (1 - target) / n)
            assert freq >= target - 3 * sigma, (p, freq)
            worst = min(worst, freq)
        d["note"] = f"min frequency {worst:.4f} vs target {target}"
        assert time.perf_counter() - t0 < 60


def test_criterion_03_moment_formulas():
    with criterion(3, "aggregate moments vs sampling on 20 draws") as d:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(20):
            n, p = int(rng.integers(5, 500)), float(rng.uniform(0.05, 1.0))
            mu, sd = float(rng.uniform(0.01, 5.0)), float(rng.uniform(0.01, 1.0))
            sd *= mu
            m = aggregate_moments(UserDemandStats.independent({("v", "c"): (mu, sd)}),
                                  *user_count_moments(UserCountModel(n, (p,)), 0))
            eta = rng.binomial(n, p, size=10**6)
            agg = eta * rng.normal(mu, sd, size=10**6)
            err = max(abs(agg.mean() - m.mean[0]) / m.mean[0], abs(agg.std() - m.std[0]) / m.std[0])
            worst = max(worst, err)
        d["note"] = f"max relative error {worst:.4f}"
        assert worst <= 0.02


def _tiny_solve(inst):
    net = tiny_network(inst)
    reqs, targets, grants = tiny_requests(inst)
    model = build_problem2(reqs, [grants[r.id] for r in reqs], [], net, targets, BackgroundTargets.zero())
    return net, reqs, targets, model, solve(model, rel_gap=0.0)


@pytest.fixture(scope="module")
def tiny_results():
    rng = np.random.default_rng(7)
    out = []
    t0 = time.perf_counter()
    while sum(r[0] == OPTIMAL for r in out) < 30:
        inst = random_tiny_instance(rng)
        bf = brute_force_solve(inst)
        out.append((bf[0], bf[1], *_tiny_solve(inst)))
    return out, time.perf_counter() - t0


def test_criterion_04_oracle_equivalence(tiny_results):
    with criterion(4, "solver equals exhaustive search on tiny instances") as d:
        results, elapsed = tiny_results
        feasible = 0
        for status, obj, net, reqs, targets, model, res in results:
            assert res.status == status
            if status != OPTIMAL:
                continue
            feasible += 1
            assert abs(res.objective - obj) <= 1e-6
            assign = extract_assignment(model, res.x, reqs)
            found = validate_assignment(assign, net, {r.id: r for r in reqs}, targets, BackgroundTargets.zero())
            SAFETY.setdefault("tiny", []).extend(found)
            assert found == []
        d["note"] = f"{feasible} feasible of {len(results)} instances"
        assert feasible >= 25
        assert elapsed < 120


def _linearization_gap(net, reqs, assign, objective):
    total = sum(slice_cost(assign[r.id], net, r).total for r in reqs if assign[r.id].granted)
    worst_y = 0.0
    for r in reqs:
        a = assign[r.id]
        inc = a.positive_increments(r)
        for key in set(inc) | set(a.adjustments or {}):
            worst_y = max(worst_y, abs(a.adjustments.get(key, 0.0) - inc.get(key, 0)))
    return abs(objective - total), worst_y


def test_criterion_05_linearization(tiny_results, catalog, fat15):
    with criterion(5, "objective equals summed cost breakdown; y equals positive increments") as d:
        worst_obj = worst_y = 0.0
        count = 0
        for status, _, net, reqs, _, model, res in tiny_results[0]:
            if status != OPTIMAL:
                continue
            g_obj, g_y = _linearization_gap(net, reqs, extract_assignment(model, res.x, reqs), res.objective)
            worst_obj, worst_y = max(worst_obj, g_obj), max(worst_y, g_y)
            count += 1
        # desk-scale joint models on the fat tree, solved within the default budget
        for seed in range(3):
            committed = peer_load(seed, fat15, catalog)
            reqs = [c.request for c in committed]
            tg = {r.id: slice_targets(r) for r in reqs}
            model = build_problem2(reqs, [True] * len(reqs), [], fat15, tg,
                                   background_targets(BackgroundModel.from_fractions(fat15)))
            res = solve(model, rel_gap=0.05, node_limit=200)
            if res.has_solution:
                g_obj, g_y = _linearization_gap(fat15, reqs, extract_assignment(model, res.x, reqs), res.objective)
                worst_obj, worst_y = max(worst_obj, g_obj), max(worst_y, g_y)
                count += 1
        d["note"] = f"{count} solved instances, max gaps {worst_obj:.2e} / {worst_y:.2e}"
        assert worst_obj <= 1e-6 and worst_y <= 1e-6


def test_criterion_06_adaptation_cost_effect(catalog, fat15):
    with criterion(6, "adaptation cost reduces instance adjustments") as d:
        t0 = time.perf_counter()
        pairs = []
        for seed in range(10):
            with_cost = adaptation_run(seed, 20.0, fat15, catalog)
            free = adaptation_run(seed, 0.0, fat15, catalog)
            pairs.append((with_cost.adjustments, free.adjustments))
            for out in (with_cost, free):
                reqs = {0: out.request, **{c.request.id: c.request for c in out.committed}}
                tg = {rid: slice_targets(r) for rid, r in reqs.items()}
                SAFETY.setdefault("adaptation", []).extend(validate_assignment(
                    {0: out.assignment}, fat15, reqs, tg, background_targets(BackgroundModel.from_fractions(fat15)),
                    {c.request.id: c.assignment for c in out.committed}))
        d["note"] = "c_a=20 vs c_a=0: " + " ".join(f"{a}/{b}" for a, b in pairs)
        assert all(a <= b for a, b in pairs)
        assert any(a < b for a, b in pairs)
        assert time.perf_counter() - t0 < 60


DESK = ScenarioConfig(num_requests=200, arrival_rate=2.0, premium_fraction=0.25, mip_gap=0.05, node_limit=200)
SETTINGS = [(0.5, 0.0), (0.5, 0.5), (0.5, 1.0), (0.0, 0.0)]


def test_criterion_07_priority_trends(fat15, catalog):
    with criterion(7, "priority trends at desk scale") as d:
        t0 = time.perf_counter()
        prem_acc, std_acc = [], []
        std_delay = {s: [] for s in SETTINGS}
        prem_delay = {s: [] for s in SETTINGS}
        for seed in range(1, 11):
            for alpha, dp in SETTINGS:
                cfg = replace(DESK, seed=seed, policy=PolicyParams(alpha=alpha, delta_p=dp))
                res = run(cfg, fat15, catalog)
                SAFETY.setdefault("desk", []).extend(res.violations)
                pc = res.metrics.per_class
                std_delay[(alpha, dp)] += pc[PriorityClass.STANDARD.value].delays
                prem_delay[(alpha, dp)].append(
                    {dd.request.id: dd.response_delay for dd in res.decisions.values() if dd.request.is_premium})
                if (alpha, dp) == (0.5, 0.0):
                    prem_acc.append(pc[PriorityClass.PREMIUM.value].acceptance_rate)
                    std_acc.append(pc[PriorityClass.STANDARD.value].acceptance_rate)
        means = [float(np.mean(std_delay[s])) for s in SETTINGS]
        d["note"] = (f"acceptance P/S {np.mean(prem_acc):.3f}/{np.mean(std_acc):.3f}; Standard delay "
                     + " >= ".join(f"{m:.3f}" for m in means))
        assert all(p >= s for p, s in zip(prem_acc, std_acc))
        assert all(a >= b for a, b in zip(means, means[1:]))
        for i in range(10):
            assert all(prem_delay[s][i] == prem_delay[SETTINGS[0]][i] for s in SETTINGS)
        assert time.perf_counter() - t0 < 30 * 60


def test_criterion_08_variant_consistency(fat15, catalog):
    with criterion(8, "joint and sequential agree on single-request batches") as d:
        rng = np.random.default_rng(8)
        for case in range(20):
            stype = int(rng.integers(1, 4))
            req = make_request(catalog, id=0, slice_type=stype,
                               priority_class=PriorityClass.PREMIUM if rng.random() < 0.5 else PriorityClass.STANDARD,
                               arrival_time=float(rng.uniform(0, 0.9)), k_on=int(rng.integers(1, 7)),
                               lifetime=int(rng.integers(1, 4)),
                               pattern=int(rng.choice(catalog[stype].patterns)))
            cfg = replace(DESK, bg_mean_fraction=float(rng.uniform(0.0, 0.4)), mip_gap=0.0, node_limit=2000)
            a = run(replace(cfg, variant=JPR), fat15, catalog, [req])
            b = run(replace(cfg, variant=SPR), fat15, catalog, [req])
            SAFETY.setdefault("variants", []).extend(a.violations + b.violations)
            da, db = a.decisions[0], b.decisions[0]
            assert da.granted == db.granted and da.assignment.same_kappa(db.assignment), case
            assert da.cost == db.cost, case
        d["note"] = "20 cases"


def test_criterion_09_fcfs_degeneracy(fat15, catalog):
    with criterion(9, "alpha = 0 serves Premium first, then in arrival order") as d:
        batches = 0
        for seed in range(10):
            cfg = replace(DESK, seed=100 + seed, num_requests=40, policy=PolicyParams(alpha=0.0, delta_p=0.0))
            res = run(cfg, fat15, catalog)
            SAFETY.setdefault("fcfs", []).extend(res.violations)
            by_id = {r.id: r for r in res.requests}
            for k, ids in res.batches:
                batches += 1
                reqs = [by_id[i] for i in ids]
                assert all(arrival_slot(r.arrival_time, cfg.epsilon) == k for r in reqs)
                expect = sorted(reqs, key=lambda r: (not r.is_premium, r.arrival_time, r.id))
                assert [r.id for r in reqs] == [r.id for r in expect]
        d["note"] = f"{batches} batches inspected"


def test_criterion_10_safety():
    with criterion(10, "validator reports no violations in any run above") as d:
        assert SAFETY, "no runs recorded"
        total = sum(len(v) for v in SAFETY.values())
        d["note"] = ", ".join(f"{k}={len(v)}" for k, v in SAFETY.items())
        assert total == 0
