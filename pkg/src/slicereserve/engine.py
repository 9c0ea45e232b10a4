"""Slotted simulation of prioritized slice admission and resource reservation.

Slot k spans [k, k+1) in units of T = 1. Requests received in
T_k = [k - eps, k + 1 - eps) are decided together at time (k + 1) - eps,
either jointly (J-PR: one model for the whole batch, withdrawing grants from
the lowest priority on infeasibility) or sequentially (S-PR: one model per
request in processing order).
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .infra import RESOURCE_TYPES, InfrastructureNetwork
from .milp import (INFEASIBLE, OPTIMAL, TIMEOUT, Committed, CostBreakdown, SliceAssignment, ZERO_COST,
                   build_problem2, build_problem3, committed_usage, extract_assignment, slice_cost, solve,
                   validate_assignment)
from .milp.build import check_background
from .policy import JUST_IN_TIME, PolicyParams, PolicyState, denial_order
from .slices import PATTERN2_DEFAULT, PriorityClass, SliceRequest, SliceType, make_request
from .uncertainty import BackgroundModel, BackgroundTargets, SspTargets, background_targets, slice_targets

log = logging.getLogger(__name__)

JPR = "jpr"
SPR = "spr"
STREAMS = ("arrivals", "times", "types", "patterns", "delays", "lifetimes", "premium")


@dataclass(frozen=True)
class ScenarioConfig:
    label: str = "default"
    seed: int = 1
    slot_duration: float = 1.0
    epsilon: float = 0.1
    horizon: int | None = None  # slots with arrivals
    num_requests: int | None = 200  # alternative stopping rule for generation
    arrival_rate: float = 2.0
    premium_fraction: float | None = 0.25
    premium_count: int | None = None
    activation_delay: tuple[int, int] = (1, 6)
    lifetime: tuple[int, int] = (1, 3)
    slice_types: tuple[int, ...] = (1, 2, 3)
    pattern_profile: tuple[float, ...] = PATTERN2_DEFAULT
    policy: PolicyParams = field(default_factory=PolicyParams)
    variant: str = JPR
    impact_threshold: float = 0.1
    bg_mean_fraction: float = 0.2
    bg_std_fraction: float = 0.05
    solver: str = "builtin"
    time_limit: float = 30.0
    node_limit: int = 2000  # deterministic work budget of the builtin solver
    mip_gap: float = 0.01
    on_timeout: str = "accept"  # keep a timed-out incumbent, or "deny"
    gamma_tol: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.slot_duration != 1.0:
            raise ValueError("slot duration is normalised to 1")
        if self.horizon is None and self.num_requests is None:
            raise ValueError("either horizon or num_requests is required")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.num_requests is not None and self.num_requests < 0:
            raise ValueError("num_requests must be non-negative")
        if self.arrival_rate <= 0:
            raise ValueError("arrival rate must be positive")
        if self.variant not in (JPR, SPR):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.on_timeout not in ("accept", "deny"):
            raise ValueError("on_timeout must be 'accept' or 'deny'")
        if self.premium_fraction is not None and not 0.0 <= self.premium_fraction <= 1.0:
            raise ValueError("premium fraction must lie in [0, 1]")
        for lo, hi in (self.activation_delay, self.lifetime):
            if lo < 1 or hi < lo:
                raise ValueError("integer ranges need 1 <= low <= high")


def variant_justintime(config: ScenarioConfig) -> ScenarioConfig:
    """Every request, Premium included, is processed in the slot before its activation."""
    return replace(config, policy=replace(config.policy, processing=JUST_IN_TIME))


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """One independent generator per purpose, derived from the master seed."""
    return {name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
            for i, name in enumerate(STREAMS)}


def generate_requests(config: ScenarioConfig, catalog: Mapping[int, SliceType],
                      streams: Mapping[str, np.random.Generator] | None = None) -> list[SliceRequest]:
    """Time-ordered requests with Poisson arrivals per slot and uniform attributes."""
    rs = dict(streams) if streams is not None else rng_streams(config.seed)
    eps = config.epsilon
    raw = []
    k = 0
    while True:
        if config.horizon is not None and k >= config.horizon:
            break
        if config.horizon is None and len(raw) >= config.num_requests:
            break
        n = int(rs["arrivals"].poisson(config.arrival_rate))
        lo, hi = max(k - eps, 0.0), k + 1 - eps
        times = np.sort(rs["times"].uniform(lo, hi, size=n))
        for t in times:
            stype = int(rs["types"].choice(config.slice_types))
            patterns = catalog[stype].patterns
            pattern = int(rs["patterns"].choice(patterns)) if len(patterns) > 1 else int(patterns[0])
            delay = int(rs["delays"].integers(config.activation_delay[0], config.activation_delay[1] + 1))
            life = int(rs["lifetimes"].integers(config.lifetime[0], config.lifetime[1] + 1))
            raw.append((float(t), k, stype, pattern, delay, life))
        k += 1
    if config.horizon is None:
        raw = raw[: config.num_requests]
    n = len(raw)
    if config.premium_count is not None:
        n_prem = config.premium_count
    elif config.premium_fraction is not None:
        n_prem = int(round(config.premium_fraction * n))
    else:
        n_prem = 0
    if n_prem > n:
        raise ValueError(f"premium_count {n_prem} exceeds the {n} generated requests")
    premium = set(rs["premium"].choice(n, size=n_prem, replace=False).tolist()) if n_prem else set()
    out = []
    for idx, (t, k, stype, pattern, delay, life) in enumerate(raw):
        cls = PriorityClass.PREMIUM if idx in premium else PriorityClass.STANDARD
        out.append(make_request(catalog, id=idx, slice_type=stype, priority_class=cls, arrival_time=t,
                                k_on=k + delay, lifetime=life, pattern=pattern,
                                pattern_profile=config.pattern_profile))
    return out


def arrival_slot(t: float, epsilon: float) -> int:
    """Slot whose reception interval [k - eps, k + 1 - eps) contains t."""
    return int(math.floor(t + epsilon))


class TargetCache:
    """Demand targets depend only on (type, pattern, lifetime); activation shifts the slots."""

    def __init__(self, tol: float = 1e-4):
        self.tol = tol
        self._cache: dict[tuple, list[SspTargets]] = {}

    def get(self, req: SliceRequest) -> dict[int, SspTargets]:
        key = (req.slice_type, req.user_count.success_prob, req.user_count.trials, req.target_ssp,
               id(req.user_stats))
        if key not in self._cache:
            per_slot = slice_targets(req, self.tol)
            self._cache[key] = [per_slot[s] for s in req.active_slots]
        return dict(zip(req.active_slots, self._cache[key]))


@dataclass
class Decision:
    request: SliceRequest
    decision_slot: int
    decision_time: float
    granted: bool
    assignment: SliceAssignment
    cost: CostBreakdown
    adjustments: dict[int, float]  # positive instance increments per active slot
    gammas: dict[int, float]
    solver_status: str

    @property
    def response_delay(self) -> float:
        return self.decision_time - self.request.arrival_time


@dataclass
class ClassMetrics:
    requests: int = 0
    accepted: int = 0
    delays: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    adjustments_per_slot: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.requests if self.requests else float("nan")

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.delays)) if self.delays else float("nan")

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.costs)) if self.costs else float("nan")

    @property
    def mean_adjustments(self) -> float:
        return float(np.mean(self.adjustments_per_slot)) if self.adjustments_per_slot else float("nan")


@dataclass
class SimulationMetrics:
    per_class: dict[str, ClassMetrics]
    solver_time: float
    solver_calls: int
    batch_times: list[float]

    @property
    def overall(self) -> ClassMetrics:
        out = ClassMetrics()
        for m in self.per_class.values():
            out.requests += m.requests
            out.accepted += m.accepted
            out.delays += m.delays
            out.costs += m.costs
            out.adjustments_per_slot += m.adjustments_per_slot
        return out


@dataclass
class SimulationResult:
    config: ScenarioConfig
    requests: list[SliceRequest]
    decisions: dict[int, Decision]
    batches: list[tuple[int, list[int]]]  # (slot, request ids in processing order)
    utilization: list[tuple]
    violations: list[str]
    metrics: SimulationMetrics
    targets: dict[int, dict[int, SspTargets]]
    background: BackgroundTargets


class _Solver:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.time = 0.0
        self.calls = 0

    def __call__(self, model):
        cfg = self.config
        res = solve(model, time_limit=cfg.time_limit, backend=cfg.solver, rel_gap=cfg.mip_gap,
                    node_limit=cfg.node_limit)
        self.time += res.wall_time
        self.calls += 1
        usable = res.status == OPTIMAL or (res.status == TIMEOUT and res.has_solution and cfg.on_timeout == "accept")
        if res.status == TIMEOUT:
            log.info("solver budget exhausted (%s incumbent)", "with" if res.has_solution else "without")
        return res, usable


def run(config: ScenarioConfig, net: InfrastructureNetwork, catalog: Mapping[int, SliceType],
        requests: Sequence[SliceRequest] | None = None) -> SimulationResult:
    """Simulate the whole request stream until every request has been decided."""
    bg_model = BackgroundModel.from_fractions(net, config.bg_mean_fraction, config.bg_std_fraction,
                                              config.impact_threshold)
    bg = background_targets(bg_model)
    check_background(net, bg)
    reqs = list(requests) if requests is not None else generate_requests(config, catalog)
    by_slot: dict[int, list[SliceRequest]] = {}
    for r in reqs:
        if not r.receivable_before(config.epsilon):
            raise ValueError(f"request {r.id} arrives too late for its activation slot")
        by_slot.setdefault(arrival_slot(r.arrival_time, config.epsilon), []).append(r)
    req_by_id = {r.id: r for r in reqs}

    cache = TargetCache(config.gamma_tol)
    targets: dict[int, dict[int, SspTargets]] = {}
    state = PolicyState(config.policy)
    solver = _Solver(config)
    committed: list[Committed] = []
    frozen: dict[int, SliceAssignment] = {}
    decisions: dict[int, Decision] = {}
    batches: list[tuple[int, list[int]]] = []
    violations: list[str] = []
    batch_times: list[float] = []
    last_arrival_slot = max(by_slot, default=-1)

    k = min(by_slot, default=0)
    while k <= last_arrival_slot or state.outstanding:
        for r in sorted(by_slot.get(k, []), key=lambda r: (r.arrival_time, r.id)):
            state.receive(r, k)
            targets[r.id] = cache.get(r)
        batch = state.batch(k)
        if batch:
            batches.append((k, [p.id for p in batch]))
            t0 = solver.time
            if config.variant == JPR:
                granted = _process_joint(batch, committed, net, targets, bg, solver)
            else:
                granted = _process_sequential(batch, committed, net, targets, bg, solver)
            batch_times.append(solver.time - t0)
            new = {}
            for p in batch:
                r = p.request
                a, status = granted.get(r.id, (SliceAssignment.denied(r.id), INFEASIBLE))
                new[r.id] = a
                decisions[r.id] = _decision(r, k, config.epsilon, a, net, targets[r.id], status)
            violations += [f"slot {k}: {v}" for v in validate_assignment(
                new, net, req_by_id, targets, bg, {c.request.id: c.assignment for c in committed})]
            for sid, a in new.items():
                if a.granted:
                    committed.append(Committed(req_by_id[sid], a))
                    frozen[sid] = copy.deepcopy(a)
            state.mark(batch, k)
        for c in committed:
            if not c.assignment.same_kappa(frozen[c.request.id]):
                violations.append(f"slot {k}: committed assignment of slice {c.request.id} changed")
        violations += [f"slot {k}: {v}" for v in _capacity_check(net, bg, committed, k + 1)]
        state.age(k + 1)
        k += 1

    utilization = _utilization(net, bg, committed)
    metrics = _metrics(decisions, solver, batch_times)
    return SimulationResult(config, reqs, decisions, batches, utilization, violations, metrics, targets, bg)


def _process_joint(batch, committed, net, targets, bg, solver) -> dict:
    reqs = [p.request for p in batch]
    grants = {r.id: True for r in reqs}
    withdraw = denial_order(batch)
    out: dict = {}
    while any(grants.values()):
        model = build_problem2(reqs, grants, committed, net, targets, bg)
        res, usable = solver(model)
        if usable:
            assign = extract_assignment(model, res.x, reqs)
            return {r.id: (assign[r.id], res.status) for r in reqs if grants[r.id]}
        nxt = next(p for p in withdraw if grants[p.id])
        grants[nxt.id] = False
    return out


def _process_sequential(batch, committed, net, targets, bg, solver) -> dict:
    local = list(committed)
    out: dict = {}
    for p in batch:
        r = p.request
        model = build_problem3(r, local, net, targets, bg)
        res, usable = solver(model)
        if usable:
            a = extract_assignment(model, res.x, [r])[r.id]
            out[r.id] = (a, res.status)
            local.append(Committed(r, a))
    return out


def _decision(r: SliceRequest, k: int, eps: float, a: SliceAssignment, net, tg, status: str) -> Decision:
    granted = a.granted
    cost = slice_cost(a, net, r) if granted else ZERO_COST
    incr = a.positive_increments(r)
    adj = {sl: float(sum(v for (s, _, _), v in incr.items() if s == sl)) for sl in r.active_slots} if granted else {}
    return Decision(r, k, (k + 1) - eps, granted, a, cost, adj, {sl: t.gamma for sl, t in tg.items()},
                    status)


def _capacity_check(net, bg, committed, slot) -> list[str]:
    """Reservations active at `slot` plus background targets stay within capacity."""
    used_n, used_l = committed_usage(((c.request, c.assignment) for c in committed), slot)
    out = []
    for (i, t), u in used_n.items():
        limit = net.capacity(i, t) - bg.node.get((i, t), 0.0)
        if u > limit + 1e-6:
            out.append(f"capacity[slot={slot},node={i},type={t}]: {u:.6g} > {limit:.6g}")
    for lk, u in used_l.items():
        limit = net.link(lk).bandwidth - bg.link.get(lk, 0.0)
        if u > limit + 1e-6:
            out.append(f"capacity[slot={slot},link={lk[0]}->{lk[1]}]: {u:.6g} > {limit:.6g}")
    return out


def _utilization(net, bg, committed) -> list[tuple]:
    slots = sorted({sl for c in committed for sl in c.request.active_slots})
    rows = []
    for sl in slots:
        used_n, used_l = committed_usage(((c.request, c.assignment) for c in committed), sl)
        for i in sorted(net.node_ids):
            for t in RESOURCE_TYPES:
                cap = net.capacity(i, t)
                if cap > 0 or used_n.get((i, t)):
                    rows.append((sl, i, t, used_n.get((i, t), 0.0), bg.node.get((i, t), 0.0), cap))
        for lk in sorted(net.link_keys):
            rows.append((sl, f"{lk[0]}->{lk[1]}", "b", used_l.get(lk, 0.0), bg.link.get(lk, 0.0),
                         net.link(lk).bandwidth))
    return rows


def _metrics(decisions: Mapping[int, Decision], solver: _Solver, batch_times) -> SimulationMetrics:
    per_class = {c.value: ClassMetrics() for c in PriorityClass}
    for d in decisions.values():
        m = per_class[d.request.priority_class.value]
        m.requests += 1
        m.delays.append(d.response_delay)
        if d.granted:
            m.accepted += 1
            m.costs.append(d.cost.total)
            m.adjustments_per_slot.append(sum(d.adjustments.values()) / d.request.lifetime)
    return SimulationMetrics(per_class, solver.time, solver.calls, batch_times)


def assignment_to_json(a: SliceAssignment) -> str:
    nodes = [[sl, i, v, n] for (sl, i, v), n in sorted(a.nodes.items()) if n]
    links = [[sl, lk[0], lk[1], vl[0], vl[1], n] for (sl, lk, vl), n in sorted(a.links.items()) if n]
    return json.dumps({"nodes": nodes, "links": links}, separators=(",", ":"))


def assignment_from_json(sid: int, granted: bool, text: str) -> SliceAssignment:
    data = json.loads(text) if text else {"nodes": [], "links": []}
    nodes = {(int(sl), i, v): int(n) for sl, i, v, n in data["nodes"]}
    links = {(int(sl), (i, j), (v, w)): int(n) for sl, i, j, v, w, n in data["links"]}
    return SliceAssignment(sid, granted, nodes, links)
