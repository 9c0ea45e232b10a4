"""Problem builders: joint reservation for a batch (given grant flags) and the single-slice case.

Per (slice, slot) the variables are, in this order:
  u[i]        binary, node i hosts at least one instance of the slice
  k[i, v]     integer, instances of VNF v on node i
  y[i, v]     continuous, positive increment of k[i, v] w.r.t. the previous slot
  b[ij, vw]   integer, multiplicity of vlink vw routed on infrastructure link ij
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..infra import RESOURCE_TYPES, InfrastructureNetwork
from ..slices import SliceRequest
from ..uncertainty import BackgroundTargets, SspTargets
from .assignment import ReservationAssignment, SliceAssignment, committed_usage
from .model import BINARY, CONTINUOUS, INTEGER, MilpModel, lp_name

FEAS_TOL = 1e-6


class BackgroundOverload(ValueError):
    """Background targets alone exceed some capacity."""


class CorruptedState(ValueError):
    """Previously committed reservations already exceed the capacity left by background."""


class MissingTargets(KeyError):
    pass


@dataclass(frozen=True)
class Committed:
    request: SliceRequest
    assignment: SliceAssignment


def _bg_at(bg, slot: int) -> BackgroundTargets:
    if isinstance(bg, BackgroundTargets):
        return bg
    return bg[slot]


def check_background(net: InfrastructureNetwork, bg: BackgroundTargets) -> None:
    for n in net.nodes:
        for t in RESOURCE_TYPES:
            target = bg.node.get((n.id, t), 0.0)
            if target > n.capacity.get(t, 0.0) + FEAS_TOL:
                raise BackgroundOverload(f"background target {target:.6g} exceeds capacity "
                                         f"{n.capacity.get(t, 0.0):.6g} at node {n.id}, type {t}")
    for ln in net.links:
        target = bg.link.get(ln.key, 0.0)
        if target > ln.bandwidth + FEAS_TOL:
            raise BackgroundOverload(f"background target {target:.6g} exceeds bandwidth "
                                     f"{ln.bandwidth:.6g} on link {ln.src}->{ln.dst}")


def residual_capacity(net: InfrastructureNetwork, bg: BackgroundTargets, committed: Sequence[Committed],
                      slot: int) -> tuple[dict, dict]:
    """Capacity left for new reservations in `slot`: a - B_hat - committed usage."""
    check_background(net, bg)
    used_n, used_l = committed_usage(((c.request, c.assignment) for c in committed), slot)
    node, link = {}, {}
    for n in net.nodes:
        for t in RESOURCE_TYPES:
            node[(n.id, t)] = n.capacity.get(t, 0.0) - bg.node.get((n.id, t), 0.0) - used_n.get((n.id, t), 0.0)
            if node[(n.id, t)] < -FEAS_TOL:
                raise CorruptedState(f"committed reservations exceed capacity at node {n.id}, type {t}, slot {slot}")
    for ln in net.links:
        link[ln.key] = ln.bandwidth - bg.link.get(ln.key, 0.0) - used_l.get(ln.key, 0.0)
        if link[ln.key] < -FEAS_TOL:
            raise CorruptedState(f"committed reservations exceed bandwidth on {ln.src}->{ln.dst}, slot {slot}")
    return node, link


def _round_up(target: float, r: float) -> float:
    """Smallest multiple of `r` reaching `target` (target itself when r is 0)."""
    if r <= 0 or target <= 0:
        return target
    return r * math.ceil(target / r - 1e-9)


def _count_bound(avail: float, r: float) -> int:
    return max(int(math.floor(max(avail, 0.0) / r + 1e-9)), 0)


def build_reservation(
    requests: Sequence[SliceRequest],
    grants: Sequence[bool] | Mapping[int, bool],
    committed: Sequence[Committed],
    net: InfrastructureNetwork,
    targets: Mapping[int, Mapping[int, SspTargets]],
    bg: BackgroundTargets | Mapping[int, BackgroundTargets],
) -> MilpModel:
    """Joint reservation model for `requests` with fixed grant flags."""
    if isinstance(grants, Mapping):
        grant = {r.id: bool(grants[r.id]) for r in requests}
    else:
        if len(grants) != len(requests):
            raise ValueError("one grant flag per request is required")
        grant = {r.id: bool(g) for r, g in zip(requests, grants)}
    reqs = sorted(requests, key=lambda r: r.id)
    if len({r.id for r in reqs}) != len(reqs):
        raise ValueError("duplicate request ids in batch")
    for r in reqs:
        if not grant[r.id]:
            continue
        for slot in r.active_slots:
            if r.id not in targets or slot not in targets[r.id]:
                raise MissingTargets(f"no demand targets for slice {r.id} at slot {slot}")

    slots = sorted({sl for r in reqs for sl in r.active_slots})
    resid = {sl: residual_capacity(net, _bg_at(bg, sl), committed, sl) for sl in slots}
    nodes = sorted(net.node_ids)
    links = sorted(net.link_keys)

    m = MilpModel()
    m.meta.update(slices=[r.id for r in reqs], slots=slots, grants=dict(grant))
    cap_terms_n: dict[tuple, dict[int, float]] = {}
    cap_terms_l: dict[tuple, dict[int, float]] = {}

    for r in reqs:
        tmpl = r.template
        on = grant[r.id]
        for sl in r.active_slots:
            res_n, res_l = resid[sl]
            tgt = targets[r.id][sl].as_dict() if on else {}
            # instance bounds implied by residual capacity
            ub_k = {}
            for i in nodes:
                for v in tmpl.vnfs:
                    caps = [_count_bound(res_n[(i, t)], tmpl.r(v, t)) for t in RESOURCE_TYPES if tmpl.r(v, t) > 0]
                    ub_k[(i, v)] = min(caps) if caps else None
            for (i, v), ub in ub_k.items():
                if ub is None:
                    # a VNF with no node footprint is bounded by what the rest of the chain can host
                    others = [sum(ub_k[(j, w)] or 0 for j in nodes) for w in tmpl.vnfs if w != v]
                    need = max((math.ceil(tgt.get((v, t), 0.0)) for t in RESOURCE_TYPES), default=0)
                    ub_k[(i, v)] = max([need, *others])
            if not on:
                ub_k = {key: 0 for key in ub_k}
            total_ub = sum(ub_k.values())

            u_idx, k_idx, y_idx = {}, {}, {}
            for i in nodes:
                spec = net.node(i)
                u_idx[i] = m.add_var(("u", r.id, sl, i), lp_name("u", r.id, sl, i), BINARY, 0, 1 if on else 0,
                                     spec.fixed_cost, priority=2)
            for i in nodes:
                spec = net.node(i)
                for v in tmpl.vnfs:
                    unit = sum(tmpl.r(v, t) * spec.unit_cost.get(t, 0.0) for t in RESOURCE_TYPES)
                    k_idx[(i, v)] = m.add_var(("k", r.id, sl, i, v), lp_name("k", r.id, sl, i, v), INTEGER,
                                              0, ub_k[(i, v)], unit, priority=1)
            for i in nodes:
                spec = net.node(i)
                for v in tmpl.vnfs:
                    y_idx[(i, v)] = m.add_var(("y", r.id, sl, i, v), lp_name("y", r.id, sl, i, v), CONTINUOUS,
                                              0, ub_k[(i, v)], spec.adaptation_cost)
            b_idx = {}
            for lk in links:
                ln = net.link(lk)
                for vl in tmpl.vlinks:
                    rb = tmpl.link_demand[vl]
                    ub = _count_bound(res_l[lk], rb) if rb > 0 else total_ub
                    b_idx[(lk, vl)] = m.add_var(("b", r.id, sl, lk, vl), lp_name("b", r.id, sl, *lk, *vl), INTEGER,
                                                0, ub if on else 0, rb * ln.unit_cost)

            # demand cover; the right-hand side is rounded up to a whole number of instances,
            # which leaves the integer feasible set unchanged and tightens the relaxation
            for v in tmpl.vnfs:
                for t in RESOURCE_TYPES:
                    m.add_row(lp_name("cover", r.id, sl, v, t), {k_idx[(i, v)]: tmpl.r(v, t) for i in nodes}, ">=",
                              _round_up(tgt.get((v, t), 0.0), tmpl.r(v, t)), "cover_node", (r.id, sl, v, t))
            for vl in tmpl.vlinks:
                rb = tmpl.link_demand[vl]
                m.add_row(lp_name("cover", r.id, sl, *vl), {b_idx[(lk, vl)]: rb for lk in links},
                          ">=", _round_up(tgt.get(vl, 0.0), rb), "cover_link", (r.id, sl, vl))
            # flow conservation; loop-backs appear on both sides and cancel
            for vl in tmpl.vlinks:
                fo, fi = tmpl.out_fraction(vl), tmpl.in_fraction(vl)
                for i in nodes:
                    row: dict[int, float] = {}
                    for lk in links:
                        if lk[0] == lk[1]:
                            continue
                        if lk[0] == i:
                            row[b_idx[(lk, vl)]] = row.get(b_idx[(lk, vl)], 0.0) + 1.0
                        elif lk[1] == i:
                            row[b_idx[(lk, vl)]] = row.get(b_idx[(lk, vl)], 0.0) - 1.0
                    row[k_idx[(i, vl[0])]] = row.get(k_idx[(i, vl[0])], 0.0) - fo
                    row[k_idx[(i, vl[1])]] = row.get(k_idx[(i, vl[1])], 0.0) + fi
                    m.add_row(lp_name("flow", r.id, sl, i, *vl), row, "==", 0.0, "flow", (r.id, sl, i, vl))
            # adaptation: y >= k_l - k_{l-1}, with k_{l-1} = 0 at activation
            for i in nodes:
                for v in tmpl.vnfs:
                    row = {y_idx[(i, v)]: 1.0, k_idx[(i, v)]: -1.0}
                    if sl - 1 >= r.k_on:
                        row[m.index[("k", r.id, sl - 1, i, v)]] = 1.0
                    m.add_row(lp_name("adapt", r.id, sl, i, v), row, ">=", 0.0, "adapt", (r.id, sl, i, v))
            for i in nodes:
                for v in tmpl.vnfs:
                    m.add_row(lp_name("adaptnn", r.id, sl, i, v), {y_idx[(i, v)]: 1.0}, ">=", 0.0, "adapt_nonneg",
                              (r.id, sl, i, v))
            # node usage linking
            for i in nodes:
                big = sum(ub_k[(i, v)] for v in tmpl.vnfs)
                row = {u_idx[i]: float(big)}
                for v in tmpl.vnfs:
                    row[k_idx[(i, v)]] = -1.0
                m.add_row(lp_name("link", r.id, sl, i), row, ">=", 0.0, "linking", (r.id, sl, i))
            # per-VNF linking rows are implied by the aggregate one for integer points but cut the relaxation
            for i in nodes:
                for v in tmpl.vnfs:
                    if ub_k[(i, v)] > 0:
                        m.add_row(lp_name("linkv", r.id, sl, i, v), {u_idx[i]: float(ub_k[(i, v)]),
                                                                     k_idx[(i, v)]: -1.0},
                                  ">=", 0.0, "linking_vnf", (r.id, sl, i, v))
            # capacity contributions
            for i in nodes:
                for v in tmpl.vnfs:
                    for t in RESOURCE_TYPES:
                        if tmpl.r(v, t):
                            cap_terms_n.setdefault((sl, i, t), {})[k_idx[(i, v)]] = tmpl.r(v, t)
            for lk in links:
                for vl in tmpl.vlinks:
                    if tmpl.link_demand[vl]:
                        cap_terms_l.setdefault((sl, lk), {})[b_idx[(lk, vl)]] = tmpl.link_demand[vl]

    for sl in slots:
        res_n, res_l = resid[sl]
        for i in nodes:
            for t in RESOURCE_TYPES:
                m.add_row(lp_name("cap", sl, i, t), cap_terms_n.get((sl, i, t), {}), "<=",
                          max(res_n[(i, t)], 0.0), "capacity_node", (sl, i, t))
        for lk in links:
            m.add_row(lp_name("cap", sl, *lk), cap_terms_l.get((sl, lk), {}), "<=", max(res_l[lk], 0.0),
                      "capacity_link", (sl, lk))
    return m


def build_problem2(requests, grants, committed, net, targets, bg) -> MilpModel:
    """Joint reservation of a processed batch given its grant vector."""
    return build_reservation(requests, grants, committed, net, targets, bg)


def build_problem3(request: SliceRequest, peers_committed, net, targets, bg) -> MilpModel:
    """Single-slice reservation against already committed peers (pending peers count as zero)."""
    return build_reservation([request], [True], peers_committed, net, targets, bg)


def extract_assignment(model: MilpModel, x: np.ndarray, requests: Sequence[SliceRequest]) -> ReservationAssignment:
    """Map a solution vector back to per-slice kappa, rounding integer variables."""
    grants = model.meta.get("grants", {})
    out = {r.id: SliceAssignment(r.id, bool(grants.get(r.id, True)), {}, {}, {}) for r in requests}
    for idx, var in enumerate(model.variables):
        kind, sid, sl, *rest = var.key
        a = out[sid]
        val = x[idx]
        if kind == "k":
            cnt = int(round(val))
            if cnt:
                a.nodes[(sl, rest[0], rest[1])] = cnt
        elif kind == "b":
            cnt = int(round(val))
            if cnt:
                a.links[(sl, rest[0], rest[1])] = cnt
        elif kind == "y":
            a.adjustments[(sl, rest[0], rest[1])] = float(val)
    # y with zero adaptation cost is not pinned by the objective; report its canonical value
    for idx, var in enumerate(model.variables):
        if var.key[0] == "y" and model.objective.get(idx, 0.0) == 0.0:
            _, sid, sl, i, v = var.key
            a = out[sid]
            prev = a.nodes.get((sl - 1, i, v), 0)
            a.adjustments[(sl, i, v)] = float(max(a.nodes.get((sl, i, v), 0) - prev, 0))
    for a in out.values():
        a.adjustments = {k: v for k, v in a.adjustments.items() if abs(v) > 1e-9}
    return ReservationAssignment(out)


def expected_counts(net: InfrastructureNetwork, request: SliceRequest) -> dict[str, int]:
    """Per-slice variable and row counts predicted by the problem size formulas."""
    n, e = len(net.node_ids), len(net.link_keys)
    ns, es = len(request.template.vnfs), len(request.template.vlinks)
    slots = request.lifetime
    return {
        "variables": slots * (n + 2 * n * ns + e * es),
        "flow": slots * n * es,
        "cover": slots * (ns * len(RESOURCE_TYPES) + es),
        "adapt": slots * 2 * n * ns,
    }
