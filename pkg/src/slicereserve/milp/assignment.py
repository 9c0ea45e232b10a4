"""Reservation assignments, their cost, and an independent constraint re-check."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..infra import RESOURCE_TYPES, InfrastructureNetwork
from ..slices import SliceRequest
from ..uncertainty import BackgroundTargets, SspTargets

TOL = 1e-6


@dataclass
class SliceAssignment:
    """kappa mapping of one slice over its active slots; zero entries are omitted."""

    slice_id: int
    granted: bool
    nodes: dict[tuple[int, str, str], int] = field(default_factory=dict)  # (slot, node, vnf)
    links: dict[tuple[int, tuple[str, str], tuple[str, str]], int] = field(default_factory=dict)
    adjustments: dict[tuple[int, str, str], float] | None = None  # y as returned by a solver

    @classmethod
    def denied(cls, slice_id: int) -> "SliceAssignment":
        return cls(slice_id, False)

    def kappa(self, slot: int, node: str, vnf: str) -> int:
        return self.nodes.get((slot, node, vnf), 0)

    def node_used(self) -> dict[tuple[int, str], int]:
        used: dict[tuple[int, str], int] = {}
        for (slot, node, _), cnt in self.nodes.items():
            if cnt > 0:
                used[(slot, node)] = 1
        return used

    def positive_increments(self, request: SliceRequest) -> dict[tuple[int, str, str], int]:
        """max(kappa_l - kappa_{l-1}, 0) per (slot, node, vnf), kappa being 0 outside the active window."""
        out = {}
        for (slot, node, vnf), cnt in self.nodes.items():
            prev = self.kappa(slot - 1, node, vnf) if slot - 1 >= request.k_on else 0
            if cnt > prev:
                out[(slot, node, vnf)] = cnt - prev
        return out

    def reserved_node(self, request: SliceRequest, slot: int) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for (sl, node, vnf), cnt in self.nodes.items():
            if sl != slot:
                continue
            for t in RESOURCE_TYPES:
                r = request.template.r(vnf, t)
                if r:
                    out[(node, t)] = out.get((node, t), 0.0) + cnt * r
        return out

    def reserved_link(self, request: SliceRequest, slot: int) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for (sl, link, vl), cnt in self.links.items():
            if sl == slot:
                out[link] = out.get(link, 0.0) + cnt * request.template.link_demand[vl]
        return out

    def same_kappa(self, other: "SliceAssignment") -> bool:
        strip = lambda d: {k: v for k, v in d.items() if v}
        return (self.granted == other.granted and strip(self.nodes) == strip(other.nodes)
                and strip(self.links) == strip(other.links))


@dataclass
class ReservationAssignment:
    """Decisions for a batch of slices: grant flags plus per-slice kappa."""

    slices: dict[int, SliceAssignment] = field(default_factory=dict)

    @property
    def granted(self) -> dict[int, bool]:
        return {sid: a.granted for sid, a in self.slices.items()}

    @property
    def node_counts(self) -> dict[tuple, int]:
        return {(sid, *k): v for sid, a in self.slices.items() for k, v in a.nodes.items()}

    @property
    def link_counts(self) -> dict[tuple, int]:
        return {(sid, *k): v for sid, a in self.slices.items() for k, v in a.links.items()}

    def __getitem__(self, sid: int) -> SliceAssignment:
        return self.slices[sid]


@dataclass(frozen=True)
class CostBreakdown:
    resource_cost: float
    fixed_cost: float
    adaptation_cost: float

    @property
    def total(self) -> float:
        return self.resource_cost + self.fixed_cost + self.adaptation_cost

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(self.resource_cost + other.resource_cost, self.fixed_cost + other.fixed_cost,
                             self.adaptation_cost + other.adaptation_cost)


ZERO_COST = CostBreakdown(0.0, 0.0, 0.0)


def cost_breakdown(assignment: SliceAssignment, net: InfrastructureNetwork, request: SliceRequest,
                   slot: int) -> CostBreakdown:
    """Resource, fixed and adaptation cost charged for one slice in one slot."""
    tmpl = request.template
    c_r = 0.0
    used = set()
    for (sl, node, vnf), cnt in assignment.nodes.items():
        if sl != slot or cnt == 0:
            continue
        spec = net.node(node)
        c_r += cnt * sum(tmpl.r(vnf, t) * spec.unit_cost.get(t, 0.0) for t in RESOURCE_TYPES)
        used.add(node)
    for (sl, link, vl), cnt in assignment.links.items():
        if sl == slot and cnt:
            c_r += cnt * tmpl.link_demand[vl] * net.link(link).unit_cost
    c_f = sum(net.node(n).fixed_cost for n in used)
    c_a = 0.0
    for (sl, node, vnf), cnt in assignment.nodes.items():
        if sl != slot:
            continue
        prev = assignment.kappa(slot - 1, node, vnf) if slot - 1 >= request.k_on else 0
        c_a += max(cnt - prev, 0) * net.node(node).adaptation_cost
    return CostBreakdown(c_r, c_f, c_a)


def slice_cost(assignment: SliceAssignment, net: InfrastructureNetwork, request: SliceRequest) -> CostBreakdown:
    total = ZERO_COST
    for slot in request.active_slots:
        total = total + cost_breakdown(assignment, net, request, slot)
    return total


def validate_assignment(
    assignment: ReservationAssignment | Mapping[int, SliceAssignment],
    net: InfrastructureNetwork,
    requests: Mapping[int, SliceRequest],
    targets: Mapping[int, Mapping[int, SspTargets]],
    bg: BackgroundTargets | Mapping[int, BackgroundTargets],
    committed: Mapping[int, SliceAssignment] | None = None,
    *,
    tol: float = TOL,
) -> list[str]:
    """Re-check cover, capacity, flow, adaptation and convention constraints.

    `assignment` holds the decisions under test; `committed` holds previously
    granted slices, which count towards capacity and must not reappear with a
    different kappa. Returns human-readable violation strings (empty if valid).
    """
    slices = assignment.slices if isinstance(assignment, ReservationAssignment) else dict(assignment)
    committed = dict(committed or {})
    out: list[str] = []

    for sid, a in slices.items():
        if sid in committed and not a.same_kappa(committed[sid]):
            out.append(f"immutable[s={sid}]: committed assignment was modified")

    everything = dict(committed)
    everything.update(slices)

    for sid, a in slices.items():
        req = requests[sid]
        tmpl = req.template
        window = set(req.active_slots)
        for (slot, node, vnf), cnt in a.nodes.items():
            if cnt < 0 or cnt != int(cnt):
                out.append(f"domain[s={sid},slot={slot},node={node},vnf={vnf}]: {cnt} is not a non-negative integer")
            if cnt and slot not in window:
                out.append(f"convention[s={sid},slot={slot}]: kappa nonzero outside the active window")
            if cnt and not a.granted:
                out.append(f"convention[s={sid}]: kappa nonzero for a denied slice")
        for (slot, link, vl), cnt in a.links.items():
            if cnt < 0 or cnt != int(cnt):
                out.append(f"domain[s={sid},slot={slot},link={link},vlink={vl}]: {cnt} is not a non-negative integer")
            if cnt and slot not in window:
                out.append(f"convention[s={sid},slot={slot}]: link kappa nonzero outside the active window")
            if cnt and not a.granted:
                out.append(f"convention[s={sid}]: link kappa nonzero for a denied slice")
            if not net.has_link(link):
                out.append(f"domain[s={sid}]: unknown infrastructure link {link}")
        if not a.granted:
            continue
        for slot in req.active_slots:
            tgt = targets[sid][slot].as_dict()
            for v in tmpl.vnfs:
                for t in RESOURCE_TYPES:
                    need = tgt.get((v, t), 0.0)
                    have = sum(a.kappa(slot, i, v) for i in net.node_ids) * tmpl.r(v, t)
                    if have < need - tol:
                        out.append(f"cover[s={sid},slot={slot},vnf={v},type={t}]: {have:.6g} < {need:.6g}")
            for vl in tmpl.vlinks:
                need = tgt.get(vl, 0.0)
                have = sum(cnt for (sl, _, w), cnt in a.links.items() if sl == slot and w == vl) \
                    * tmpl.link_demand[vl]
                if have < need - tol:
                    out.append(f"cover[s={sid},slot={slot},vlink={vl[0]}->{vl[1]}]: {have:.6g} < {need:.6g}")
            for vl in tmpl.vlinks:
                fo, fi = tmpl.out_fraction(vl), tmpl.in_fraction(vl)
                net_out: dict[str, int] = {}
                for (sl, (i, j), w), cnt in a.links.items():
                    if sl == slot and w == vl and i != j:
                        net_out[i] = net_out.get(i, 0) + cnt
                        net_out[j] = net_out.get(j, 0) - cnt
                for i in net.node_ids:
                    rhs = fo * a.kappa(slot, i, vl[0]) - fi * a.kappa(slot, i, vl[1])
                    if abs(net_out.get(i, 0) - rhs) > tol:
                        out.append(f"flow[s={sid},slot={slot},node={i},vlink={vl[0]}->{vl[1]}]: "
                                   f"{net_out.get(i, 0)} != {rhs:.6g}")
        if a.adjustments is not None:
            for slot in req.active_slots:
                for i in net.node_ids:
                    for v in tmpl.vnfs:
                        y = a.adjustments.get((slot, i, v), 0.0)
                        prev = a.kappa(slot - 1, i, v) if slot - 1 >= req.k_on else 0
                        if y < max(a.kappa(slot, i, v) - prev, 0) - tol:
                            out.append(f"adapt[s={sid},slot={slot},node={i},vnf={v}]: y={y} below increment")

    slots = set()
    for sid, a in everything.items():
        slots.update(sl for (sl, _, _) in a.nodes)
        slots.update(sl for (sl, _, _) in a.links)
    for slot in sorted(slots):
        b = bg[slot] if not isinstance(bg, BackgroundTargets) else bg
        node_use: dict[tuple[str, str], float] = {}
        link_use: dict[tuple[str, str], float] = {}
        for sid, a in everything.items():
            req = requests[sid]
            for k, val in a.reserved_node(req, slot).items():
                node_use[k] = node_use.get(k, 0.0) + val
            for k, val in a.reserved_link(req, slot).items():
                link_use[k] = link_use.get(k, 0.0) + val
        for (node, t), used in sorted(node_use.items()):
            limit = net.capacity(node, t) - b.node.get((node, t), 0.0)
            if used > limit + tol:
                out.append(f"capacity[slot={slot},node={node},type={t}]: {used:.6g} > {limit:.6g}")
        for link, used in sorted(link_use.items()):
            limit = net.link(link).bandwidth - b.link.get(link, 0.0)
            if used > limit + tol:
                out.append(f"capacity[slot={slot},link={link[0]}->{link[1]}]: {used:.6g} > {limit:.6g}")
    return out


def committed_usage(committed: Iterable[tuple[SliceRequest, SliceAssignment]], slot: int):
    """Node/type and link reservations of granted slices in `slot`."""
    node: dict[tuple[str, str], float] = {}
    link: dict[tuple[str, str], float] = {}
    for req, a in committed:
        if not a.granted or slot not in req.active_slots:
            continue
        for k, v in a.reserved_node(req, slot).items():
            node[k] = node.get(k, 0.0) + v
        for k, v in a.reserved_link(req, slot).items():
            link[k] = link.get(k, 0.0) + v
    return node, link
