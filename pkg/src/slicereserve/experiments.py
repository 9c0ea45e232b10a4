"""Small reproducible experiments built on the reservation models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .infra import InfrastructureNetwork, load_topology
from .milp import OPTIMAL, Committed, SliceAssignment, build_problem3, extract_assignment, solve
from .slices import PriorityClass, SliceRequest, builtin_slice_catalog, make_request
from .uncertainty import BackgroundModel, background_targets, slice_targets


@dataclass(frozen=True)
class AdaptationOutcome:
    seed: int
    adaptation_cost: float
    adjustments: int  # positive instance increments summed over nodes, VNFs and slots
    per_slot: tuple[int, ...]
    objective: float
    request: SliceRequest
    assignment: SliceAssignment
    committed: tuple[Committed, ...]


def peer_load(seed: int, net: InfrastructureNetwork, catalog=None, n_peers: int = 4, slots=(1, 2, 3)):
    """Seeded committed slices overlapping the target window, each placed at the default adaptation cost."""
    catalog = catalog or builtin_slice_catalog()
    rng = np.random.default_rng(seed)
    bg = background_targets(BackgroundModel.from_fractions(net))
    committed: list[Committed] = []
    for i in range(n_peers):
        stype = int(rng.choice((1, 2)))
        k_on = int(rng.integers(slots[0], slots[-1] + 1))
        life = int(rng.integers(1, slots[-1] - k_on + 2))
        req = make_request(catalog, id=100 + i, slice_type=stype, priority_class=PriorityClass.STANDARD,
                           arrival_time=0.0, k_on=k_on, lifetime=life, pattern=int(rng.choice((1, 2))))
        model = build_problem3(req, committed, net, {req.id: slice_targets(req)}, bg)
        res = solve(model, rel_gap=0.05, node_limit=200)
        if res.has_solution:
            committed.append(Committed(req, extract_assignment(model, res.x, [req])[req.id]))
    return committed


def adaptation_run(seed: int, adaptation_cost: float, net: InfrastructureNetwork | None = None,
                   catalog=None, node_limit: int = 200_000) -> AdaptationOutcome:
    """One type-1 slice over three slots with the mid-peak demand pattern, solved to optimality.

    The same seeded peer load is used for every adaptation cost, so outcomes for
    different costs differ only through the objective.
    """
    catalog = catalog or builtin_slice_catalog()
    base = net or load_topology("fat-tree-15")
    committed = peer_load(seed, base, catalog)
    target = make_request(catalog, id=0, slice_type=1, priority_class=PriorityClass.STANDARD, arrival_time=0.0,
                          k_on=1, lifetime=3, pattern=2)
    priced = base.with_costs(adaptation_cost=adaptation_cost)
    bg = background_targets(BackgroundModel.from_fractions(priced))
    model = build_problem3(target, committed, priced, {0: slice_targets(target)}, bg)
    res = solve(model, rel_gap=0.0, node_limit=node_limit)
    if res.status != OPTIMAL:
        raise RuntimeError(f"seed {seed}: target slice not solved to optimality ({res.status})")
    a = extract_assignment(model, res.x, [target])[0]
    inc = a.positive_increments(target)
    per_slot = tuple(int(sum(v for (sl, _, _), v in inc.items() if sl == s)) for s in target.active_slots)
    return AdaptationOutcome(seed, adaptation_cost, sum(per_slot), per_slot, res.objective, target, a,
                             tuple(committed))
