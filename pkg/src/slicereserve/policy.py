"""Prioritized processing: priority on reception, threshold selection, aging and ordering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .slices import SliceRequest

PRIORITIZED = "prioritized"
JUST_IN_TIME = "just-in-time"


class LateRequest(ValueError):
    """Request received when its activation slot leaves no processing opportunity."""


@dataclass(frozen=True)
class PolicyParams:
    p_max: float = 3.0
    alpha: float = 0.5
    delta_p: float = 1.0
    processing: str = PRIORITIZED  # or JUST_IN_TIME

    def __post_init__(self):
        if self.p_max < 1:
            raise ValueError("p_max must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.delta_p < 0:
            raise ValueError("delta_p must be non-negative")
        if self.processing not in (PRIORITIZED, JUST_IN_TIME):
            raise ValueError(f"unknown processing mode {self.processing!r}")

    @property
    def threshold(self) -> float:
        return self.alpha * (self.p_max - 1.0)

    @property
    def effective(self) -> "PolicyParams":
        """Just-in-time processing defers everyone: alpha = 1 and no aging."""
        if self.processing == JUST_IN_TIME:
            return PolicyParams(self.p_max, 1.0, 0.0, JUST_IN_TIME)
        return self


@dataclass
class PendingRequest:
    request: SliceRequest
    priority: float
    arrival_slot: int
    processed: bool = False
    decision_slot: int | None = None

    @property
    def id(self) -> int:
        return self.request.id


def assign_priority(request: SliceRequest, k: int, params: PolicyParams) -> float:
    """Priority of a request received during slot k."""
    if request.k_on <= k:
        raise LateRequest(f"request {request.id} with k_on={request.k_on} cannot be processed from slot {k}")
    if request.is_premium and params.processing != JUST_IN_TIME:
        return params.p_max
    if request.k_on == k + 1:
        return params.p_max - 1.0
    return 0.0


def age_priority(pending: PendingRequest, next_slot: int, params: PolicyParams) -> float:
    """Priority at `next_slot` of a request deferred at slot ``next_slot - 1``."""
    eff = params.effective
    if pending.request.k_on == next_slot + 1:
        return eff.p_max - 1.0
    return min(pending.priority + eff.delta_p, eff.p_max - 1.0)


def order_key(p: PendingRequest):
    r = p.request
    return (-p.priority, 0 if r.is_premium else 1, r.k_on, r.arrival_time, r.id)


def fcfs_key(p: PendingRequest):
    r = p.request
    return (0 if r.is_premium else 1, r.arrival_time, r.id)


def select_batch(pendings: Iterable[PendingRequest], k: int, params: PolicyParams) -> list[PendingRequest]:
    """Unprocessed requests at or above the threshold, in processing order.

    A zero threshold defers nobody; the batch is then served Premium first and
    otherwise in arrival order.
    """
    thr = params.effective.threshold
    batch = [p for p in pendings if not p.processed and p.priority >= thr - 1e-12]
    return sorted(batch, key=fcfs_key if thr == 0 else order_key)


def denial_order(batch: Iterable[PendingRequest]) -> list[PendingRequest]:
    """Order in which joint processing withdraws grants: lowest priority first, latest arrival among ties."""
    return sorted(batch, key=lambda p: (p.priority, 1 if not p.request.is_premium else 2,
                                        -p.request.arrival_time, -p.request.id))


@dataclass
class PolicyState:
    """Pending set of one simulation run."""

    params: PolicyParams
    pending: dict[int, PendingRequest] = field(default_factory=dict)

    def receive(self, request: SliceRequest, k: int) -> PendingRequest:
        p = PendingRequest(request, assign_priority(request, k, self.params), k)
        self.pending[request.id] = p
        return p

    def age(self, next_slot: int) -> None:
        for p in self.pending.values():
            if not p.processed:
                p.priority = age_priority(p, next_slot, self.params)

    def batch(self, k: int) -> list[PendingRequest]:
        return select_batch(self.pending.values(), k, self.params)

    def mark(self, batch: Iterable[PendingRequest], k: int) -> None:
        for p in batch:
            p.processed = True
            p.decision_slot = k
        for p in list(batch):
            self.pending.pop(p.id, None)

    @property
    def outstanding(self) -> int:
        return sum(1 for p in self.pending.values() if not p.processed)
