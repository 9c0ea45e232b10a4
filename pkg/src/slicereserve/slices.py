"""Slice templates, per-user demand statistics, user-count models and aggregate moments."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .infra import RESOURCE_TYPES

# A demand index is either (vnf, resource_type) or (vnf_from, vnf_to) for a vlink.
NodeDemandKey = tuple[str, str]
VlinkKey = tuple[str, str]


class PriorityClass(str, enum.Enum):
    PREMIUM = "Premium"
    STANDARD = "Standard"


@dataclass(frozen=True)
class SfcTemplate:
    vnfs: tuple[str, ...]
    vlinks: tuple[VlinkKey, ...]
    node_demand: Mapping[str, tuple[float, float, float]]  # per instance (r_c, r_m, r_w)
    link_demand: Mapping[VlinkKey, float]  # per instance r_b

    def __post_init__(self):
        if len(set(self.vnfs)) != len(self.vnfs):
            raise ValueError("duplicate VNF ids in template")
        for v, w in self.vlinks:
            if v not in self.vnfs or w not in self.vnfs:
                raise ValueError(f"vlink {v}->{w} references an unknown VNF")
        for v in self.vnfs:
            r = self.node_demand.get(v)
            if r is None or len(r) != 3 or any(not math.isfinite(x) or x < 0 for x in r):
                raise ValueError(f"VNF {v!r} needs three finite non-negative per-instance demands")
        for vl in self.vlinks:
            rb = self.link_demand.get(vl)
            if rb is None or not math.isfinite(rb) or rb < 0:
                raise ValueError(f"vlink {vl} needs a finite non-negative bandwidth demand")
        if len(self.vnfs) > 1 and not self._connected():
            raise ValueError("SFC graph is not connected")

    def _connected(self) -> bool:
        adj = {v: set() for v in self.vnfs}
        for v, w in self.vlinks:
            adj[v].add(w)
            adj[w].add(v)
        seen, stack = {self.vnfs[0]}, [self.vnfs[0]]
        while stack:
            for nb in adj[stack.pop()] - seen:
                seen.add(nb)
                stack.append(nb)
        return len(seen) == len(self.vnfs)

    def r(self, vnf: str, rtype: str) -> float:
        return self.node_demand[vnf][RESOURCE_TYPES.index(rtype)]

    def out_fraction(self, vlink: VlinkKey) -> float:
        """Share of the source VNF's outgoing bandwidth carried by `vlink` (0 if undefined)."""
        v = vlink[0]
        total = sum(self.link_demand[vl] for vl in self.vlinks if vl[0] == v)
        return self.link_demand[vlink] / total if total > 0 else 0.0

    def in_fraction(self, vlink: VlinkKey) -> float:
        w = vlink[1]
        total = sum(self.link_demand[vl] for vl in self.vlinks if vl[1] == w)
        return self.link_demand[vlink] / total if total > 0 else 0.0


@dataclass(frozen=True)
class UserDemandStats:
    """Gaussian demand of one typical user over declared (vnf, type) entries and vlinks."""

    keys: tuple[tuple, ...]
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        n = len(self.keys)
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ValueError("mean/covariance dimensions do not match the declared entries")
        if not np.allclose(cov, cov.T, atol=1e-15, rtol=1e-12):
            raise ValueError("covariance must be symmetric")
        if n and np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def independent(cls, entries: Mapping[tuple, tuple[float, float]]) -> "UserDemandStats":
        """From {key: (mean, std)} with a diagonal covariance."""
        keys = tuple(entries)
        mean = np.array([entries[k][0] for k in keys], dtype=float)
        std = np.array([entries[k][1] for k in keys], dtype=float)
        return cls(keys, mean, np.diag(std**2))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def is_diagonal(self) -> bool:
        off = self.covariance - np.diag(np.diag(self.covariance))
        return not np.any(off)

    def with_correlation(self, corr: np.ndarray) -> "UserDemandStats":
        s = self.std
        return replace(self, covariance=np.asarray(corr, dtype=float) * np.outer(s, s))


@dataclass(frozen=True)
class UserCountModel:
    """Binomial number of users with a per-active-slot success probability."""

    trials: int
    success_prob: tuple[float, ...]
    kind: str = "binomial"

    def __post_init__(self):
        if self.kind != "binomial":
            raise ValueError(f"unsupported user-count model {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be a positive integer")
        if not self.success_prob or any(not 0.0 <= p <= 1.0 for p in self.success_prob):
            raise ValueError("success probabilities must lie in [0, 1]")

    def prob(self, slot: int) -> float:
        if not 0 <= slot < len(self.success_prob):
            raise IndexError(f"slot {slot} outside the demand pattern (length {len(self.success_prob)})")
        return self.success_prob[slot]


@dataclass(frozen=True)
class AggregateDemandMoments:
    keys: tuple[tuple, ...]
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class SliceRequest:
    id: int
    slice_type: int
    template: SfcTemplate
    user_stats: UserDemandStats  # same statistics in every active slot
    user_count: UserCountModel  # success_prob indexed by offset from k_on
    priority_class: PriorityClass
    arrival_time: float
    k_on: int
    k_off: int
    target_ssp: float
    pattern: int = 1

    def __post_init__(self):
        if self.k_on > self.k_off:
            raise ValueError(f"request {self.id}: k_on {self.k_on} > k_off {self.k_off}")
        if not 0.0 < self.target_ssp < 1.0:
            raise ValueError(f"request {self.id}: target SSP must lie in (0, 1)")
        if len(self.user_count.success_prob) != self.lifetime:
            raise ValueError(f"request {self.id}: demand pattern length must equal the lifetime")

    @property
    def lifetime(self) -> int:
        return self.k_off - self.k_on + 1

    @property
    def active_slots(self) -> range:
        return range(self.k_on, self.k_off + 1)

    @property
    def is_premium(self) -> bool:
        return self.priority_class is PriorityClass.PREMIUM

    def receivable_before(self, epsilon: float) -> bool:
        return self.arrival_time < self.k_on - epsilon


def user_count_moments(model: UserCountModel, slot: int) -> tuple[float, float]:
    """Mean and variance of the user count at `slot` (offset into the pattern)."""
    p = model.prob(slot)
    n = model.trials
    return n * p, n * p * (1.0 - p)


def aggregate_moments(user: UserDemandStats, count_mean: float, count_var: float) -> AggregateDemandMoments:
    """Moments of N*U for independent N and U (product-variance formula)."""
    if count_mean < 0 or count_var < 0:
        raise ValueError("user-count mean and variance must be non-negative")
    u_mean = user.mean
    u_var = np.clip(np.diag(user.covariance), 0.0, None)
    mean = count_mean * u_mean
    var = count_mean**2 * u_var + u_mean**2 * count_var + count_var * u_var
    return AggregateDemandMoments(user.keys, mean, np.sqrt(var))


# --- builtin catalog ------------------------------------------------------

PATTERN2_DEFAULT = (0.5, 1.0, 0.5)


def pattern_probabilities(pattern: int, lifetime: int, profile: Sequence[float] = PATTERN2_DEFAULT) -> tuple:
    if pattern == 1:
        return (1.0,) * lifetime
    if pattern == 2:
        return tuple(profile[i % len(profile)] for i in range(lifetime))
    raise ValueError(f"unknown demand pattern {pattern!r}")


@dataclass(frozen=True)
class SliceType:
    template: SfcTemplate
    user_stats: UserDemandStats
    trials: int
    target_ssp: float
    patterns: tuple[int, ...] = (1, 2)


def _slice_type(rows, links, trials, ssp, patterns=(1, 2)) -> SliceType:
    vnfs = tuple(r[0] for r in rows)
    node_demand = {r[0]: r[4] for r in rows}
    vlinks = tuple(l[0] for l in links)
    link_demand = {l[0]: l[2] for l in links}
    entries: dict[tuple, tuple[float, float]] = {}
    for name, uc, um, uw, _ in rows:
        for rtype, stat in zip(RESOURCE_TYPES, (uc, um, uw)):
            if stat is not None:
                entries[(name, rtype)] = stat
    for vl, stat, _ in links:
        entries[vl] = stat
    template = SfcTemplate(vnfs, vlinks, node_demand, link_demand)
    return SliceType(template, UserDemandStats.independent(entries), trials, ssp, patterns)


def builtin_slice_catalog() -> dict[int, SliceType]:
    """The three slice types: HD streaming, SD streaming, video surveillance."""
    type1 = _slice_type(
        [
            ("vVOC", (5.4e-3, 0.54e-3), (1.5e-2, 0.15e-2), None, (0.29, 0.81, 0.0)),
            ("vGW", (9.0e-4, 0.90e-4), (5.0e-4, 0.50e-4), None, (0.05, 0.03, 0.0)),
            ("vBBU", (8.0e-4, 0.80e-4), (5.0e-4, 0.50e-4), (4e-3, 0.4e-3), (0.04, 0.03, 0.2)),
        ],
        [(("vVOC", "vGW"), (4e-3, 0.4e-3), 0.22), (("vGW", "vBBU"), (4e-3, 0.4e-3), 0.22)],
        trials=500,
        ssp=0.99,
    )
    type2 = _slice_type(
        [
            ("vVOC", (1.1e-3, 0.11e-3), (7.5e-3, 0.75e-3), None, (0.17, 1.20, 0.0)),
            ("vGW", (1.8e-4, 0.18e-4), (2.5e-4, 0.25e-4), None, (0.03, 0.04, 0.0)),
            ("vBBU", (0.8e-4, 0.08e-4), (2.5e-4, 0.25e-4), (2e-3, 0.2e-3), (0.01, 0.04, 0.3)),
        ],
        [(("vVOC", "vGW"), (2e-3, 0.2e-3), 0.32), (("vGW", "vBBU"), (2e-3, 0.2e-3), 0.32)],
        trials=2000,
        ssp=0.95,
    )
    type3 = _slice_type(
        [
            ("vBBU", (2.0e-4, 0.20e-4), (1.3e-4, 0.13e-4), (1e-3, 0.1e-3), (0.4e-2, 0.25e-2, 2e-2)),
            ("vGW", (9.0e-4, 0.90e-4), (1.3e-4, 0.13e-4), None, (0.018, 0.003, 0.0)),
            ("vTM", (1.1e-3, 0.11e-3), (1.3e-4, 0.13e-4), None, (0.266, 0.003, 0.0)),
            ("vVOC", (5.4e-3, 0.54e-3), (3.8e-3, 0.38e-3), None, (0.108, 0.080, 0.0)),
            ("vIDPS", (1.1e-2, 0.11e-2), (1.3e-4, 0.13e-4), None, (0.214, 0.003, 0.0)),
        ],
        [
            (("vBBU", "vGW"), (1e-3, 0.1e-3), 0.02),
            (("vGW", "vTM"), (1e-3, 0.1e-3), 0.02),
            (("vTM", "vVOC"), (1e-3, 0.1e-3), 0.02),
            (("vVOC", "vIDPS"), (1e-3, 0.1e-3), 0.02),
        ],
        trials=200,
        ssp=0.9,
        patterns=(1,),
    )
    return {1: type1, 2: type2, 3: type3}


def catalog_from_overrides(base: dict[int, SliceType], overrides: Mapping | None) -> dict[int, SliceType]:
    """Apply a scenario-file catalog block on top of `base`.

    Per type: ``trials``, ``target_ssp``, ``patterns``, ``vnfs`` (per VNF: ``u_c``,
    ``u_m``, ``u_w`` as [mean, std] and ``r`` as [r_c, r_m, r_w]), ``vlinks``
    (per "v->w": ``u`` as [mean, std] and ``r_b``) and an optional ``correlation``
    matrix over the declared entries.
    """
    if not overrides:
        return dict(base)
    out = dict(base)
    for type_key, block in overrides.items():
        stype = int(type_key)
        if stype not in out:
            raise ValueError(f"catalog override for unknown slice type {type_key!r}")
        cur = out[stype]
        allowed = {"trials", "target_ssp", "patterns", "vnfs", "vlinks", "correlation"}
        extra = set(block) - allowed
        if extra:
            raise ValueError(f"catalog.{type_key}: unknown keys {sorted(extra)}")
        node_demand = dict(cur.template.node_demand)
        link_demand = dict(cur.template.link_demand)
        means = dict(zip(cur.user_stats.keys, cur.user_stats.mean))
        stds = dict(zip(cur.user_stats.keys, cur.user_stats.std))
        for vnf, vals in (block.get("vnfs") or {}).items():
            if vnf not in node_demand:
                raise ValueError(f"catalog.{type_key}.vnfs: unknown VNF {vnf!r}")
            if "r" in vals:
                node_demand[vnf] = tuple(float(x) for x in vals["r"])
            for rtype in RESOURCE_TYPES:
                if f"u_{rtype}" in vals:
                    m, s = vals[f"u_{rtype}"]
                    means[(vnf, rtype)], stds[(vnf, rtype)] = float(m), float(s)
        for name, vals in (block.get("vlinks") or {}).items():
            vl = tuple(x.strip() for x in str(name).split("->"))
            if vl not in link_demand:
                raise ValueError(f"catalog.{type_key}.vlinks: unknown vlink {name!r}")
            if "r_b" in vals:
                link_demand[vl] = float(vals["r_b"])
            if "u" in vals:
                means[vl], stds[vl] = float(vals["u"][0]), float(vals["u"][1])
        template = SfcTemplate(cur.template.vnfs, cur.template.vlinks, node_demand, link_demand)
        stats = UserDemandStats.independent({k: (means[k], stds[k]) for k in means})
        if block.get("correlation") is not None:
            stats = stats.with_correlation(np.asarray(block["correlation"], dtype=float))
        out[stype] = SliceType(
            template,
            stats,
            int(block.get("trials", cur.trials)),
            float(block.get("target_ssp", cur.target_ssp)),
            tuple(block.get("patterns", cur.patterns)),
        )
    return out


def make_request(
    catalog: Mapping[int, SliceType],
    *,
    id: int,
    slice_type: int,
    priority_class: PriorityClass,
    arrival_time: float,
    k_on: int,
    lifetime: int,
    pattern: int = 1,
    pattern_profile: Sequence[float] = PATTERN2_DEFAULT,
) -> SliceRequest:
    st = catalog[slice_type]
    return SliceRequest(
        id=id,
        slice_type=slice_type,
        template=st.template,
        user_stats=st.user_stats,
        user_count=UserCountModel(st.trials, pattern_probabilities(pattern, lifetime, pattern_profile)),
        priority_class=priority_class,
        arrival_time=arrival_time,
        k_on=k_on,
        k_off=k_on + lifetime - 1,
        target_ssp=st.target_ssp,
        pattern=pattern,
    )
