"""Deterministic demand and background targets from the probabilistic constraints.

Slice demands are covered by ``R_hat = R_mean + gamma * R_std`` where gamma is the
smallest value whose satisfaction probability reaches the slice's target SSP.
Background load is protected by ``B_hat = B_mean + gamma_B * B_std`` with
``gamma_B = Phi^-1(1 - p_im)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import special, stats

from .infra import RESOURCE_TYPES, InfrastructureNetwork
from .slices import AggregateDemandMoments, SliceRequest, UserCountModel, UserDemandStats, aggregate_moments, \
    user_count_moments

log = logging.getLogger(__name__)

ETA_TRUNCATION = 1e-9
GAMMA_TOL = 1e-4
GAMMA_MAX = 64.0


class IntegrationError(RuntimeError):
    """The quasi-Monte-Carlo error estimate stayed above tolerance."""


class UnreachableTarget(ValueError):
    """No gamma up to the search cap reaches the requested probability."""


@dataclass(frozen=True)
class SspTargets:
    gamma: float
    keys: tuple[tuple, ...]
    targets: np.ndarray

    def as_dict(self) -> dict[tuple, float]:
        return dict(zip(self.keys, self.targets.tolist()))


# --- background -----------------------------------------------------------

def gamma_background(impact_threshold: float) -> float:
    if not 0.0 < impact_threshold < 1.0:
        raise ValueError(f"impact threshold must lie in (0, 1), got {impact_threshold!r}")
    # -ndtri(p) keeps full precision for small p, unlike ndtri(1 - p)
    return float(-special.ndtri(impact_threshold))


@dataclass(frozen=True)
class BackgroundModel:
    node_mean: Mapping[tuple[str, str], float]
    node_std: Mapping[tuple[str, str], float]
    link_mean: Mapping[tuple[str, str], float]
    link_std: Mapping[tuple[str, str], float]
    impact_threshold: float = 0.1

    def __post_init__(self):
        gamma_background(self.impact_threshold)  # validates the threshold
        for m in (self.node_mean, self.node_std, self.link_mean, self.link_std):
            if any(v < 0 or not math.isfinite(v) for v in m.values()):
                raise ValueError("background means and standard deviations must be finite and >= 0")

    @property
    def gamma_b(self) -> float:
        return gamma_background(self.impact_threshold)

    @classmethod
    def from_fractions(cls, net: InfrastructureNetwork, mean_fraction: float = 0.2, std_fraction: float = 0.05,
                       impact_threshold: float = 0.1) -> "BackgroundModel":
        node_mean, node_std, link_mean, link_std = {}, {}, {}, {}
        for n in net.nodes:
            for t in RESOURCE_TYPES:
                a = n.capacity.get(t, 0.0)
                node_mean[(n.id, t)] = mean_fraction * a
                node_std[(n.id, t)] = std_fraction * a
        for ln in net.links:
            link_mean[ln.key] = mean_fraction * ln.bandwidth
            link_std[ln.key] = std_fraction * ln.bandwidth
        return cls(node_mean, node_std, link_mean, link_std, impact_threshold)


@dataclass(frozen=True)
class BackgroundTargets:
    node: Mapping[tuple[str, str], float]
    link: Mapping[tuple[str, str], float]

    @classmethod
    def zero(cls) -> "BackgroundTargets":
        return cls({}, {})


def background_targets(model: BackgroundModel, slot: int | None = None) -> BackgroundTargets:
    """Targets are slot-invariant here: background statistics do not change over time."""
    g = model.gamma_b
    node = {k: model.node_mean[k] + g * model.node_std.get(k, 0.0) for k in model.node_mean}
    link = {k: model.link_mean[k] + g * model.link_std.get(k, 0.0) for k in model.link_mean}
    return BackgroundTargets(node, link)


# --- quasi-Monte-Carlo box probability ------------------------------------

def _first_primes(n: int) -> np.ndarray:
    primes: list[int] = []
    k = 2
    while len(primes) < n:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return np.array(primes, dtype=float)


def mvn_box_probability(upper: np.ndarray, cov: np.ndarray, *, tol: float = 1e-4, seed: int = 0,
                        n_shifts: int = 16, max_points: int = 2**17) -> tuple[float, float]:
    """P{Z <= upper} for Z ~ N(0, cov), by Genz's separation of variables.

    A randomly shifted Richtmyer lattice with the baker's transform supplies
    the points; `n_shifts` independent shifts give the error estimate (3 sigma).
    Points per shift double until the estimate drops below `tol` or the total
    reaches `max_points`.
    """
    upper = np.asarray(upper, dtype=float)
    cov = np.asarray(cov, dtype=float)
    var = np.diag(cov)
    degenerate = var <= 0
    if np.any(degenerate):
        if np.any(upper[degenerate] < 0):
            return 0.0, 0.0
        keep = ~degenerate
        upper, cov = upper[keep], cov[np.ix_(keep, keep)]
    m = upper.size
    if m == 0:
        return 1.0, 0.0
    if m == 1:
        return float(special.ndtr(upper[0] / math.sqrt(cov[0, 0]))), 0.0
    chol = np.linalg.cholesky(cov + 1e-14 * np.trace(cov) / m * np.eye(m))
    rng = np.random.default_rng(seed)
    z = np.sqrt(_first_primes(m - 1))
    n = 64
    est, err = 0.0, math.inf
    while True:
        shifts = rng.random((n_shifts, m - 1))
        base = np.arange(1, n + 1)[:, None] * z[None, :]
        means = np.empty(n_shifts)
        for s in range(n_shifts):
            w = np.abs(2.0 * np.mod(base + shifts[s], 1.0) - 1.0)
            means[s] = _sov_integrand(w, upper, chol).mean()
        est = float(means.mean())
        err = float(3.0 * means.std(ddof=1) / math.sqrt(n_shifts))
        if err <= tol or n * n_shifts * 2 > max_points:
            break
        n *= 2
    if err > tol:
        raise IntegrationError(f"QMC error estimate {err:.2e} exceeds tolerance {tol:.2e}")
    return min(max(est, 0.0), 1.0), err


def _sov_integrand(w: np.ndarray, upper: np.ndarray, chol: np.ndarray) -> np.ndarray:
    npts, m = w.shape[0], upper.size
    y = np.zeros((npts, m))
    e = special.ndtr(np.full(npts, upper[0] / chol[0, 0]))
    f = e.copy()
    for i in range(1, m):
        y[:, i - 1] = special.ndtri(np.clip(w[:, i - 1] * e, 1e-300, 1 - 1e-16))
        shift = y[:, :i] @ chol[i, :i]
        e = special.ndtr((upper[i] - shift) / chol[i, i])
        f *= e
    return f


# --- service satisfaction probability -------------------------------------

def _eta_support(count: UserCountModel, slot: int, tolerance: float) -> tuple[np.ndarray, np.ndarray]:
    p = count.prob(slot)
    n = count.trials
    etas = np.arange(n + 1)
    pmf = stats.binom.pmf(etas, n, p)
    order = np.argsort(-pmf, kind="stable")
    cum = np.cumsum(pmf[order])
    keep = order[: int(np.searchsorted(cum, 1.0 - tolerance)) + 1]
    keep.sort()
    return etas[keep], pmf[keep]


def ssp_probability(gamma: float, moments: AggregateDemandMoments, user: UserDemandStats, count: UserCountModel,
                    slot: int, tolerance: float = ETA_TRUNCATION, *, qmc_tol: float = 1e-4, seed: int = 0) -> float:
    """Probability that the aggregate demand stays below ``R_mean + gamma * R_std``.

    Given eta users the aggregate is Gaussian with mean ``eta*mu`` and covariance
    ``eta^2 * Gamma``. The pmf mass dropped by truncation (< `tolerance`) counts
    as unsatisfied; zero users always count as satisfied.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    target = moments.mean + gamma * moments.std
    mu, sd = user.mean, user.std
    etas, pmf = _eta_support(count, slot, tolerance)
    total = 0.0
    if user.is_diagonal:
        pos = etas > 0
        total += float(pmf[~pos].sum())
        eta = etas[pos].astype(float)[:, None]
        w = pmf[pos]
        with np.errstate(divide="ignore", invalid="ignore"):
            zscore = (target[None, :] - eta * mu[None, :]) / (eta * sd[None, :])
        det = sd[None, :] == 0
        cdf = np.where(det, (target[None, :] >= eta * mu[None, :]).astype(float), special.ndtr(zscore))
        total += float(w @ np.prod(cdf, axis=1))
    else:
        for eta, w in zip(etas, pmf):
            if eta == 0:
                total += w
                continue
            prob, _ = mvn_box_probability((target - eta * mu) / eta, user.covariance, tol=qmc_tol, seed=seed)
            total += w * prob
    return min(total, 1.0)


def gamma_ssp(moments: AggregateDemandMoments, user: UserDemandStats, count: UserCountModel, slot: int,
              target_ssp: float, tol: float = GAMMA_TOL, **kwargs) -> SspTargets:
    """Smallest gamma (within `tol`) whose satisfaction probability reaches `target_ssp`."""
    if not 0.0 < target_ssp < 1.0:
        raise ValueError("target SSP must lie in (0, 1)")

    def prob(g: float) -> float:
        return ssp_probability(g, moments, user, count, slot, **kwargs)

    if prob(0.0) >= target_ssp:
        gamma = 0.0
    else:
        lo, hi = 0.0, 4.0
        while prob(hi) < target_ssp:
            lo, hi = hi, hi * 2.0
            if hi > GAMMA_MAX:
                raise UnreachableTarget(f"SSP target {target_ssp} not reached for gamma <= {GAMMA_MAX}")
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if prob(mid) >= target_ssp:
                hi = mid
            else:
                lo = mid
        gamma = hi
    return SspTargets(gamma, moments.keys, moments.mean + gamma * moments.std)


def slice_targets(request: SliceRequest, tol: float = GAMMA_TOL) -> dict[int, SspTargets]:
    """Per active slot targets for a request, keyed by absolute slot index."""
    out = {}
    for offset, slot in enumerate(request.active_slots):
        n_mean, n_var = user_count_moments(request.user_count, offset)
        moments = aggregate_moments(request.user_stats, n_mean, n_var)
        out[slot] = gamma_ssp(moments, request.user_stats, request.user_count, offset, request.target_ssp, tol)
    return out
