"""Solver backends for :class:`MilpModel`.

``builtin`` is a branch-and-bound written here, using HiGHS (via scipy's
``linprog``) only to solve LP relaxations. ``external`` hands the full MILP to
scipy's HiGHS MILP interface, or to a CBC executable when
``SLICERESERVE_SOLVER_PATH`` points at one.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, sparse

from .model import MilpModel

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIMEOUT = "timeout"

INT_TOL = 1e-6
FEAS_TOL = 1e-6
SOLVER_ENV = "SLICERESERVE_SOLVER_PATH"


class SolverUnavailable(RuntimeError):
    pass


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None
    objective: float
    wall_time: float = 0.0
    nodes: int = 0
    backend: str = ""
    info: dict = field(default_factory=dict)

    @property
    def has_solution(self) -> bool:
        return self.x is not None


def solve(model: MilpModel, time_limit: float = 60.0, seed: int = 0, backend: str = "builtin",
          rel_gap: float = 0.0, node_limit: int = 200_000) -> SolveResult:
    """Minimise `model`.

    ``optimal`` means proven optimal within `rel_gap`. ``timeout`` means the time
    or node budget ran out; `x` then holds the best solution found, if any.
    """
    t0 = time.perf_counter()
    if model.num_vars == 0:
        res = _solve_empty(model)
    elif backend == "builtin":
        res = BranchAndBound(model, time_limit=time_limit, rel_gap=rel_gap, node_limit=node_limit).run()
    elif backend == "external":
        path = os.environ.get(SOLVER_ENV)
        res = _solve_cbc(model, path, time_limit, seed) if path else _solve_highs(model, time_limit, rel_gap)
    else:
        raise SolverUnavailable(f"unknown solver backend {backend!r}")
    res.wall_time = time.perf_counter() - t0
    res.backend = backend
    if res.x is not None:
        res.x = _clean(model, res.x)
        res.objective = model.evaluate(res.x)
    return res


def _solve_empty(model: MilpModel) -> SolveResult:
    for row in model.constraints:
        if row.sense == "<=" and row.rhs < -FEAS_TOL or row.sense == ">=" and row.rhs > FEAS_TOL \
                or row.sense == "==" and abs(row.rhs) > FEAS_TOL:
            return SolveResult(INFEASIBLE, None, math.inf)
    return SolveResult(OPTIMAL, np.zeros(0), 0.0)


def _clean(model: MilpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).copy()
    for j, v in enumerate(model.variables):
        if v.kind != "continuous":
            x[j] = round(x[j])
        x[j] = min(max(x[j], v.lb), v.ub)
    return x + 0.0  # normalise -0.0


# --- built-in branch and bound ---------------------------------------------

class LpRelaxation:
    """Persistent HiGHS LP whose column bounds are changed between warm-started solves."""

    def __init__(self, model: MilpModel):
        import highspy

        self._hs = highspy
        c, a_ub, b_ub, a_eq, b_eq, lb, ub, integ = model.arrays()
        a = sparse.vstack([a_ub, a_eq]).tocsc()
        inf = highspy.kHighsInf
        lp = highspy.HighsLp()
        lp.num_col_ = len(c)
        lp.num_row_ = a.shape[0]
        lp.col_cost_ = c
        lp.col_lower_ = lb
        lp.col_upper_ = np.where(np.isinf(ub), inf, ub)
        lp.row_lower_ = np.concatenate([np.full(a_ub.shape[0], -inf), b_eq])
        lp.row_upper_ = np.concatenate([b_ub, b_eq])
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = a.indptr
        lp.a_matrix_.index_ = a.indices
        lp.a_matrix_.value_ = a.data
        self.h = highspy.Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.passModel(lp)
        self.n = len(c)
        self.lb0, self.ub0, self.integ = lb, ub, integ
        self._lb, self._ub = lb.copy(), ub.copy()
        self._cols = np.arange(self.n, dtype=np.int32)
        self.calls = 0

    def solve(self, lb: np.ndarray, ub: np.ndarray):
        """(objective, x) of the relaxation under the given bounds, or None if infeasible."""
        self.calls += 1
        changed = np.flatnonzero((lb != self._lb) | (ub != self._ub)).astype(np.int32)
        if changed.size:
            inf = self._hs.kHighsInf
            self.h.changeColsBounds(int(changed.size), changed, lb[changed],
                                    np.where(np.isinf(ub[changed]), inf, ub[changed]))
            self._lb[changed], self._ub[changed] = lb[changed], ub[changed]
        self.h.run()
        status = self.h.getModelStatus()
        if status == self._hs.HighsModelStatus.kInfeasible:
            return None
        if status != self._hs.HighsModelStatus.kOptimal:
            # recover from a stalled warm start once before giving up
            self.h.clearSolver()
            self.h.run()
            status = self.h.getModelStatus()
            if status == self._hs.HighsModelStatus.kInfeasible:
                return None
            if status != self._hs.HighsModelStatus.kOptimal:
                raise RuntimeError(f"LP relaxation failed: {self.h.modelStatusToString(status)}")
        return self.h.getInfo().objective_function_value, np.array(self.h.getSolution().col_value)


class BranchAndBound:
    """Depth-first dive to a first incumbent, then best-bound search.

    Branching picks the most fractional variable within the highest priority
    tier (binaries break ties between equal tiers) and explores the up branch
    first. Children are stored with their parent's bound and their LP is only
    solved when they are popped. Nodes whose bound cannot beat the incumbent
    by more than the gap tolerance are pruned.
    """

    def __init__(self, model: MilpModel, time_limit: float = 60.0, rel_gap: float = 0.0,
                 node_limit: int = 200_000):
        self.model = model
        self.time_limit = time_limit
        self.rel_gap = rel_gap
        self.node_limit = node_limit
        self.lp = LpRelaxation(model)
        self.lb0, self.ub0 = self.lp.lb0, self.lp.ub0
        self.integer = np.flatnonzero(self.lp.integ)
        tiers = np.array([2 * model.variables[j].priority + (model.variables[j].kind == "binary")
                          for j in self.integer], dtype=float)
        self.tiers = [tiers == t for t in sorted(set(tiers.tolist()), reverse=True)]

    def _branch_var(self, x: np.ndarray):
        xi = x[self.integer]
        frac = np.abs(xi - np.round(xi))
        cand = frac > INT_TOL
        if not cand.any():
            return None
        for tier in self.tiers:
            pool = cand & tier
            if pool.any():
                k = int(np.argmax(np.where(pool, frac, -1.0)))  # lowest index wins ties
                return int(self.integer[k]), float(xi[k])
        return None

    def _prune_level(self, incumbent: float) -> float:
        if not math.isfinite(incumbent):
            return math.inf
        return incumbent - max(FEAS_TOL, self.rel_gap * abs(incumbent))

    def run(self) -> "SolveResult":
        t0 = time.perf_counter()
        best_x, best_val = None, math.inf
        counter = itertools.count()
        heap: list = []
        # entries: (parent bound, depth, tie, lb, ub)
        stack: list = [(-math.inf, 0, next(counter), self.lb0.copy(), self.ub0.copy())]
        nodes = 0
        timed_out = False
        while stack or heap:
            if time.perf_counter() - t0 > self.time_limit or nodes >= self.node_limit:
                timed_out = True
                break
            if stack:
                parent, depth, _, lb, ub = stack.pop()
            else:
                parent, depth, _, lb, ub = heapq.heappop(heap)
            level = self._prune_level(best_val)
            if parent >= level:
                continue
            nodes += 1
            sol = self.lp.solve(lb, ub)
            if sol is None or sol[0] >= level:
                continue
            bound, x = sol
            pick = self._branch_var(x)
            if pick is None:
                best_x, best_val = x, bound
                for item in stack:
                    heapq.heappush(heap, item)
                stack.clear()
                continue
            j, val = pick
            down_lb, down_ub = lb.copy(), ub.copy()
            down_ub[j] = math.floor(val)
            up_lb, up_ub = lb.copy(), ub.copy()
            up_lb[j] = math.ceil(val)
            down = (bound, depth + 1, next(counter), down_lb, down_ub)
            up = (bound, depth + 1, next(counter), up_lb, up_ub)
            if best_x is None:
                stack += [down, up]  # up is popped first
            else:
                heapq.heappush(heap, up)
                heapq.heappush(heap, down)
        info = {"lp_calls": self.lp.calls}
        if best_x is not None:
            open_bounds = [item[0] for item in heap] + [item[0] for item in stack]
            info["bound"] = min([best_val, *open_bounds]) if timed_out else best_val
        if best_x is None:
            status = TIMEOUT if timed_out else INFEASIBLE
            return SolveResult(status, None, math.inf, nodes=nodes, info=info)
        return SolveResult(TIMEOUT if timed_out else OPTIMAL, best_x, best_val, nodes=nodes, info=info)


# --- external backends --------------------------------------------------------

def _solve_highs(model: MilpModel, time_limit: float, rel_gap: float) -> SolveResult:
    c, a_ub, b_ub, a_eq, b_eq, lb, ub, integ = model.arrays()
    cons = []
    if a_ub.shape[0]:
        cons.append(optimize.LinearConstraint(a_ub, -np.inf, b_ub))
    if a_eq.shape[0]:
        cons.append(optimize.LinearConstraint(a_eq, b_eq, b_eq))
    res = optimize.milp(c, constraints=cons, integrality=integ.astype(int), bounds=optimize.Bounds(lb, ub),
                        options={"time_limit": time_limit, "mip_rel_gap": rel_gap, "disp": False})
    if res.status == 0:
        return SolveResult(OPTIMAL, res.x, res.fun)
    if res.status == 2:
        return SolveResult(INFEASIBLE, None, math.inf)
    if res.status == 1:
        return SolveResult(TIMEOUT, res.x, res.fun if res.x is not None else math.inf)
    raise RuntimeError(f"HiGHS MILP failed: {res.message}")


def _solve_cbc(model: MilpModel, path: str, time_limit: float, seed: int) -> SolveResult:
    exe = Path(path)
    if not exe.exists():
        raise SolverUnavailable(f"{SOLVER_ENV}={path} does not exist")
    with tempfile.TemporaryDirectory() as tmp:
        lp, sol = Path(tmp) / "model.lp", Path(tmp) / "model.sol"
        lp.write_text(model.to_lp())
        cmd = [str(exe), str(lp), "sec", str(time_limit), "randomSeed", str(seed), "solve", "solution", str(sol)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0 or not sol.exists():
            raise RuntimeError(f"external solver failed: {proc.stderr.strip() or proc.stdout[-500:]}")
        return _read_cbc_solution(model, sol.read_text())


def _read_cbc_solution(model: MilpModel, text: str) -> SolveResult:
    lines = text.splitlines()
    head = lines[0].lower() if lines else ""
    if "infeasible" in head:
        return SolveResult(INFEASIBLE, None, math.inf)
    by_name = {v.name: j for j, v in enumerate(model.variables)}
    x = np.zeros(model.num_vars)
    for line in lines[1:]:
        parts = line.split()
        if len(parts) >= 3 and parts[1] in by_name:
            x[by_name[parts[1]]] = float(parts[2])
    status = OPTIMAL if head.startswith("optimal") else TIMEOUT
    if status == TIMEOUT and "no integer" in head:
        return SolveResult(TIMEOUT, None, math.inf)
    return SolveResult(status, x, model.evaluate(x))


# --- exhaustive oracle --------------------------------------------------------

MAX_ENUM_VARS = 12
ENUM_CHUNK = 1 << 16
MAX_COUNT = 3


@dataclass(frozen=True)
class TinyInstance:
    """Raw single- or multi-slice instance described directly by arrays.

    Integer decision entries are the node counts ``k[s][l][i, v]`` and link
    multiplicities ``b[s][l][e, q]``; node usage and adjustments are implied.
    """

    node_cap: np.ndarray  # (n_nodes, 3) residual capacity per resource type
    link_cap: np.ndarray  # (n_links,)
    links: tuple[tuple[int, int], ...]
    unit_cost: np.ndarray  # (n_nodes, 3)
    link_cost: np.ndarray  # (n_links,)
    fixed_cost: np.ndarray  # (n_nodes,)
    adapt_cost: np.ndarray  # (n_nodes,)
    slices: tuple["TinySlice", ...]


@dataclass(frozen=True)
class TinySlice:
    r: np.ndarray  # (n_vnfs, 3)
    vlinks: tuple[tuple[int, int], ...]
    rb: np.ndarray  # (n_vlinks,)
    targets_node: np.ndarray  # (n_slots, n_vnfs, 3)
    targets_link: np.ndarray  # (n_slots, n_vlinks)
    granted: bool = True


def brute_force_solve(inst: TinyInstance, max_count: int = MAX_COUNT):
    """Exhaustive search over all integer points with every count in ``0..max_count``.

    Returns ``(status, objective, solution)`` where solution maps each slice
    index to ``(k, b)`` arrays of shapes ``(slots, nodes, vnfs)`` and
    ``(slots, links, vlinks)``.
    """
    n_nodes = inst.node_cap.shape[0]
    n_links = len(inst.links)
    shapes = []
    for sl in inst.slices:
        n_slots = sl.targets_node.shape[0]
        shapes.append(((n_slots, n_nodes, sl.r.shape[0]), (n_slots, n_links, len(sl.vlinks))))
    n_vars = sum(int(np.prod(a)) + int(np.prod(b)) for a, b in shapes)
    if n_vars > MAX_ENUM_VARS:
        raise ValueError(f"{n_vars} integer variables exceed the enumeration limit of {MAX_ENUM_VARS}")

    base = max_count + 1
    total = base**n_vars
    best_cost, best_point = math.inf, None
    for lo in range(0, total, ENUM_CHUNK):
        idx = np.arange(lo, min(lo + ENUM_CHUNK, total), dtype=np.int64)
        grid = (idx[:, None] // base ** np.arange(n_vars - 1, -1, -1, dtype=np.int64)[None, :]) % base
        grid = grid.astype(float)
        cost = _enum_chunk(inst, shapes, grid)
        j = int(np.argmin(cost))
        # strict improvement keeps the lexicographically first optimum
        if cost[j] < best_cost - 1e-9:
            best_cost, best_point = float(cost[j]), grid[j]
    if best_point is None:
        return INFEASIBLE, math.inf, None
    solution, pos = {}, 0
    for s, (ks, bs) in enumerate(shapes):
        nk, nb = int(np.prod(ks)), int(np.prod(bs))
        solution[s] = (best_point[pos:pos + nk].reshape(ks).astype(int),
                       best_point[pos + nk:pos + nk + nb].reshape(bs).astype(int))
        pos += nk + nb
    return OPTIMAL, best_cost, solution


def _enum_chunk(inst: TinyInstance, shapes, grid: np.ndarray) -> np.ndarray:
    """Cost of each lattice point in `grid`, +inf where infeasible."""
    n_nodes = inst.node_cap.shape[0]
    n_links = len(inst.links)
    feasible = np.ones(grid.shape[0], dtype=bool)
    cost = np.zeros(grid.shape[0])
    n_slots_total = max((s.targets_node.shape[0] for s in inst.slices), default=0)
    node_load = np.zeros((grid.shape[0], n_slots_total, n_nodes, 3))
    link_load = np.zeros((grid.shape[0], n_slots_total, max(n_links, 1)))
    pos = 0
    for sl, (ks, bs) in zip(inst.slices, shapes):
        nk, nb = int(np.prod(ks)), int(np.prod(bs))
        k = grid[:, pos:pos + nk].reshape((len(grid), *ks))
        pos += nk
        b = grid[:, pos:pos + nb].reshape((len(grid), *bs))
        pos += nb
        if not sl.granted:
            feasible &= (k.reshape(len(grid), -1).sum(1) == 0) & (b.reshape(len(grid), -1).sum(1) == 0)
        # cover
        have_n = np.einsum("gsiv,vt->gsvt", k, sl.r)
        need_n = sl.targets_node if sl.granted else np.zeros_like(sl.targets_node)
        feasible &= np.all(have_n >= need_n[None] - FEAS_TOL, axis=(1, 2, 3))
        if len(sl.vlinks):
            have_b = b.sum(axis=2) * sl.rb[None, None, :]
            need_b = sl.targets_link if sl.granted else np.zeros_like(sl.targets_link)
            feasible &= np.all(have_b >= need_b[None] - FEAS_TOL, axis=(1, 2))
        # flow conservation
        for q, (v, w) in enumerate(sl.vlinks):
            out_tot = sl.rb[[p for p, vl in enumerate(sl.vlinks) if vl[0] == v]].sum()
            in_tot = sl.rb[[p for p, vl in enumerate(sl.vlinks) if vl[1] == w]].sum()
            fo = sl.rb[q] / out_tot if out_tot > 0 else 0.0
            fi = sl.rb[q] / in_tot if in_tot > 0 else 0.0
            for i in range(n_nodes):
                net_out = np.zeros((len(grid), ks[0]))
                for e, (a, c) in enumerate(inst.links):
                    if a == c:
                        continue
                    if a == i:
                        net_out += b[:, :, e, q]
                    if c == i:
                        net_out -= b[:, :, e, q]
                rhs = fo * k[:, :, i, v] - fi * k[:, :, i, w]
                feasible &= np.all(np.abs(net_out - rhs) <= FEAS_TOL, axis=1)
        # loads and cost
        node_load[:, :ks[0]] += np.einsum("gsiv,vt->gsit", k, sl.r)
        if n_links:
            link_load[:, :ks[0], :n_links] += np.einsum("gseq,q->gse", b, sl.rb)
        cost += np.einsum("gsiv,vt,it->g", k, sl.r, inst.unit_cost)
        if n_links:
            cost += np.einsum("gseq,q,e->g", b, sl.rb, inst.link_cost)
        used = (k.sum(axis=3) > 0).astype(float)
        cost += np.einsum("gsi,i->g", used, inst.fixed_cost)
        prev = np.concatenate([np.zeros_like(k[:, :1]), k[:, :-1]], axis=1)
        cost += np.einsum("gsiv,i->g", np.maximum(k - prev, 0.0), inst.adapt_cost)
    feasible &= np.all(node_load <= inst.node_cap[None, None] + FEAS_TOL, axis=(1, 2, 3))
    if n_links:
        feasible &= np.all(link_load[:, :, :n_links] <= inst.link_cap[None, None] + FEAS_TOL, axis=(1, 2))
    return np.where(feasible, cost, np.inf)
