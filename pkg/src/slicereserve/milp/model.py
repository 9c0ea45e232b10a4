"""Generic indexed MILP container with array and LP-text views."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from scipy import sparse

INTEGER = "integer"
BINARY = "binary"
CONTINUOUS = "continuous"


@dataclass
class Variable:
    name: str
    kind: str
    lb: float
    ub: float
    key: Hashable
    priority: int = 0  # higher is branched on first


@dataclass
class Constraint:
    name: str
    coeffs: dict[int, float]
    sense: str  # "<=", ">=", "=="
    rhs: float
    family: str
    key: Hashable = None


@dataclass
class MilpModel:
    """Minimization model. Variable order is the order of :meth:`add_var` calls."""

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    index: dict[Hashable, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _names: set = field(default_factory=set, repr=False)

    def add_var(self, key: Hashable, name: str, kind: str, lb: float = 0.0, ub: float = math.inf,
                cost: float = 0.0, priority: int = 0) -> int:
        if key in self.index:
            raise KeyError(f"variable {key!r} declared twice")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if kind in (INTEGER, BINARY) and not math.isfinite(ub):
            raise ValueError(f"integer variable {name} needs a finite upper bound")
        idx = len(self.variables)
        if name in self._names:
            name = f"{name}_{idx}"
        self._names.add(name)
        self.variables.append(Variable(name, kind, float(lb), float(ub), key, priority))
        self.index[key] = idx
        if cost:
            self.objective[idx] = float(cost)
        return idx

    def add_row(self, name: str, coeffs: dict[int, float], sense: str, rhs: float, family: str,
                key: Hashable = None) -> None:
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"bad sense {sense!r}")
        n = len(self.variables)
        for j in coeffs:
            if not 0 <= j < n:
                raise IndexError(f"row {name} references undeclared variable {j}")
        self.constraints.append(Constraint(name, {j: c for j, c in coeffs.items() if c != 0.0}, sense,
                                           float(rhs), family, key))

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    def family_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.constraints:
            out[row.family] = out.get(row.family, 0) + 1
        return out

    # --- numeric views ----------------------------------------------------

    def arrays(self):
        """(c, A_ub, b_ub, A_eq, b_eq, lb, ub, integrality) with ``>=`` rows negated into ``<=``."""
        n = self.num_vars
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = v
        ub_rows, ub_cols, ub_vals, b_ub = [], [], [], []
        eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
        for row in self.constraints:
            if row.sense == "==":
                r = len(b_eq)
                for j, a in row.coeffs.items():
                    eq_rows.append(r), eq_cols.append(j), eq_vals.append(a)
                b_eq.append(row.rhs)
            else:
                sign = 1.0 if row.sense == "<=" else -1.0
                r = len(b_ub)
                for j, a in row.coeffs.items():
                    ub_rows.append(r), ub_cols.append(j), ub_vals.append(sign * a)
                b_ub.append(sign * row.rhs)
        a_ub = sparse.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(len(b_ub), n))
        a_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), n))
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        integrality = np.array([v.kind != CONTINUOUS for v in self.variables], dtype=bool)
        return c, a_ub, np.array(b_ub), a_eq, np.array(b_eq), lb, ub, integrality

    def evaluate(self, x) -> float:
        return float(sum(c * x[j] for j, c in self.objective.items()))

    def violations(self, x, tol: float = 1e-6) -> list[str]:
        out = []
        for j, v in enumerate(self.variables):
            if x[j] < v.lb - tol or x[j] > v.ub + tol:
                out.append(f"bound {v.name}: {x[j]} not in [{v.lb}, {v.ub}]")
            if v.kind != CONTINUOUS and abs(x[j] - round(x[j])) > tol:
                out.append(f"integrality {v.name}: {x[j]}")
        for row in self.constraints:
            lhs = sum(a * x[j] for j, a in row.coeffs.items())
            if row.sense == "<=" and lhs > row.rhs + tol or row.sense == ">=" and lhs < row.rhs - tol \
                    or row.sense == "==" and abs(lhs - row.rhs) > tol:
                out.append(f"row {row.name}: {lhs} {row.sense} {row.rhs}")
        return out

    # --- LP text ----------------------------------------------------------

    def to_lp(self) -> str:
        """CPLEX LP format (minimize / subject to / bounds / generals / binaries)."""
        names = [v.name for v in self.variables]
        lines = ["\\ generated by slicereserve", "Minimize"]
        lines += _wrap(" obj:", _terms(self.objective, names) or (f" 0 {names[0]}" if names else " 0"))
        lines.append("Subject To")
        for row in self.constraints:
            sense = "=" if row.sense == "==" else row.sense
            expr = _terms(row.coeffs, names)
            if not expr:
                # LP format cannot express an empty row; anchor it on the first variable
                expr = f" 0 {names[0]}" if names else " 0"
            lines += _wrap(f" {row.name}:", f"{expr} {sense} {_num(row.rhs)}")
        lines.append("Bounds")
        for v in self.variables:
            if v.kind == BINARY:
                continue
            ub = "+inf" if math.isinf(v.ub) else _num(v.ub)
            lines.append(f" {_num(v.lb)} <= {v.name} <= {ub}")
        generals = [v.name for v in self.variables if v.kind == INTEGER]
        binaries = [v.name for v in self.variables if v.kind == BINARY]
        if generals:
            lines.append("Generals")
            lines += _wrap("", " " + " ".join(generals))
        if binaries:
            lines.append("Binaries")
            lines += _wrap("", " " + " ".join(binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def _terms(coeffs: dict[int, float], names: list[str]) -> str:
    parts = []
    for j in sorted(coeffs):
        a = coeffs[j]
        parts.append(f" {'-' if a < 0 else '+'} {_num(abs(a))} {names[j]}")
    return "".join(parts)


def _wrap(head: str, body: str, width: int = 200) -> list[str]:
    tokens = body.split(" ")
    lines, cur = [], head
    for tok in tokens:
        if not tok:
            continue
        if len(cur) + len(tok) + 1 > width and cur.strip():
            lines.append(cur)
            cur = "   "
        cur += " " + tok
    lines.append(cur)
    return lines


_NAME_RE = re.compile(r"[^A-Za-z0-9_]")


def lp_name(*parts) -> str:
    """LP-safe identifier from key parts (letters, digits and underscores only)."""
    return "_".join(_NAME_RE.sub("", str(p)) for p in parts)
