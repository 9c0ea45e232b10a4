"""Versioned CSV logs of a simulation run and their readers."""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .engine import SimulationResult, assignment_from_json, assignment_to_json

DECISIONS_SCHEMA = "decisions/1"
UTILIZATION_SCHEMA = "utilization/1"
SUMMARY_SCHEMA = "summary/1"

DECISION_FIELDS = ["id", "class", "type", "pattern", "arrival", "k_on", "k_off", "decision_slot", "decision_time",
                   "response_delay", "granted", "status", "resource_cost", "fixed_cost", "adaptation_cost",
                   "total_cost", "adjustments", "gammas", "kappa"]
UTILIZATION_FIELDS = ["slot", "element", "type", "reserved", "background_target", "capacity"]
SUMMARY_FIELDS = ["label", "variant", "processing", "alpha", "delta_p", "seed", "class", "requests", "accepted",
                  "acceptance_rate", "mean_response_delay", "mean_cost", "mean_adjusted_instances",
                  "solver_time", "solver_calls"]


class SchemaError(ValueError):
    pass


def _num(x: float) -> str:
    x = float(x)
    if x != x:
        return "nan"
    return repr(round(x, 10) + 0.0)


def _write(path: Path, header: str, fields: list[str], rows: Iterable[list]) -> None:
    buf = io.StringIO()
    buf.write(f"#schema={header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow(row)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)  # atomic per file


def decision_rows(result: SimulationResult) -> list[list]:
    rows = []
    for sid in sorted(result.decisions):
        d = result.decisions[sid]
        r = d.request
        rows.append([
            r.id, r.priority_class.value, r.slice_type, r.pattern, _num(r.arrival_time), r.k_on, r.k_off,
            d.decision_slot, _num(d.decision_time), _num(d.response_delay), int(d.granted), d.solver_status,
            _num(d.cost.resource_cost), _num(d.cost.fixed_cost), _num(d.cost.adaptation_cost), _num(d.cost.total),
            json.dumps({str(k): v for k, v in sorted(d.adjustments.items())}, separators=(",", ":")),
            json.dumps({str(k): round(v, 8) for k, v in sorted(d.gammas.items())}, separators=(",", ":")),
            assignment_to_json(d.assignment),
        ])
    return rows


def summary_rows(result: SimulationResult) -> list[list]:
    cfg = result.config
    rows = []
    m = result.metrics
    classes = list(m.per_class.items()) + [("all", m.overall)]
    for name, cm in classes:
        rows.append([cfg.label, cfg.variant, cfg.policy.processing, _num(cfg.policy.alpha), _num(cfg.policy.delta_p),
                     cfg.seed, name, cm.requests, cm.accepted, _num(cm.acceptance_rate), _num(cm.mean_delay),
                     _num(cm.mean_cost), _num(cm.mean_adjustments), _num(m.solver_time), m.solver_calls])
    return rows


def write_run(result: SimulationResult, out: Path, fingerprint: str = "") -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{DECISIONS_SCHEMA} scenario={fingerprint}" if fingerprint else DECISIONS_SCHEMA
    paths = {"decisions": out / "decisions.csv", "utilization": out / "utilization.csv",
             "summary": out / "metrics_summary.csv"}
    _write(paths["decisions"], tag, DECISION_FIELDS, decision_rows(result))
    _write(paths["utilization"], UTILIZATION_SCHEMA, UTILIZATION_FIELDS,
           ([sl, el, t, _num(res), _num(bg), _num(cap)] for sl, el, t, res, bg, cap in result.utilization))
    _write(paths["summary"], SUMMARY_SCHEMA, SUMMARY_FIELDS, summary_rows(result))
    return paths


def read_csv(path: Path, schema: str) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Rows of a versioned CSV; header tags after the schema come back as a dict."""
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    if not first.startswith("#schema="):
        raise SchemaError(f"{path}: missing schema line")
    parts = first[len("#schema="):].split()
    if parts[0] != schema:
        raise SchemaError(f"{path}: schema {parts[0]!r} is not {schema!r}")
    tags = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
    reader = csv.DictReader(io.StringIO(rest))
    expected = {DECISIONS_SCHEMA: DECISION_FIELDS, UTILIZATION_SCHEMA: UTILIZATION_FIELDS,
                SUMMARY_SCHEMA: SUMMARY_FIELDS}[schema]
    if reader.fieldnames != expected:
        raise SchemaError(f"{path}: unexpected columns {reader.fieldnames}")
    return tags, list(reader)


def read_assignments(rows: list[Mapping[str, str]]):
    """Granted assignments keyed by slice id, plus the request attributes logged with them."""
    out = {}
    for row in rows:
        sid = int(row["id"])
        out[sid] = assignment_from_json(sid, row["granted"] == "1", row["kappa"])
    return out


def aggregate(summaries: list[Mapping[str, str]], metric: str) -> list[list]:
    """Per (label, variant, processing, class) mean and sample std of `metric` over seeds."""
    groups: dict[tuple, list[float]] = {}
    for row in summaries:
        key = (row["label"], row["variant"], row["processing"], row["class"])
        groups.setdefault(key, []).append(float(row[metric]))
    rows = []
    for (label, variant, processing, cls), vals in groups.items():
        arr = np.array(vals, dtype=float)
        arr = arr[~np.isnan(arr)]
        mean = float(arr.mean()) if arr.size else float("nan")
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append([label, variant, processing, cls, len(vals), _num(mean), _num(std)])
    return rows


PANEL_FIELDS = ["label", "variant", "processing", "class", "runs", "mean", "std"]
PANELS = {
    "acceptance": "acceptance_rate",
    "response_delay": "mean_response_delay",
    "adjusted_instances": "mean_adjusted_instances",
    "cost": "mean_cost",
    "solver_time": "solver_time",
}


def write_panels(summaries: list[Mapping[str, str]], out: Path) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for panel, metric in PANELS.items():
        path = out / f"panel_{panel}.csv"
        _write(path, f"panel/1 metric={metric}", PANEL_FIELDS,
               aggregate(summaries, metric))
        paths[panel] = path
    return paths


def requests_from_rows(rows: list[Mapping[str, str]], catalog, pattern_profile) -> dict:
    from .slices import PriorityClass, make_request

    out = {}
    for row in rows:
        sid = int(row["id"])
        stype = int(row["type"])
        if stype not in catalog:
            raise SchemaError(f"decision {sid}: slice type {stype} is not in the scenario catalog")
        k_on, k_off = int(row["k_on"]), int(row["k_off"])
        out[sid] = make_request(catalog, id=sid, slice_type=stype, priority_class=PriorityClass(row["class"]),
                                arrival_time=float(row["arrival"]), k_on=k_on, lifetime=k_off - k_on + 1,
                                pattern=int(row["pattern"]), pattern_profile=pattern_profile)
    return out


def replay(rows: list[Mapping[str, str]], scenario) -> list[str]:
    """Re-check every logged decision batch, in decision order, against the scenario's constraints."""
    from .engine import TargetCache, _capacity_check
    from .milp import Committed, validate_assignment
    from .uncertainty import BackgroundModel, background_targets

    cfg, net = scenario.config, scenario.net
    bg = background_targets(BackgroundModel.from_fractions(net, cfg.bg_mean_fraction, cfg.bg_std_fraction,
                                                           cfg.impact_threshold))
    reqs = requests_from_rows(rows, scenario.catalog, cfg.pattern_profile)
    assigns = read_assignments(rows)
    cache = TargetCache(cfg.gamma_tol)
    targets = {sid: cache.get(r) for sid, r in reqs.items()}
    by_slot: dict[int, list[int]] = {}
    for row in rows:
        by_slot.setdefault(int(row["decision_slot"]), []).append(int(row["id"]))
    committed: list = []
    out: list[str] = []
    for k in sorted(by_slot):
        new = {sid: assigns[sid] for sid in by_slot[k]}
        out += [f"slot {k}: {v}" for v in validate_assignment(
            new, net, reqs, targets, bg, {c.request.id: c.assignment for c in committed})]
        committed += [Committed(reqs[sid], a) for sid, a in new.items() if a.granted]
    for sl in sorted({sl for c in committed for sl in c.request.active_slots}):
        out += [f"slot {sl}: {v}" for v in _capacity_check(net, bg, committed, sl)]
    return out
