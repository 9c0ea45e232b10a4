"""Command-line front end: run, compare and validate."""
from __future__ import annotations

import argparse
import logging
import sys
import traceback
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import reporting
from .engine import run as run_simulation
from .infra import TopologyError, parse_document
from .scenario import ConfigError, Scenario, cli_overrides, deep_merge, load_scenario, with_label

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
VARIANTS = ("jpr", "spr", "jit")

log = logging.getLogger("slicereserve")


def _fmt(x: float) -> str:
    return f"{x:g}"


def _flag_label(base: str, args) -> str:
    """Label carrying the policy flags that were overridden on the command line."""
    parts = []
    if args.variant is not None:
        parts.append(args.variant)
    if args.alpha is not None:
        parts.append(f"alpha={_fmt(args.alpha)}")
    if args.delta_p is not None:
        parts.append(f"delta_p={_fmt(args.delta_p)}")
    return f"{base}[{','.join(parts)}]" if parts else base


def execute(scenario: Scenario, out: Path) -> tuple[dict, list[str]]:
    """Simulate one scenario and write its artifacts to `out`."""
    result = run_simulation(scenario.config, scenario.net, scenario.catalog)
    out.mkdir(parents=True, exist_ok=True)
    paths = reporting.write_run(result, out, scenario.fingerprint)
    tmp = out / "scenario.yaml.tmp"
    tmp.write_text(scenario.to_yaml())
    tmp.replace(out / "scenario.yaml")
    paths["scenario"] = out / "scenario.yaml"
    return paths, result.violations


def cmd_run(args) -> int:
    try:
        overrides = cli_overrides(seed=args.seed, variant=args.variant, alpha=args.alpha, delta_p=args.delta_p,
                                  horizon=args.horizon, solver=args.solver, time_limit=args.time_limit)
        scenario = load_scenario(args.scenario, overrides)
        scenario = with_label(scenario, _flag_label(scenario.config.label, args))
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        paths, violations = execute(scenario, out)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _, rows = reporting.read_csv(paths["summary"], reporting.SUMMARY_SCHEMA)
    _print_summary(rows)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _print_summary(rows: Sequence[Mapping[str, str]]) -> None:
    print(f"{'label':<28}{'variant':<8}{'class':<10}{'accepted':>10}{'delay':>10}{'cost':>12}{'adjust':>10}")
    for r in rows:
        print(f"{r['label']:<28}{r['variant']:<8}{r['class']:<10}{r['accepted'] + '/' + r['requests']:>10}"
              f"{float(r['mean_response_delay']):>10.3f}{float(r['mean_cost']):>12.2f}"
              f"{float(r['mean_adjusted_instances']):>10.3f}")


# ---------------------------------------------------------------- compare

@dataclass(frozen=True)
class Member:
    label: str
    variant: str | None
    seed: int
    overrides: Mapping[str, Any]
    out: Path


@dataclass(frozen=True)
class ExperimentGrid:
    base: Path | None
    members: tuple[Member, ...]
    jobs: int
    out: Path


def load_grid(path: Path, out: Path | None = None) -> ExperimentGrid:
    if not path.exists():
        raise ConfigError(f"grid file {str(path)!r} not found")
    try:
        data = parse_document(path.read_text(), str(path))
    except TopologyError as exc:
        raise ConfigError(str(exc)) from None
    if not isinstance(data, Mapping):
        raise ConfigError("grid: expected a mapping")
    extra = set(data) - {"base", "seeds", "variants", "scenarios", "jobs", "out"}
    if extra:
        raise ConfigError(f"grid: unknown keys {sorted(extra)}")
    base = data.get("base")
    base_path = (path.parent / base) if base is not None and not Path(base).is_absolute() else (
        Path(base) if base is not None else None)
    seeds = data.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool)
                                                           for s in seeds):
        raise ConfigError("grid.seeds: expected a non-empty list of integers")
    variants = data.get("variants") or [None]
    for v in variants:
        if v is not None and v not in VARIANTS:
            raise ConfigError(f"grid.variants: expected one of {list(VARIANTS)}, got {v!r}")
    cells = data.get("scenarios") or [{}]
    if not isinstance(cells, list):
        raise ConfigError("grid.scenarios: expected a list")
    labels = []
    for n, cell in enumerate(cells):
        if not isinstance(cell, Mapping) or set(cell) - {"label", "overrides"}:
            raise ConfigError(f"grid.scenarios[{n}]: expected keys label and overrides")
        if "label" not in cell and len(cells) > 1:
            raise ConfigError(f"grid.scenarios[{n}]: missing key 'label'")
        labels.append(cell.get("label"))
    if len(set(labels)) != len(labels):
        raise ConfigError("grid.scenarios: labels must be unique")
    root = out or Path(data.get("out") or path.with_suffix(""))
    members = []
    for cell in cells:
        for variant in variants:
            for seed in seeds:
                over = dict(cell.get("overrides") or {})
                over = deep_merge(over, cli_overrides(seed=seed, variant=variant))
                label = cell.get("label")
                d = root / (label or "base") / (variant or "scenario") / f"seed-{seed}"
                members.append(Member(label, variant, seed, over, d))
    jobs = int(data.get("jobs", 1))
    if jobs < 1:
        raise ConfigError("grid.jobs: expected a positive integer")
    return ExperimentGrid(base_path, tuple(members), jobs, root)


def _member_scenario(grid: ExperimentGrid, m: Member) -> Scenario:
    sc = load_scenario(grid.base, m.overrides)
    return with_label(sc, m.label) if m.label else sc


def _run_member(grid: ExperimentGrid, m: Member) -> list[str]:
    _, violations = execute(_member_scenario(grid, m), m.out)
    return violations


def cmd_compare(args) -> int:
    try:
        grid = load_grid(Path(args.grid), Path(args.out) if args.out else None)
        if args.jobs:
            grid = ExperimentGrid(grid.base, grid.members, args.jobs, grid.out)
        for m in grid.members:  # fail fast on configuration problems
            _member_scenario(grid, m)
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    done: list[Member] = []
    failure = None
    violations: list[str] = []
    if grid.jobs == 1:
        for m in grid.members:
            try:
                violations += _run_member(grid, m)
                done.append(m)
            except Exception as exc:  # noqa: BLE001
                failure = (m, exc)
                break
    else:
        with ProcessPoolExecutor(max_workers=grid.jobs) as pool:
            futures = {pool.submit(_run_member, grid, m): m for m in grid.members}
            finished, pending = wait(futures, return_when=FIRST_EXCEPTION)
            for f in pending:
                f.cancel()
            for f in finished:
                if f.exception() is None:
                    violations += f.result()
                    done.append(futures[f])
                elif failure is None:
                    failure = (futures[f], f.exception())
    done.sort(key=grid.members.index)

    summaries = []
    for m in done:
        _, rows = reporting.read_csv(m.out / "metrics_summary.csv", reporting.SUMMARY_SCHEMA)
        summaries += rows
    if summaries:
        paths = reporting.write_panels(summaries, grid.out)
        _print_panels(paths)
    if failure is not None:
        m, exc = failure
        print(f"runtime error: member {m.label or 'base'}/{m.variant or 'scenario'}/seed-{m.seed} failed: {exc}",
              file=sys.stderr)
        log.debug("".join(traceback.format_exception(exc)))
        print(f"{len(done)} of {len(grid.members)} members completed; partial results kept in {grid.out}",
              file=sys.stderr)
        return EXIT_RUNTIME
    for v in violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_RUNTIME if violations else EXIT_OK


def _print_panels(paths: Mapping[str, Path]) -> None:
    for panel, path in paths.items():
        print(f"== {panel}")
        for line in path.read_text().splitlines()[1:]:
            print("  " + "  ".join(f"{v:<14}" for v in line.split(",")))


# ---------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        tags, rows = reporting.read_csv(Path(args.decisions), reporting.DECISIONS_SCHEMA)
    except (OSError, reporting.SchemaError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logged = tags.get("scenario")
    if logged and logged != scenario.fingerprint:
        print(f"scenario mismatch: decisions were produced with scenario {logged}, "
              f"got {scenario.fingerprint}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = reporting.replay(rows, scenario)
    except (reporting.SchemaError, KeyError, ValueError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for v in report:
        print(v)
    if report:
        print(f"{len(report)} violation(s)", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"ok: {len(rows)} decisions, {sum(r['granted'] == '1' for r in rows)} granted, no violations")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicereserve", description="Prioritized slice reservation simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", help="scenario file (built-in default when omitted)")
    r.add_argument("--seed", type=int)
    r.add_argument("--variant", choices=VARIANTS)
    r.add_argument("--alpha", type=float)
    r.add_argument("--delta-p", dest="delta_p", type=float)
    r.add_argument("--horizon", type=int)
    r.add_argument("--out", default="out")
    r.add_argument("--solver", choices=("builtin", "external"))
    r.add_argument("--time-limit", dest="time_limit", type=float)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run a scenario x seed grid and aggregate")
    c.add_argument("grid")
    c.add_argument("--out")
    c.add_argument("--jobs", type=int)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="replay logged decisions against a scenario")
    v.add_argument("decisions")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
