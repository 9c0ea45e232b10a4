"""Scenario documents: one YAML file describing topology, catalog, workload, policy and solver."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .engine import JPR, SPR, ScenarioConfig
from .infra import InfrastructureNetwork, TopologyError, build_fat_tree, load_topology, parse_document, \
    topology_from_data, topology_to_data
from .policy import JUST_IN_TIME, PRIORITIZED, PolicyParams
from .slices import SliceType, builtin_slice_catalog, catalog_from_overrides


class ConfigError(ValueError):
    """Scenario document is malformed or inconsistent; the message names the offending key."""


SECTIONS = {"label", "seed", "topology", "costs", "catalog", "arrivals", "policy", "variant", "background",
            "solver"}
_ARRIVAL_KEYS = {"rate", "num_requests", "horizon", "premium_fraction", "premium_count", "activation_delay",
                 "lifetime", "slice_types", "pattern_profile", "epsilon"}
_POLICY_KEYS = {"p_max", "alpha", "delta_p"}
_VARIANT_KEYS = {"name", "processing"}
_BACKGROUND_KEYS = {"mean_fraction", "std_fraction", "impact_threshold"}
_SOLVER_KEYS = {"backend", "time_limit", "node_limit", "mip_gap", "on_timeout"}
_COST_KEYS = {"unit_cost", "fixed_cost", "adaptation_cost"}

DEFAULT_SCENARIO = """\
label: default
seed: 1
topology: fat-tree-15
arrivals:
  rate: 2.0
  num_requests: 200
  premium_fraction: 0.25
  activation_delay: [1, 6]
  lifetime: [1, 3]
  epsilon: 0.1
policy:
  p_max: 3
  alpha: 0.5
  delta_p: 1.0
variant:
  name: jpr
  processing: prioritized
background:
  mean_fraction: 0.2
  std_fraction: 0.05
  impact_threshold: 0.1
solver:
  backend: builtin
  time_limit: 30
  node_limit: 2000
  mip_gap: 0.01
  on_timeout: accept
"""


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    net: InfrastructureNetwork
    catalog: Mapping[int, SliceType]
    data: Mapping[str, Any]  # resolved document, topology included

    @property
    def fingerprint(self) -> str:
        """Hash of what determines targets and feasibility: resolved network, catalog, background, demand profile.

        The network is hashed after resolution, so a file path and its inlined copy agree.
        """
        d = {"topology": topology_to_data(self.net), "catalog": self.data.get("catalog"),
             "background": self.data.get("background"),
             "pattern_profile": list(self.config.pattern_profile)}
        return hashlib.sha256(json.dumps(_plain(d), sort_keys=True).encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        """Self-contained document: topology inlined with costs folded in."""
        data = {k: v for k, v in self.data.items() if k != "costs"}
        data["topology"] = topology_to_data(self.net)
        return yaml.safe_dump(_plain(data), sort_keys=False)


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def deep_merge(base: Mapping, over: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _section(data: Mapping, name: str, keys: set) -> Mapping:
    block = data.get(name) or {}
    if not isinstance(block, Mapping):
        raise ConfigError(f"{name}: expected a mapping")
    extra = set(block) - keys
    if extra:
        raise ConfigError(f"{name}: unknown keys {sorted(extra)}")
    return block


def _typed(block: Mapping, key: str, kind, path: str, default=None):
    if key not in block or block[key] is None:
        return default
    value = block[key]
    try:
        if kind is float and not isinstance(value, bool):
            return float(value)
        if kind is int and not isinstance(value, bool) and float(value) == int(value):
            return int(value)
        if kind is str:
            return str(value)
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {value!r}")


def _pair(block: Mapping, key: str, path: str, default):
    if key not in block:
        return default
    value = block[key]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}.{key}: expected [low, high]")
    return (_typed({"v": value[0]}, "v", int, f"{path}.{key}"), _typed({"v": value[1]}, "v", int, f"{path}.{key}"))


def resolve_topology(spec: Any, base_dir: Path | None) -> tuple[InfrastructureNetwork, Any]:
    if spec is None:
        raise ConfigError("topology: missing key 'topology'")
    try:
        if isinstance(spec, str):
            if spec in ("fat-tree-15",):
                return load_topology(spec), spec
            path = Path(spec)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"topology: file {spec!r} not found")
            return load_topology(path), spec
        if isinstance(spec, Mapping) and "fat_tree" in spec:
            ft = spec["fat_tree"] or {}
            extra = set(spec) - {"fat_tree"} or set(ft) - {"leaves", "profile"}
            if extra:
                raise ConfigError(f"topology.fat_tree: unknown keys {sorted(extra)}")
            return build_fat_tree(int(ft.get("leaves", 8)), ft.get("profile")), spec
        if isinstance(spec, Mapping):
            return topology_from_data(spec), spec
    except TopologyError as exc:
        raise ConfigError(f"topology: {exc}") from None
    raise ConfigError("topology: expected a builtin name, a file path, a fat_tree block or nodes/links")


def scenario_from_data(data: Mapping, base_dir: Path | None = None) -> Scenario:
    if not isinstance(data, Mapping):
        raise ConfigError("scenario document must be a mapping")
    extra = set(data) - SECTIONS
    if extra:
        raise ConfigError(f"scenario: unknown sections {sorted(extra)}")
    net, _ = resolve_topology(data.get("topology"), base_dir)
    costs = _section(data, "costs", _COST_KEYS)
    if costs:
        net = net.with_costs(unit_cost=_typed(costs, "unit_cost", float, "costs"),
                             fixed_cost=_typed(costs, "fixed_cost", float, "costs"),
                             adaptation_cost=_typed(costs, "adaptation_cost", float, "costs"))
    try:
        catalog = catalog_from_overrides(builtin_slice_catalog(), data.get("catalog"))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"catalog: {exc}") from None

    arr = _section(data, "arrivals", _ARRIVAL_KEYS)
    pol = _section(data, "policy", _POLICY_KEYS)
    var = _section(data, "variant", _VARIANT_KEYS)
    bgs = _section(data, "background", _BACKGROUND_KEYS)
    sol = _section(data, "solver", _SOLVER_KEYS)
    d = ScenarioConfig()
    name = _typed(var, "name", str, "variant", JPR)
    processing = _typed(var, "processing", str, "variant", PRIORITIZED)
    if name == "jit":
        name, processing = JPR, JUST_IN_TIME
    if name not in (JPR, SPR):
        raise ConfigError(f"variant.name: expected jpr, spr or jit, got {name!r}")
    if processing not in (PRIORITIZED, JUST_IN_TIME):
        raise ConfigError(f"variant.processing: expected {PRIORITIZED!r} or {JUST_IN_TIME!r}")
    horizon = _typed(arr, "horizon", int, "arrivals")
    num = _typed(arr, "num_requests", int, "arrivals")
    if horizon is None and num is None:
        num = d.num_requests
    types = tuple(int(t) for t in arr.get("slice_types", d.slice_types))
    for t in types:
        if t not in catalog:
            raise ConfigError(f"arrivals.slice_types: unknown slice type {t}")
    try:
        policy = PolicyParams(p_max=_typed(pol, "p_max", float, "policy", 3.0),
                              alpha=_typed(pol, "alpha", float, "policy", d.policy.alpha),
                              delta_p=_typed(pol, "delta_p", float, "policy", d.policy.delta_p),
                              processing=processing)
        config = ScenarioConfig(
            label=str(data.get("label", "default")),
            seed=_typed(data, "seed", int, "scenario", 1),
            epsilon=_typed(arr, "epsilon", float, "arrivals", d.epsilon),
            horizon=horizon,
            num_requests=num if horizon is None else None,
            arrival_rate=_typed(arr, "rate", float, "arrivals", d.arrival_rate),
            premium_fraction=_typed(arr, "premium_fraction", float, "arrivals",
                                    None if "premium_count" in arr else d.premium_fraction),
            premium_count=_typed(arr, "premium_count", int, "arrivals"),
            activation_delay=_pair(arr, "activation_delay", "arrivals", d.activation_delay),
            lifetime=_pair(arr, "lifetime", "arrivals", d.lifetime),
            slice_types=types,
            pattern_profile=tuple(float(x) for x in arr.get("pattern_profile", d.pattern_profile)),
            policy=policy,
            variant=name,
            impact_threshold=_typed(bgs, "impact_threshold", float, "background", d.impact_threshold),
            bg_mean_fraction=_typed(bgs, "mean_fraction", float, "background", d.bg_mean_fraction),
            bg_std_fraction=_typed(bgs, "std_fraction", float, "background", d.bg_std_fraction),
            solver=_typed(sol, "backend", str, "solver", d.solver),
            time_limit=_typed(sol, "time_limit", float, "solver", d.time_limit),
            node_limit=_typed(sol, "node_limit", int, "solver", d.node_limit),
            mip_gap=_typed(sol, "mip_gap", float, "solver", d.mip_gap),
            on_timeout=_typed(sol, "on_timeout", str, "solver", d.on_timeout),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if config.solver not in ("builtin", "external"):
        raise ConfigError(f"solver.backend: expected builtin or external, got {config.solver!r}")
    return Scenario(config, net, catalog, _plain(data))


def load_scenario(source: str | Path | None = None, overrides: Mapping | None = None) -> Scenario:
    """Load a scenario file (or the built-in default when `source` is None) and apply overrides."""
    base_dir = None
    if source is None:
        data = parse_document(DEFAULT_SCENARIO, "default scenario")
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"scenario file {str(source)!r} not found")
        base_dir = path.parent
        try:
            data = parse_document(path.read_text(), str(path))
        except TopologyError as exc:
            raise ConfigError(str(exc)) from None
        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: scenario document must be a mapping")
        defaults = {k: v for k, v in parse_document(DEFAULT_SCENARIO).items() if k != "topology"}
        data = deep_merge(defaults, data)
    if overrides:
        data = deep_merge(data, overrides)
    return scenario_from_data(data, base_dir)


def cli_overrides(*, seed=None, variant=None, alpha=None, delta_p=None, horizon=None, solver=None,
                  time_limit=None) -> dict:
    """Translate command-line flags into a scenario override block."""
    out: dict = {}
    if seed is not None:
        out["seed"] = seed
    if variant is not None:
        out["variant"] = ({"name": JPR, "processing": JUST_IN_TIME} if variant == "jit"
                          else {"name": variant, "processing": PRIORITIZED})
    pol = {}
    if alpha is not None:
        pol["alpha"] = alpha
    if delta_p is not None:
        pol["delta_p"] = delta_p
    if pol:
        out["policy"] = pol
    if horizon is not None:
        out["arrivals"] = {"horizon": horizon, "num_requests": None}
    sol = {}
    if solver is not None:
        sol["backend"] = solver
    if time_limit is not None:
        sol["time_limit"] = time_limit
    if sol:
        out["solver"] = sol
    return out


def with_label(scenario: Scenario, label: str) -> Scenario:
    data = dict(scenario.data)
    data["label"] = label
    return replace(scenario, config=replace(scenario.config, label=label), data=data)
