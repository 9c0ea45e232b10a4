"""Infrastructure network: nodes, directed links, capacities and cost coefficients."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

RESOURCE_TYPES = ("c", "m", "w")  # computing (CPU), memory (GB), wireless (Gbps)

DEFAULT_UNIT_COST = 1.0
DEFAULT_FIXED_COST = 10.0
DEFAULT_ADAPTATION_COST = 20.0

# Per-layer defaults for the binary fat tree. `uplink` is the bandwidth of the
# links joining a node of this layer to its parent.
DEFAULT_CAPACITY_PROFILE: dict[str, dict[str, float]] = {
    "leaf": {"cpu": 10.0, "mem": 32.0, "wireless": 4.0, "uplink": 10.0, "loopback": 100.0},
    "edge": {"cpu": 50.0, "mem": 128.0, "wireless": 0.0, "uplink": 20.0, "loopback": 100.0},
    "regional": {"cpu": 200.0, "mem": 512.0, "wireless": 0.0, "uplink": 40.0, "loopback": 100.0},
    "central": {"cpu": 400.0, "mem": 1024.0, "wireless": 0.0, "uplink": 0.0, "loopback": 100.0},
}


class TopologyError(ValueError):
    """Raised when a topology description is malformed or violates an invariant."""


@dataclass(frozen=True)
class NodeSpec:
    id: str
    capacity: Mapping[str, float]
    unit_cost: Mapping[str, float]
    fixed_cost: float = DEFAULT_FIXED_COST
    adaptation_cost: float = DEFAULT_ADAPTATION_COST
    layer: str = ""


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    bandwidth: float
    unit_cost: float = DEFAULT_UNIT_COST

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)

    @property
    def is_loopback(self) -> bool:
        return self.src == self.dst


@dataclass(frozen=True)
class InfrastructureNetwork:
    """Directed infrastructure graph. Construct through :meth:`create` to validate."""

    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]
    _node_index: dict = field(default_factory=dict, compare=False, repr=False)
    _link_index: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def create(cls, nodes, links) -> "InfrastructureNetwork":
        nodes = tuple(nodes)
        links = tuple(links)
        node_index: dict[str, NodeSpec] = {}
        for n in nodes:
            if n.id in node_index:
                raise TopologyError(f"duplicate node id {n.id!r}")
            for t in RESOURCE_TYPES:
                _check_nonneg(n.capacity.get(t, 0.0), f"node {n.id!r} capacity[{t}]")
                _check_nonneg(n.unit_cost.get(t, 0.0), f"node {n.id!r} unit_cost[{t}]")
            _check_nonneg(n.fixed_cost, f"node {n.id!r} fixed_cost")
            _check_nonneg(n.adaptation_cost, f"node {n.id!r} adaptation_cost")
            node_index[n.id] = n
        link_index: dict[tuple[str, str], LinkSpec] = {}
        for ln in links:
            for end in (ln.src, ln.dst):
                if end not in node_index:
                    raise TopologyError(f"link {ln.src!r}->{ln.dst!r} references unknown node {end!r}")
            if ln.key in link_index:
                raise TopologyError(f"duplicate link {ln.src!r}->{ln.dst!r}")
            _check_nonneg(ln.bandwidth, f"link {ln.src!r}->{ln.dst!r} bandwidth")
            _check_nonneg(ln.unit_cost, f"link {ln.src!r}->{ln.dst!r} unit_cost")
            link_index[ln.key] = ln
        net = cls(nodes, links, node_index, link_index)
        if nodes and not net._weakly_connected():
            raise TopologyError("network is not weakly connected")
        return net

    def _weakly_connected(self) -> bool:
        adj: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for ln in self.links:
            adj[ln.src].add(ln.dst)
            adj[ln.dst].add(ln.src)
        start = self.nodes[0].id
        seen = {start}
        queue = deque([start])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return len(seen) == len(self.nodes)

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def link_keys(self) -> list[tuple[str, str]]:
        return [ln.key for ln in self.links]

    def node(self, node_id: str) -> NodeSpec:
        return self._node_index[node_id]

    def link(self, key: tuple[str, str]) -> LinkSpec:
        return self._link_index[key]

    def has_link(self, key: tuple[str, str]) -> bool:
        return key in self._link_index

    def capacity(self, node_id: str, rtype: str) -> float:
        return float(self._node_index[node_id].capacity.get(rtype, 0.0))

    def with_costs(self, *, unit_cost=None, fixed_cost=None, adaptation_cost=None) -> "InfrastructureNetwork":
        """Copy of the network with cost coefficients overridden uniformly."""
        nodes = []
        for n in self.nodes:
            nodes.append(
                NodeSpec(
                    id=n.id,
                    capacity=dict(n.capacity),
                    unit_cost={t: unit_cost for t in RESOURCE_TYPES} if unit_cost is not None else dict(n.unit_cost),
                    fixed_cost=n.fixed_cost if fixed_cost is None else fixed_cost,
                    adaptation_cost=n.adaptation_cost if adaptation_cost is None else adaptation_cost,
                    layer=n.layer,
                )
            )
        links = [
            LinkSpec(ln.src, ln.dst, ln.bandwidth, ln.unit_cost if unit_cost is None else unit_cost)
            for ln in self.links
        ]
        return InfrastructureNetwork.create(nodes, links)


def _check_nonneg(value: float, what: str) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value) or value < 0:
        raise TopologyError(f"{what} must be a finite non-negative number, got {value!r}")


def _layer_names(depth: int) -> list[str]:
    """Layer names from the root down for a tree with `depth` layers."""
    if depth == 1:
        return ["leaf"]
    middle = []
    for k in range(depth - 2):  # counted upward from just above the leaves
        middle.append(("edge", "regional")[k] if k < 2 else f"aggregation{k - 1}")
    return ["central"] + middle[::-1] + ["leaf"]


def build_fat_tree(
    leaves: int = 8,
    capacity_profile: Mapping[str, Mapping[str, float]] | None = None,
    *,
    unit_cost: float = DEFAULT_UNIT_COST,
    fixed_cost: float = DEFAULT_FIXED_COST,
    adaptation_cost: float = DEFAULT_ADAPTATION_COST,
) -> InfrastructureNetwork:
    """Binary tree with bidirectional inter-layer links and a loop-back link on every node.

    Nodes are named ``<layer><index>``; the root is ``central0``. The capacity
    profile maps layer name to ``cpu``, ``mem``, ``wireless``, ``uplink`` and
    ``loopback`` values; entries missing from a given profile fall back to
    :data:`DEFAULT_CAPACITY_PROFILE`.
    """
    if not isinstance(leaves, int) or leaves < 2 or leaves & (leaves - 1):
        raise TopologyError(f"leaves must be a power of two >= 2, got {leaves!r}")
    depth = leaves.bit_length()  # log2(leaves) + 1 layers
    names = _layer_names(depth)
    profile: dict[str, dict[str, float]] = {k: dict(v) for k, v in DEFAULT_CAPACITY_PROFILE.items()}
    for layer, values in (capacity_profile or {}).items():
        profile.setdefault(layer, {}).update(values)
    for layer in names:
        if layer not in profile:
            if not layer.startswith("aggregation"):
                raise TopologyError(f"no capacity profile for layer {layer!r}")
            profile[layer] = dict(profile["regional"])  # deeper trees reuse the regional defaults

    nodes: list[NodeSpec] = []
    links: list[LinkSpec] = []
    layer_ids: list[list[str]] = []
    for d, layer in enumerate(names):
        p = profile[layer]
        ids = [f"{layer}{i}" for i in range(2**d)]
        layer_ids.append(ids)
        for nid in ids:
            nodes.append(
                NodeSpec(
                    id=nid,
                    capacity={"c": float(p.get("cpu", 0.0)), "m": float(p.get("mem", 0.0)),
                              "w": float(p.get("wireless", 0.0))},
                    unit_cost={t: unit_cost for t in RESOURCE_TYPES},
                    fixed_cost=fixed_cost,
                    adaptation_cost=adaptation_cost,
                    layer=layer,
                )
            )
            links.append(LinkSpec(nid, nid, float(p.get("loopback", 0.0)), unit_cost))
    for d in range(1, depth):
        bw = float(profile[names[d]].get("uplink", 0.0))
        for i, child in enumerate(layer_ids[d]):
            parent = layer_ids[d - 1][i // 2]
            links.append(LinkSpec(parent, child, bw, unit_cost))
            links.append(LinkSpec(child, parent, bw, unit_cost))
    return InfrastructureNetwork.create(nodes, links)


BUILTIN_TOPOLOGIES = {"fat-tree-15": lambda: build_fat_tree(8)}


# --- topology documents ---------------------------------------------------

_NODE_KEYS = {"id", "layer", "cpu", "mem", "wireless", "unit_cost_c", "unit_cost_m", "unit_cost_w",
              "fixed_cost", "adaptation_cost"}
_LINK_KEYS = {"from", "to", "bandwidth", "unit_cost", "bidirectional"}


class _LineDict(dict):
    line: int | None = None


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    mapping = _LineDict(yaml.SafeLoader.construct_mapping(loader, node, deep=deep))
    mapping.line = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def parse_document(text: str, what: str = "document") -> Any:
    """YAML (or JSON) parse, with mappings remembering their source line."""
    try:
        return yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise TopologyError(f"cannot parse {what}{where}: {getattr(exc, 'problem', exc)}") from None


def _where(item: Any, path: str) -> str:
    line = getattr(item, "line", None)
    return f"{path} (line {line})" if line else path


def _number(item: Mapping, key: str, path: str, default: float | None = None) -> float:
    if key not in item:
        if default is None:
            raise TopologyError(f"{_where(item, path)}: missing field {key!r}")
        return default
    value = item[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TopologyError(f"{_where(item, path)}.{key}: expected a number, got {value!r}")
    if not math.isfinite(value) or value < 0:
        raise TopologyError(f"{_where(item, path)}.{key}: must be finite and non-negative, got {value!r}")
    return float(value)


def topology_from_data(data: Any) -> InfrastructureNetwork:
    if not isinstance(data, Mapping):
        raise TopologyError("topology document must be a mapping with 'nodes' and 'links'")
    extra = set(data) - {"nodes", "links"}
    if extra:
        raise TopologyError(f"{_where(data, 'topology')}: unknown keys {sorted(extra)}")
    nodes = []
    for idx, item in enumerate(data.get("nodes") or []):
        path = f"nodes[{idx}]"
        if not isinstance(item, Mapping):
            raise TopologyError(f"{path}: expected a mapping")
        extra = set(item) - _NODE_KEYS
        if extra:
            raise TopologyError(f"{_where(item, path)}: unknown keys {sorted(extra)}")
        if "id" not in item:
            raise TopologyError(f"{_where(item, path)}: missing field 'id'")
        nodes.append(
            NodeSpec(
                id=str(item["id"]),
                capacity={"c": _number(item, "cpu", path, 0.0), "m": _number(item, "mem", path, 0.0),
                          "w": _number(item, "wireless", path, 0.0)},
                unit_cost={t: _number(item, f"unit_cost_{t}", path, DEFAULT_UNIT_COST) for t in RESOURCE_TYPES},
                fixed_cost=_number(item, "fixed_cost", path, DEFAULT_FIXED_COST),
                adaptation_cost=_number(item, "adaptation_cost", path, DEFAULT_ADAPTATION_COST),
                layer=str(item.get("layer", "")),
            )
        )
    links = []
    for idx, item in enumerate(data.get("links") or []):
        path = f"links[{idx}]"
        if not isinstance(item, Mapping):
            raise TopologyError(f"{path}: expected a mapping")
        extra = set(item) - _LINK_KEYS
        if extra:
            raise TopologyError(f"{_where(item, path)}: unknown keys {sorted(extra)}")
        for key in ("from", "to"):
            if key not in item:
                raise TopologyError(f"{_where(item, path)}: missing field {key!r}")
        src, dst = str(item["from"]), str(item["to"])
        bw = _number(item, "bandwidth", path)
        cost = _number(item, "unit_cost", path, DEFAULT_UNIT_COST)
        links.append(LinkSpec(src, dst, bw, cost))
        if item.get("bidirectional", False) and src != dst:
            links.append(LinkSpec(dst, src, bw, cost))
    try:
        return InfrastructureNetwork.create(nodes, links)
    except TopologyError as exc:
        raise TopologyError(f"invalid topology: {exc}") from None


def load_topology(source: str | Path) -> InfrastructureNetwork:
    """Load a topology from document text, a file path, or a builtin name (``fat-tree-15``)."""
    if isinstance(source, Path):
        return topology_from_data(parse_document(source.read_text(), str(source)))
    if source in BUILTIN_TOPOLOGIES:
        return BUILTIN_TOPOLOGIES[source]()
    return topology_from_data(parse_document(source, "topology"))


def topology_to_data(net: InfrastructureNetwork) -> dict:
    nodes = []
    for n in net.nodes:
        item = {"id": n.id}
        if n.layer:
            item["layer"] = n.layer
        item.update({"cpu": n.capacity.get("c", 0.0), "mem": n.capacity.get("m", 0.0),
                     "wireless": n.capacity.get("w", 0.0)})
        item.update({f"unit_cost_{t}": n.unit_cost.get(t, 0.0) for t in RESOURCE_TYPES})
        item.update({"fixed_cost": n.fixed_cost, "adaptation_cost": n.adaptation_cost})
        nodes.append(item)
    links = [{"from": ln.src, "to": ln.dst, "bandwidth": ln.bandwidth, "unit_cost": ln.unit_cost,
              "bidirectional": False} for ln in net.links]
    return {"nodes": nodes, "links": links}


def dump_topology(net: InfrastructureNetwork) -> str:
    return yaml.safe_dump(topology_to_data(net), sort_keys=False)
