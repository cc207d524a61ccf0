"""Network topology: loading, validation and the matrix views used by the planner."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx
import numpy as np

DEFAULT_CAPACITY_BPS = 1e9


class TopologyError(ValueError):
    """Raised for malformed or unusable topology input."""


def node_key(node):
    # numeric labels sort numerically ("2" < "10"), everything else lexically after them
    s = str(node)
    try:
        return (0, int(s), s)
    except ValueError:
        return (1, 0, s)


@dataclass(frozen=True)
class DirectedLink:
    src: str
    dst: str
    capacity: float
    true_delay: float | None = None

    @property
    def pair(self) -> tuple[str, str]:
        return (self.src, self.dst)


@dataclass(frozen=True)
class Topology:
    """Directed network with monitor placement and the set of links to estimate.

    Node ids are kept as strings in natural sorted order, so the position of a
    node in ``nodes`` is its contiguous integer index. ``names`` carries the
    human-readable labels (e.g. city names from Topology Zoo) for reporting.
    """

    nodes: tuple[str, ...]
    links: tuple[DirectedLink, ...]
    monitor_nodes: tuple[str, ...] = ()
    targeted_links: tuple[tuple[str, str], ...] | None = None
    names: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        nodes = [str(n) for n in self.nodes]
        if not nodes:
            raise TopologyError("empty graph: no nodes declared")
        seen = set()
        for n in nodes:
            if n in seen:
                raise TopologyError(f"duplicate node id {n!r}")
            seen.add(n)
        nodes.sort(key=node_key)
        index = {n: i for i, n in enumerate(nodes)}

        links = []
        pairs = set()
        for link in self.links:
            link = replace(link, src=str(link.src), dst=str(link.dst))
            for end in (link.src, link.dst):
                if end not in index:
                    raise TopologyError(f"dangling endpoint {end!r} in link {link.src}->{link.dst}")
            if link.src == link.dst:
                raise TopologyError(f"self-loop link on node {link.src!r}")
            if link.pair in pairs:
                raise TopologyError(f"duplicate link {link.src}->{link.dst}")
            if not link.capacity > 0:
                raise TopologyError(f"link {link.src}->{link.dst} has non-positive capacity {link.capacity}")
            if link.true_delay is not None and link.true_delay < 0:
                raise TopologyError(f"link {link.src}->{link.dst} has negative delay {link.true_delay}")
            pairs.add(link.pair)
            links.append(link)
        links.sort(key=lambda l: (index[l.src], index[l.dst]))

        monitors = sorted({str(m) for m in self.monitor_nodes}, key=node_key)
        for m in monitors:
            if m not in index:
                raise TopologyError(f"monitor node {m!r} is not a declared node")

        if self.targeted_links is None:
            targeted = [l.pair for l in links]
        else:
            targeted = []
            for t in self.targeted_links:
                pair = (str(t[0]), str(t[1]))
                if pair not in pairs:
                    raise TopologyError(f"targeted link {pair[0]}->{pair[1]} is not a declared link")
                if pair not in targeted:
                    targeted.append(pair)
            targeted.sort(key=lambda p: (index[p[0]], index[p[1]]))

        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "links", tuple(links))
        object.__setattr__(self, "monitor_nodes", tuple(monitors))
        object.__setattr__(self, "targeted_links", tuple(targeted))
        object.__setattr__(self, "names", dict(self.names))
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_by_pair", {l.pair: l for l in links})

    def index(self, node) -> int:
        return self._index[str(node)]

    def link(self, src, dst) -> DirectedLink:
        try:
            return self._by_pair[(str(src), str(dst))]
        except KeyError:
            raise TopologyError(f"no link {src}->{dst}") from None

    def has_link(self, src, dst) -> bool:
        return (str(src), str(dst)) in self._by_pair

    def neighbors(self, node) -> list[str]:
        node = str(node)
        return [l.dst for l in self.links if l.src == node]

    def name(self, node) -> str:
        return self.names.get(str(node), str(node))

    def with_monitors(self, monitors: Iterable) -> "Topology":
        return replace(self, monitor_nodes=tuple(str(m) for m in monitors))

    def with_targeted(self, targeted: Iterable[tuple] | None) -> "Topology":
        return replace(self, targeted_links=None if targeted is None else tuple(targeted))

    def with_delays(self, delays: Mapping[tuple[str, str], float]) -> "Topology":
        """Return a copy whose links carry the given ground-truth delays (ms)."""
        delays = {(str(a), str(b)): float(v) for (a, b), v in delays.items()}
        links = tuple(replace(l, true_delay=delays.get(l.pair, l.true_delay)) for l in self.links)
        return replace(self, links=links)

    def to_dict(self) -> dict:
        out = {
            "nodes": list(self.nodes),
            "monitor_nodes": list(self.monitor_nodes),
            "links": [],
            "targeted_links": [list(p) for p in self.targeted_links],
        }
        for l in self.links:
            rec = {"from": l.src, "to": l.dst, "capacity_bps": l.capacity}
            if l.true_delay is not None:
                rec["delay_ms"] = l.true_delay
            out["links"].append(rec)
        if self.names:
            out["names"] = dict(self.names)
        return out


@dataclass(frozen=True)
class TopologyMatrices:
    """Adjacency/capacity matrices plus the targeted-link <-> column bijection."""

    nodes: tuple[str, ...]
    adjacency: np.ndarray
    capacity: np.ndarray
    link_index: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "_col", {p: k for k, p in enumerate(self.link_index)})
        object.__setattr__(self, "_pos", {n: i for i, n in enumerate(self.nodes)})
        self.adjacency.setflags(write=False)
        self.capacity.setflags(write=False)

    def column(self, link) -> int:
        return self._col[(str(link[0]), str(link[1]))]

    def link_of(self, k: int) -> tuple[str, str]:
        return self.link_index[k]

    def is_targeted(self, src, dst) -> bool:
        return (src, dst) in self._col

    def pos(self, node) -> int:
        return self._pos[str(node)]

    def neighbors(self, node) -> list[str]:
        """Out-neighbours of ``node`` in ascending index order."""
        row = self.adjacency[self._pos[str(node)]]
        return [self.nodes[j] for j in np.flatnonzero(row)]


def to_matrices(topo: Topology) -> TopologyMatrices:
    n = len(topo.nodes)
    adj = np.zeros((n, n), dtype=np.int8)
    cap = np.zeros((n, n), dtype=float)
    for l in topo.links:
        i, j = topo.index(l.src), topo.index(l.dst)
        adj[i, j] = 1
        cap[i, j] = l.capacity
    return TopologyMatrices(topo.nodes, adj, cap, tuple(topo.targeted_links))


def possible_sources(topo: Topology) -> list[str]:
    if not topo.monitor_nodes:
        raise TopologyError("no monitor nodes configured; cannot place any monitoring flow")
    return list(topo.monitor_nodes)


# ---------------------------------------------------------------- loading

def _links_from_records(records, default_capacity):
    links = []
    for rec in records:
        try:
            src, dst = rec["from"], rec["to"]
        except KeyError as exc:
            raise TopologyError(f"link record {rec!r} lacks field {exc.args[0]!r}") from None
        links.append(DirectedLink(str(src), str(dst), float(rec.get("capacity_bps", default_capacity)),
                                  None if rec.get("delay_ms") is None else float(rec["delay_ms"])))
    return links


def topology_from_dict(data: dict, default_capacity: float = DEFAULT_CAPACITY_BPS,
                       directed: bool | None = None) -> Topology:
    """Build a Topology from the JSON document layout.

    Links are directed unless ``directed`` is False (or the document sets
    ``"directed": false``), in which case each record is expanded into both
    directions with the same capacity and delay. A single record can also be
    expanded by giving it ``"undirected": true``.
    """
    if not isinstance(data, dict) or "nodes" not in data:
        raise TopologyError("topology document must be an object with a 'nodes' list")
    if directed is None:
        directed = data.get("directed", True)
    records = data.get("links", [])
    links = _links_from_records(records, default_capacity)
    links += [replace(l, src=l.dst, dst=l.src) for l, rec in zip(list(links), records)
              if not directed or rec.get("undirected", False)]
    targeted = data.get("targeted_links")
    return Topology(
        nodes=tuple(str(n) for n in data["nodes"]),
        links=tuple(links),
        monitor_nodes=tuple(str(m) for m in data.get("monitor_nodes", [])),
        targeted_links=None if targeted is None else tuple((str(a), str(b)) for a, b in targeted),
        names=data.get("names", {}),
    )


def topology_from_graph(g: nx.Graph, default_capacity: float = DEFAULT_CAPACITY_BPS,
                        monitor_nodes: Iterable = ()) -> Topology:
    if g.number_of_nodes() == 0:
        raise TopologyError("empty graph: no nodes declared")
    names = {}
    for n, attrs in g.nodes(data=True):
        if "label" in attrs:
            names[str(n)] = str(attrs["label"])
    links = []
    seen = set()
    for u, v, attrs in g.edges(data=True):
        cap = attrs.get("capacity_bps", attrs.get("LinkSpeedRaw", default_capacity))
        delay = attrs.get("delay_ms")
        dirs = [(u, v)] if g.is_directed() else [(u, v), (v, u)]
        for a, b in dirs:
            if (str(a), str(b)) in seen:
                # Topology Zoo occasionally lists parallel edges; keep the first
                continue
            seen.add((str(a), str(b)))
            links.append(DirectedLink(str(a), str(b), float(cap), None if delay is None else float(delay)))
    return Topology(tuple(str(n) for n in g.nodes), tuple(links), tuple(monitor_nodes), None, names)


def load_topology(path, format: str | None = None, *, monitor_nodes: Iterable | None = None,
                  default_capacity: float = DEFAULT_CAPACITY_BPS) -> Topology:
    """Load a topology from JSON or GraphML.

    ``format`` defaults to the file suffix. GraphML edges of an undirected
    graph become two directed links. ``monitor_nodes``, when given, overrides
    whatever placement the file carries.
    """
    path = Path(path)
    if format is None:
        format = "graphml" if path.suffix.lower() in (".graphml", ".xml") else "json"
    if not path.exists():
        raise TopologyError(f"topology file {path} does not exist")
    if format == "json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise TopologyError(f"cannot parse {path}: {exc}") from None
        topo = topology_from_dict(data, default_capacity)
    elif format == "graphml":
        try:
            g = nx.read_graphml(path)
        except Exception as exc:  # networkx raises a zoo of parser errors
            raise TopologyError(f"cannot parse {path}: {exc}") from None
        topo = topology_from_graph(g, default_capacity)
    else:
        raise TopologyError(f"unknown topology format {format!r}")
    if monitor_nodes is not None:
        topo = topo.with_monitors(monitor_nodes)
    return topo


def save_topology(topo: Topology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_dict(), indent=2))


DATA_DIR = Path(__file__).parent / "data"


def zoo_topology(name: str, **kwargs) -> Topology:
    """Load one of the bundled Topology Zoo graphs ("Abilene" or "RedIRIS")."""
    for p in DATA_DIR.glob("*.graphml"):
        if p.stem.lower() == name.lower():
            return load_topology(p, "graphml", **kwargs)
    raise TopologyError(f"no bundled topology named {name!r}")
