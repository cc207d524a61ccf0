"""Monitoring-flow planning: route enumeration, greedy selection and constraint checks."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .linalg import RowBasis, gaussian_rank
from .topology import Topology, TopologyMatrices, possible_sources, to_matrices

MAX_TOS = 255  # ToS 0 is reserved for ordinary traffic

Link = tuple[str, str]


class PlanError(Exception):
    pass


class CoverageError(PlanError):
    """Some targeted links cannot be crossed by ``min_cover`` admissible flows."""

    def __init__(self, uncovered: Sequence[Link], plan: "FlowPlan | None" = None):
        self.uncovered = list(uncovered)
        self.plan = plan
        shown = ", ".join(f"{a}->{b}" for a, b in self.uncovered[:10])
        more = "" if len(self.uncovered) <= 10 else f" (+{len(self.uncovered) - 10} more)"
        super().__init__(f"{len(self.uncovered)} targeted link(s) under-covered: {shown}{more}")


class ToSExhaustedError(PlanError):
    pass


@dataclass(frozen=True)
class MonitoringFlow:
    id: int
    source: str
    destination: str
    path: tuple[Link, ...]
    tos: int = 0

    @classmethod
    def from_nodes(cls, id: int, nodes: Sequence, tos: int = 0) -> "MonitoringFlow":
        nodes = [str(n) for n in nodes]
        return cls(id, nodes[0], nodes[-1], tuple(zip(nodes[:-1], nodes[1:])), tos)

    @property
    def nodes(self) -> list[str]:
        if not self.path:
            return [self.source]
        return [self.path[0][0]] + [b for _, b in self.path]

    @property
    def length(self) -> int:
        return len(self.path)

    @property
    def is_loop(self) -> bool:
        return self.source == self.destination

    @property
    def link_set(self) -> frozenset:
        return frozenset(self.path)

    def problems(self, max_length: int | None = None) -> list[str]:
        """Structural invariant violations of this flow (empty when well formed)."""
        out = []
        if not self.path:
            return ["empty path"]
        if self.path[0][0] != self.source:
            out.append(f"path starts at {self.path[0][0]}, not source {self.source}")
        if self.path[-1][1] != self.destination:
            out.append(f"path ends at {self.path[-1][1]}, not destination {self.destination}")
        for (a, b), (c, d) in zip(self.path, self.path[1:]):
            if b != c:
                out.append(f"links {a}->{b} and {c}->{d} are not adjacent")
        if max_length is not None and self.length > max_length:
            out.append(f"length {self.length} exceeds {max_length}")
        if len(set(self.path)) != len(self.path):
            out.append("a directed link repeats")
        inner = self.nodes[1:-1] if self.is_loop else self.nodes
        if self.is_loop and self.source in inner:
            out.append("source revisited mid-path")
        if len(set(inner)) != len(inner):
            out.append("a node repeats")
        if not 0 <= self.tos <= 255:
            out.append(f"tos {self.tos} outside 0..255")
        return out

    def to_dict(self) -> dict:
        return {"id": self.id, "source": self.source, "destination": self.destination,
                "path": self.nodes, "tos": self.tos}

    @classmethod
    def from_dict(cls, d: dict) -> "MonitoringFlow":
        f = cls.from_nodes(int(d["id"]), d["path"], int(d.get("tos", 0)))
        return cls(f.id, str(d.get("source", f.source)), str(d.get("destination", f.destination)), f.path, f.tos)


@dataclass(frozen=True)
class PlanConfig:
    """Planner knobs.

    ``probe_rate`` is in bits/s and ``max_overhead`` is the largest tolerated
    fraction of any link's capacity used by probes. ``allowed_lengths``
    defaults to ``1..max_length``. ``mode`` is ``"stop"`` (add a route only
    while it still helps an under-covered link) or ``"exhaustive"``.
    """

    max_length: int = 5
    min_cover: int = 2
    probe_rate: float = 10_000.0
    max_overhead: float = 0.1
    allowed_lengths: tuple[int, ...] | None = None
    big_m: int | None = None
    mode: str = "stop"
    rank_safeguard: bool = True

    def __post_init__(self):
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.min_cover < 1:
            raise ValueError("min_cover must be >= 1")
        if not 0 < self.max_overhead <= 1:
            raise ValueError("max_overhead must lie in (0, 1]")
        if not self.probe_rate > 0:
            raise ValueError("probe_rate must be positive")
        if self.mode not in ("stop", "exhaustive"):
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if self.allowed_lengths is not None:
            lengths = tuple(sorted({int(x) for x in self.allowed_lengths}))
            if any(x < 1 or x > self.max_length for x in lengths):
                raise ValueError("allowed_lengths must lie in 1..max_length")
            object.__setattr__(self, "allowed_lengths", lengths)

    @property
    def lengths(self) -> tuple[int, ...]:
        return self.allowed_lengths or tuple(range(1, self.max_length + 1))


@dataclass
class FlowPlan:
    flows: tuple[MonitoringFlow, ...]
    link_index: tuple[Link, ...]
    measurement_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        self.flows = tuple(self.flows)
        self.link_index = tuple((str(a), str(b)) for a, b in self.link_index)
        col = {p: k for k, p in enumerate(self.link_index)}
        m = np.zeros((len(self.flows), len(self.link_index)), dtype=np.int8)
        for r, f in enumerate(self.flows):
            for l in f.path:
                if l in col:
                    m[r, col[l]] = 1
        self.measurement_matrix = m

    @property
    def covered_links(self) -> set[Link]:
        cols = np.flatnonzero(self.measurement_matrix.sum(axis=0))
        return {self.link_index[k] for k in cols}

    @property
    def rank(self) -> int:
        return gaussian_rank(self.measurement_matrix)

    @property
    def null_space_dim(self) -> int:
        return len(self.link_index) - self.rank

    def to_dict(self) -> dict:
        return {
            "link_index": [list(p) for p in self.link_index],
            "flows": [f.to_dict() for f in self.flows],
            "measurement": [np.flatnonzero(row).tolist() for row in self.measurement_matrix],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlowPlan":
        plan = cls(tuple(MonitoringFlow.from_dict(f) for f in d["flows"]),
                   tuple(tuple(p) for p in d["link_index"]))
        if "measurement" in d:
            stored = [sorted(int(k) for k in row) for row in d["measurement"]]
            if stored != [np.flatnonzero(r).tolist() for r in plan.measurement_matrix]:
                raise PlanError("stored measurement matrix disagrees with the flow paths")
        return plan


# ---------------------------------------------------------------- routes

def _hops_to(target: str, mats: TopologyMatrices) -> dict[str, int]:
    """Hop distance from every node to ``target`` (BFS on reversed links)."""
    adj = mats.adjacency
    t = mats.pos(target)
    dist = {t: 0}
    queue = deque([t])
    while queue:
        v = queue.popleft()
        for u in np.flatnonzero(adj[:, v]):
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    return {mats.nodes[i]: d for i, d in dist.items()}


def find_routes(start, length: int, matrices: TopologyMatrices,
                targeted: Iterable[Link] | None = None) -> list[MonitoringFlow]:
    """All loops of exactly ``length`` hops leaving and re-entering ``start``.

    Intermediate nodes are distinct and differ from ``start``; only loops that
    cross at least one targeted link are kept. Neighbours are explored in
    ascending order, so the output order is deterministic.
    """
    start = str(start)
    if length < 1:
        return []
    targeted = set(matrices.link_index) if targeted is None else {(str(a), str(b)) for a, b in targeted}
    back = _hops_to(start, matrices)
    nbrs = {n: matrices.neighbors(n) for n in matrices.nodes}
    routes: list[MonitoringFlow] = []
    path = [start]
    on_path = {start}

    def walk(node, remaining):
        if remaining == 0:
            if node == start and len(path) > 1:
                links = tuple(zip(path[:-1], path[1:]))
                if any(l in targeted for l in links):
                    routes.append(MonitoringFlow(len(routes), start, start, links))
            return
        for n in nbrs[node]:
            if n == start:
                if remaining == 1:
                    path.append(n)
                    walk(n, 0)
                    path.pop()
                continue
            if n in on_path or back.get(n, remaining) > remaining - 1:
                continue
            path.append(n)
            on_path.add(n)
            walk(n, remaining - 1)
            on_path.discard(n)
            path.pop()

    walk(start, length)
    return routes


def candidate_routes(topo: Topology, cfg: PlanConfig, matrices: TopologyMatrices | None = None):
    """Yield every admissible loop, lengths ascending then sources ascending."""
    mats = matrices or to_matrices(topo)
    for length in cfg.lengths:
        for src in possible_sources(topo):
            yield from find_routes(src, length, mats)


def assign_tos(flows: Iterable[MonitoringFlow]) -> tuple[MonitoringFlow, ...]:
    """Renumber flows 0.. and hand out ToS 1, 2, ... per (source, destination)."""
    used: Counter = Counter()
    out = []
    for i, f in enumerate(flows):
        used[(f.source, f.destination)] += 1
        tos = used[(f.source, f.destination)]
        if tos > MAX_TOS:
            raise ToSExhaustedError(
                f"more than {MAX_TOS} monitoring flows between {f.source} and {f.destination}; "
                "the 8-bit ToS tag cannot tell them apart")
        out.append(MonitoringFlow(i, f.source, f.destination, f.path, tos))
    return tuple(out)


def select_flows(topo: Topology, cfg: PlanConfig, *, allow_partial: bool = False) -> FlowPlan:
    """Greedy path & flow selection over loops anchored at monitor nodes.

    Candidates come from :func:`candidate_routes`. In ``"stop"`` mode a route
    is taken only while it crosses some targeted link still below
    ``min_cover``; ``"exhaustive"`` takes every route. Routes whose link set
    was already chosen, or that would push a link above ``max_overhead``, are
    never taken. Afterwards, if the measurement matrix is rank deficient,
    leftover candidates that raise its rank are appended.

    Raises :class:`CoverageError` when a targeted link ends with fewer than
    ``min_cover`` flows, unless ``allow_partial`` is set.
    """
    mats = to_matrices(topo)
    ncols = len(mats.link_index)
    x = cfg.min_cover
    cover: Counter = Counter()
    load: Counter = Counter()
    chosen: list[MonitoringFlow] = []
    seen: set[frozenset] = set()
    leftovers: list[MonitoringFlow] = []
    basis = RowBasis(ncols)

    def row(route):
        r = np.zeros(ncols)
        for l in route.path:
            if mats.is_targeted(*l):
                r[mats.column(l)] = 1.0
        return r

    def admissible(route):
        return all((load[l] + 1) * cfg.probe_rate <= cfg.max_overhead * topo.link(*l).capacity
                   for l in route.path)

    def take(route, r):
        chosen.append(route)
        seen.add(route.link_set)
        basis.add(r)
        for l in route.path:
            load[l] += 1
            if mats.is_targeted(*l):
                cover[l] += 1

    for route in candidate_routes(topo, cfg, mats):
        if route.link_set in seen:
            continue
        wanted = cfg.mode == "exhaustive" or any(
            cover[l] < x for l in route.path if mats.is_targeted(*l))
        if wanted and admissible(route):
            take(route, row(route))
        else:
            leftovers.append(route)

    if cfg.rank_safeguard and basis.rank < ncols:
        for route in leftovers:
            if basis.rank == ncols:
                break
            if route.link_set in seen or not admissible(route):
                continue
            r = row(route)
            if basis.increases_rank(r):
                take(route, r)

    plan = FlowPlan(assign_tos(chosen), mats.link_index)
    under = [l for l in mats.link_index if cover[l] < x]
    if under and not allow_partial:
        raise CoverageError(under, plan)
    return plan


# ---------------------------------------------------------------- checks

@dataclass(frozen=True)
class Violation:
    constraint: str
    equation: str
    subject: str
    observed: float | str
    required: float | str

    def to_dict(self) -> dict:
        return asdict(self)


def ordering_matrix(flow: MonitoringFlow, topo: Topology) -> np.ndarray:
    """Step numbers of a flow's links: the k-th traversed link holds k."""
    n = len(topo.nodes)
    p = np.zeros((n, n), dtype=int)
    for k, (a, b) in enumerate(flow.path, start=1):
        p[topo.index(a), topo.index(b)] = k
    return p


def routing_matrix(flow: MonitoringFlow, topo: Topology) -> np.ndarray:
    n = len(topo.nodes)
    r = np.zeros((n, n), dtype=int)
    for a, b in flow.path:
        r[topo.index(a), topo.index(b)] = 1
    return r


def similarity(f: MonitoringFlow, g: MonitoringFlow, n_nodes: int, topo: Topology | None = None) -> int:
    """Route-difference value T of two flows: sum of ((N+1)*i + j) over f's links minus g's.

    Indices i, j are 1-based node positions. Identical link sets give 0.
    """
    def pos(v):
        return topo.index(v) + 1 if topo is not None else int(v)

    def code(flow):
        return sum((n_nodes + 1) * pos(a) + pos(b) for a, b in set(flow.path))

    return code(f) - code(g)


def distinctness_check(plan: FlowPlan, topo: Topology | None = None) -> list[tuple[int, int, int]]:
    """Pairs of flows that repeat the same link set, as ``(f, f', T)``.

    T is only reported: two different link sets can share the same weighted
    sum, so pairs are flagged on set equality rather than on T == 0.
    """
    if topo is not None:
        n = len(topo.nodes)
    else:
        n = len({v for f in plan.flows for v in f.nodes})
    dup = []
    flows = plan.flows
    for a in range(len(flows)):
        for b in range(a + 1, len(flows)):
            if flows[a].link_set == flows[b].link_set:
                dup.append((flows[a].id, flows[b].id, similarity(flows[a], flows[b], n, topo)))
    return dup


def link_loads(plan: FlowPlan) -> Counter:
    load: Counter = Counter()
    for f in plan.flows:
        for l in f.path:
            load[l] += 1
    return load


def overhead_ratio(plan: FlowPlan, topo: Topology, cfg: PlanConfig) -> float:
    """Largest probe-traffic-to-capacity ratio over all links."""
    load = link_loads(plan)
    ratios = [c * cfg.probe_rate / topo.link(*l).capacity for l, c in load.items() if topo.has_link(*l)]
    return max(ratios, default=0.0)


def validate_plan(plan: FlowPlan, topo: Topology, cfg: PlanConfig) -> list[Violation]:
    """Check a plan against the selection model's constraints; empty means valid."""
    v: list[Violation] = []
    nodes = topo.nodes
    l_max = cfg.max_length

    for f in plan.flows:
        tag = f"flow {f.id}"
        for p in f.problems():
            v.append(Violation("path structure", "-", tag, p, "well-formed path"))
        if not f.path:
            continue
        for a, b in f.path:
            if not topo.has_link(a, b):
                v.append(Violation("use existing links", "2", f"{tag} link {a}->{b}", 1, "<= 0"))
        out_deg: Counter = Counter(a for a, _ in f.path)
        in_deg: Counter = Counter(b for _, b in f.path)
        for i in set(out_deg) | set(in_deg) | {f.source, f.destination}:
            net = out_deg[i] - in_deg[i]
            if f.is_loop:
                if net != 0:
                    v.append(Violation("loop flow conservation", "5", f"{tag} node {i}", net, 0))
            else:
                want = 1 if i == f.source else -1 if i == f.destination else 0
                if net != want:
                    v.append(Violation("flow conservation", "4", f"{tag} node {i}", net, want))
            if out_deg[i] > 1:
                v.append(Violation("no routing loop", "8", f"{tag} node {i}", out_deg[i], "<= 1"))
        if f.length > l_max:
            v.append(Violation("max flow length", "9", tag, f.length, f"<= {l_max}"))
        if all(a in topo._index and b in topo._index for a, b in f.path):
            r = routing_matrix(f, topo)
            p = ordering_matrix(f, topo)
            bad = np.argwhere(p > l_max * r)
            for i, j in bad:
                v.append(Violation("ordering bounded by routing", "10",
                                   f"{tag} link {nodes[i]}->{nodes[j]}", int(p[i, j]), f"<= {l_max * r[i, j]}"))
            for i, node in enumerate(nodes):
                if node in (f.source, f.destination):
                    continue
                lhs = int(p[i, :].sum())
                rhs = int((p[:, i] + r[:, i]).sum())
                if lhs != rhs:
                    v.append(Violation("ordering increments", "11", f"{tag} node {node}", lhs, rhs))
        if out_deg[f.source] != 1:
            v.append(Violation("leave source", "12", f"{tag} node {f.source}", out_deg[f.source], 1))
        if in_deg[f.destination] != 1:
            v.append(Violation("enter destination", "13", f"{tag} node {f.destination}", in_deg[f.destination], 1))

    load = link_loads(plan)
    for l in topo.targeted_links:
        if load[l] < cfg.min_cover:
            v.append(Violation("min flows per link", "3", f"link {l[0]}->{l[1]}", load[l], f">= {cfg.min_cover}"))
    for l, c in sorted(load.items()):
        if not topo.has_link(*l):
            continue
        cap = topo.link(*l).capacity
        if c * cfg.probe_rate > cfg.max_overhead * cap:
            v.append(Violation("monitoring overhead", "7", f"link {l[0]}->{l[1]}",
                               c * cfg.probe_rate / cap, f"<= {cfg.max_overhead}"))

    for a, b, t in distinctness_check(plan, topo):
        v.append(Violation("distinct routes", "14-17", f"flows {a},{b}", t, "different link sets"))
    if cfg.big_m is not None:
        n = len(nodes)
        for x in range(len(plan.flows)):
            for y in range(x + 1, len(plan.flows)):
                t = similarity(plan.flows[x], plan.flows[y], n, topo)
                if abs(t) > cfg.big_m:
                    v.append(Violation("big-M bound", "15-16", f"flows {plan.flows[x].id},{plan.flows[y].id}",
                                       abs(t), f"<= {cfg.big_m}"))
    return v


@dataclass(frozen=True)
class CoverageReport:
    counts: dict
    fraction: float
    min_cover: int

    @property
    def uncovered(self) -> list[Link]:
        return [l for l, c in self.counts.items() if c < self.min_cover]


def coverage_report(plan: FlowPlan, topo: Topology, min_cover: int = 1) -> CoverageReport:
    """Per-targeted-link flow counts and the fraction with at least ``min_cover`` flows."""
    load = link_loads(plan)
    counts = {l: load[l] for l in topo.targeted_links}
    if not counts:
        return CoverageReport(counts, 0.0, min_cover)
    ok = sum(1 for c in counts.values() if c >= min_cover)
    return CoverageReport(counts, ok / len(counts), min_cover)
