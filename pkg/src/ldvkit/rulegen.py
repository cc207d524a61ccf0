"""Compile a flow plan into per-switch match/action tables (ToS-tagged forwarding).

Flows with distinct endpoints get a forward entry for the echo request and a
reverse entry for the echo reply at every switch on the path. Loop flows are
addressed to a fictitious helper host: the packet leaves the monitor's switch,
tours the loop, and on its second visit to the first switch is rewritten into
an echo reply (addresses swapped, ICMP type 8 -> 0) and handed back to the
monitor host. ``in_port`` separates the two visits.
"""

from __future__ import annotations

import ipaddress
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .flowplan import FlowPlan, MonitoringFlow
from .topology import Topology, node_key

HOST = "host"
SET_FIELDS = ("ipv4_src", "ipv4_dst", "icmpv4_type")
ICMP_ECHO_REQUEST = 8
ICMP_ECHO_REPLY = 0


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Output:
    port: int

    def to_dict(self):
        return {"output": self.port}


@dataclass(frozen=True)
class SetField:
    field: str
    value: object

    def __post_init__(self):
        if self.field not in SET_FIELDS:
            raise RuleError(f"set_field may only target {', '.join(SET_FIELDS)}, not {self.field!r}")

    def to_dict(self):
        return {"set_field": {self.field: self.value}}


@dataclass(frozen=True)
class FlowEntry:
    switch: str
    ip_src: str
    ip_dst: str
    ip_tos: int
    actions: tuple
    in_port: int | None = None
    icmp_type: int | None = None

    def __post_init__(self):
        outs = [i for i, a in enumerate(self.actions) if isinstance(a, Output)]
        if len(outs) > 1 or (outs and outs[0] != len(self.actions) - 1):
            raise RuleError("an entry holds at most one output action and it must come last")

    @property
    def match(self) -> tuple:
        return (self.in_port, self.ip_src, self.ip_dst, self.ip_tos, self.icmp_type)

    @property
    def output(self) -> int | None:
        return self.actions[-1].port if self.actions and isinstance(self.actions[-1], Output) else None

    def sort_key(self):
        return (node_key(self.switch), int(ipaddress.ip_address(self.ip_src)),
                int(ipaddress.ip_address(self.ip_dst)), self.ip_tos,
                -1 if self.in_port is None else self.in_port)

    def to_dict(self) -> dict:
        return {"switch": self.switch, "in_port": self.in_port, "ip_src": self.ip_src,
                "ip_dst": self.ip_dst, "ip_tos": self.ip_tos, "icmp_type": self.icmp_type,
                "actions": [a.to_dict() for a in self.actions]}

    @classmethod
    def from_dict(cls, d: dict) -> "FlowEntry":
        acts = []
        for a in d["actions"]:
            if "output" in a:
                acts.append(Output(int(a["output"])))
            else:
                (k, v), = a["set_field"].items()
                acts.append(SetField(k, v))
        return cls(str(d["switch"]), d["ip_src"], d["ip_dst"], int(d["ip_tos"]), tuple(acts),
                   d.get("in_port"), d.get("icmp_type"))


class PortMap:
    """Per-switch port numbering: neighbour id (or ``"host"``) -> port."""

    def __init__(self, ports: Mapping[str, Mapping[str, int]]):
        self.ports = {str(s): {str(n): int(p) for n, p in m.items()} for s, m in ports.items()}
        for s, m in self.ports.items():
            if len(set(m.values())) != len(m):
                raise RuleError(f"switch {s} reuses a port number: {m}")
        self._peer = {s: {p: n for n, p in m.items()} for s, m in self.ports.items()}

    def port(self, switch, neighbor) -> int:
        try:
            return self.ports[str(switch)][str(neighbor)]
        except KeyError:
            raise RuleError(f"no port on switch {switch} towards {neighbor}") from None

    def host_port(self, switch) -> int:
        return self.port(switch, HOST)

    def peer(self, switch, port) -> str:
        try:
            return self._peer[str(switch)][int(port)]
        except KeyError:
            raise RuleError(f"switch {switch} has nothing on port {port}") from None

    def to_dict(self) -> dict:
        return {s: dict(m) for s, m in self.ports.items()}

    @classmethod
    def load(cls, path) -> "PortMap":
        return cls(json.loads(Path(path).read_text()))


def auto_port_map(topo: Topology) -> PortMap:
    """Port 1 faces the local host, neighbours follow in ascending order from 2.

    A neighbour reachable over a link in either direction gets a port, so
    one-way links still have an ingress port to match on.
    """
    adjacent = defaultdict(set)
    for l in topo.links:
        adjacent[l.src].add(l.dst)
        adjacent[l.dst].add(l.src)
    ports = {}
    for s in topo.nodes:
        m = {HOST: 1}
        for k, n in enumerate(sorted(adjacent[s], key=node_key), start=2):
            m[n] = k
        ports[s] = m
    return PortMap(ports)


def auto_addressing(topo: Topology, network: str = "10.0.0.0/16") -> dict[str, str]:
    net = ipaddress.ip_network(network)
    return {n: str(net.network_address + topo.index(n) + 1) for n in topo.nodes}


def default_helper_ip(addressing: Mapping[str, str], prefix: int = 24) -> str:
    """Highest host address of the subnet holding the monitor hosts."""
    first = next(iter(addressing.values()))
    net = ipaddress.ip_network(f"{first}/{prefix}", strict=False)
    return str(net.broadcast_address - 1)


def _flow_entries(f: MonitoringFlow, ports: PortMap, addressing, helper_ip) -> list[FlowEntry]:
    nodes = f.nodes
    try:
        src_ip = addressing[f.source]
    except KeyError:
        raise RuleError(f"no address for monitor node {f.source}") from None
    out = []
    if f.is_loop:
        last = len(nodes) - 1
        for i, sw in enumerate(nodes[:-1]):
            in_port = ports.host_port(sw) if i == 0 else ports.port(sw, nodes[i - 1])
            out.append(FlowEntry(sw, src_ip, helper_ip, f.tos, (Output(ports.port(sw, nodes[i + 1])),), in_port))
        sw = nodes[last]
        out.append(FlowEntry(sw, src_ip, helper_ip, f.tos, (
            SetField("ipv4_src", helper_ip),
            SetField("ipv4_dst", src_ip),
            SetField("icmpv4_type", ICMP_ECHO_REPLY),
            Output(ports.host_port(sw)),
        ), ports.port(sw, nodes[last - 1])))
        return out

    try:
        dst_ip = addressing[f.destination]
    except KeyError:
        raise RuleError(f"no address for monitor node {f.destination}") from None
    k = len(nodes) - 1
    for i, sw in enumerate(nodes):
        fwd = ports.port(sw, nodes[i + 1]) if i < k else ports.host_port(sw)
        out.append(FlowEntry(sw, src_ip, dst_ip, f.tos, (Output(fwd),)))
    for i, sw in enumerate(nodes):
        back = ports.port(sw, nodes[i - 1]) if i > 0 else ports.host_port(sw)
        out.append(FlowEntry(sw, dst_ip, src_ip, f.tos, (Output(back),)))
    return out


def compile_plan(plan: FlowPlan, ports: PortMap, addressing: Mapping[str, str],
                 helper_ip: str | None = None) -> dict[str, list[FlowEntry]]:
    """Rule tables keyed by switch, entries sorted by (ip_src, ip_dst, tos, in_port)."""
    addressing = {str(k): v for k, v in addressing.items()}
    if helper_ip is None and addressing:
        helper_ip = default_helper_ip(addressing)
    tables: dict[str, list[FlowEntry]] = defaultdict(list)
    for f in plan.flows:
        for e in _flow_entries(f, ports, addressing, helper_ip):
            tables[e.switch].append(e)
    out = {}
    for sw in sorted(tables, key=node_key):
        entries = sorted(tables[sw], key=FlowEntry.sort_key)
        seen = {}
        for e in entries:
            if e.match in seen:
                raise RuleError(f"switch {sw}: two entries share match {e.match}")
            seen[e.match] = e
        out[sw] = entries
    return out


def tables_to_json(tables: Mapping[str, list[FlowEntry]]) -> str:
    return json.dumps([e.to_dict() for sw in tables for e in tables[sw]], indent=2)


def tables_from_json(text: str) -> dict[str, list[FlowEntry]]:
    tables: dict[str, list[FlowEntry]] = defaultdict(list)
    for rec in json.loads(text):
        e = FlowEntry.from_dict(rec)
        tables[e.switch].append(e)
    return dict(tables)


@dataclass(frozen=True)
class RuleStats:
    counts: dict
    average: float
    fraction: float


def rules_per_switch(tables: Mapping[str, Iterable[FlowEntry]], switch_capacity: int,
                     switches: Iterable[str] | None = None) -> RuleStats:
    """Rule counts per switch, their mean, and mean / ``switch_capacity``.

    ``switches`` lists every switch to average over (switches without rules
    count as 0); by default only switches that hold rules are included.
    """
    if switch_capacity <= 0:
        raise ValueError("switch_capacity must be positive")
    counts = {str(s): 0 for s in (switches or [])}
    for sw, entries in tables.items():
        counts[str(sw)] = counts.get(str(sw), 0) + len(list(entries))
    if not counts:
        return RuleStats({}, 0.0, 0.0)
    avg = sum(counts.values()) / len(counts)
    return RuleStats(counts, avg, avg / switch_capacity)


# ---------------------------------------------------------------- table interpreter

@dataclass(frozen=True)
class Packet:
    ip_src: str
    ip_dst: str
    ip_tos: int
    icmp_type: int = ICMP_ECHO_REQUEST


def lookup(entries: Iterable[FlowEntry], pkt: Packet, in_port: int) -> FlowEntry | None:
    hits = [e for e in entries
            if (e.in_port is None or e.in_port == in_port)
            and e.ip_src == pkt.ip_src and e.ip_dst == pkt.ip_dst and e.ip_tos == pkt.ip_tos
            and (e.icmp_type is None or e.icmp_type == pkt.icmp_type)]
    # an entry pinned to in_port is more specific than a wildcard one
    hits.sort(key=lambda e: e.in_port is None)
    return hits[0] if hits else None


def trace_packet(tables: Mapping[str, list[FlowEntry]], ports: PortMap, switch: str, pkt: Packet,
                 max_hops: int = 256) -> tuple[list[str], str, Packet]:
    """Forward ``pkt`` injected by the host on ``switch`` until some host receives it.

    Returns the switches visited in order, the switch whose host got the
    packet, and the packet as delivered.
    """
    visited = []
    in_port = ports.host_port(switch)
    for _ in range(max_hops):
        visited.append(switch)
        e = lookup(tables.get(switch, []), pkt, in_port)
        if e is None:
            raise RuleError(f"packet {pkt} dropped at switch {switch} (in_port {in_port})")
        for a in e.actions:
            if isinstance(a, SetField):
                if a.field == "ipv4_src":
                    pkt = Packet(a.value, pkt.ip_dst, pkt.ip_tos, pkt.icmp_type)
                elif a.field == "ipv4_dst":
                    pkt = Packet(pkt.ip_src, a.value, pkt.ip_tos, pkt.icmp_type)
                else:
                    pkt = Packet(pkt.ip_src, pkt.ip_dst, pkt.ip_tos, int(a.value))
        peer = ports.peer(switch, e.output)
        if peer == HOST:
            return visited, switch, pkt
        in_port = ports.port(peer, switch)
        switch = peer
    raise RuleError("forwarding loop: hop limit exceeded")
