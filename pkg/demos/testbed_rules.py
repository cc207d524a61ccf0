"""Rule tables for a four-switch square: one monitor probing a loop through a helper address."""

from ldvkit import FlowPlan, MonitoringFlow, PortMap, compile_plan
from ldvkit.rulegen import Packet, trace_packet

PORTS = PortMap({"s1": {"host": 1, "s2": 2, "s3": 3}, "s2": {"s1": 1, "s4": 2},
                 "s3": {"s1": 1, "s4": 2}, "s4": {"s2": 1, "s3": 2}})
HELPER = "10.0.0.100"


def main():
    plan = FlowPlan((MonitoringFlow.from_nodes(0, ["s1", "s2", "s4", "s3", "s1"], 1),), ())
    tables = compile_plan(plan, PORTS, {"s1": "10.0.0.1"}, HELPER)
    for sw, entries in tables.items():
        for e in entries:
            acts = ", ".join(str(a.to_dict()) for a in e.actions)
            print(f"{sw}: in_port={e.in_port} {e.ip_src}->{e.ip_dst} tos={e.ip_tos}  [{acts}]")
    visited, at, pkt = trace_packet(tables, PORTS, "s1", Packet("10.0.0.1", HELPER, 1))
    print("echo request path:", " -> ".join(visited), f"| delivered at {at} as {pkt}")


if __name__ == "__main__":
    main()
