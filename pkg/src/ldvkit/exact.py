"""Exact minimum-overhead flow selection for small instances (branch and bound).

Every admissible loop is enumerated up front; the search then picks at most
``flow_budget`` routes with distinct link sets so that each targeted link is
crossed ``min_cover`` times, minimising the largest probe-load/capacity ratio.
"""

from __future__ import annotations

from collections import Counter

from .flowplan import FlowPlan, PlanConfig, PlanError, assign_tos, candidate_routes
from .topology import Topology, to_matrices

MAX_NODES = 6
MAX_CANDIDATES = 100_000


class InfeasibleError(PlanError):
    pass


class InstanceTooLargeError(PlanError):
    pass


def exact_select(topo: Topology, cfg: PlanConfig, flow_budget: int) -> FlowPlan:
    if len(topo.nodes) > MAX_NODES:
        raise InstanceTooLargeError(f"{len(topo.nodes)} nodes; exact search is limited to {MAX_NODES}")
    mats = to_matrices(topo)
    targeted = list(mats.link_index)
    x = cfg.min_cover
    q = cfg.probe_rate

    routes = []
    seen = set()
    for r in candidate_routes(topo, cfg, mats):
        if r.link_set not in seen:
            seen.add(r.link_set)
            routes.append(r)
            if len(routes) > MAX_CANDIDATES:
                raise InstanceTooLargeError(f"more than {MAX_CANDIDATES} candidate routes")

    cap = {l.pair: l.capacity for l in topo.links}
    limit = {p: cfg.max_overhead * c for p, c in cap.items()}
    by_link = {l: [i for i, r in enumerate(routes) if l in r.link_set] for l in targeted}

    best = {"mu": float("inf"), "sel": None}
    load: Counter = Counter()
    chosen: list[int] = []
    banned: set[int] = set()

    def mu_now():
        return max((c * q / cap[l] for l, c in load.items()), default=0.0)

    def search():
        mu = mu_now()
        if mu >= best["mu"]:
            return
        deficit = {l: x - load[l] for l in targeted if load[l] < x}
        if not deficit:
            best["mu"], best["sel"] = mu, sorted(chosen)
            return
        left = flow_budget - len(chosen)
        if max(deficit.values()) > left:
            return
        # branch on the deficient link with the fewest usable routes
        options = {}
        for l in deficit:
            opts = [i for i in by_link[l] if i not in banned and i not in chosen]
            if len(opts) < deficit[l]:
                return
            options[l] = opts
        link = min(options, key=lambda l: (len(options[l]), targeted.index(l)))
        tried = []
        for i in options[link]:
            r = routes[i]
            if all((load[p] + 1) * q <= limit[p] for p in r.path):
                chosen.append(i)
                for p in r.path:
                    load[p] += 1
                search()
                for p in r.path:
                    load[p] -= 1
                chosen.pop()
            # later siblings must not reuse i, or the same set is explored twice
            banned.add(i)
            tried.append(i)
        banned.difference_update(tried)

    search()
    if best["sel"] is None:
        raise InfeasibleError(
            f"no set of at most {flow_budget} flows covers every targeted link {x} time(s) "
            f"within overhead {cfg.max_overhead}")
    return FlowPlan(assign_tos(routes[i] for i in best["sel"]), mats.link_index)
