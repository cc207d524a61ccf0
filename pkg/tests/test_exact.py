import itertools
from collections import Counter

import pytest

from ldvkit.exact import InfeasibleError, InstanceTooLargeError, exact_select
from ldvkit.flowplan import PlanConfig, candidate_routes, overhead_ratio, select_flows, validate_plan
from ldvkit.topology import DirectedLink, Topology

from conftest import digraph_corpus, undirected


def brute_force_mu(topo, cfg, budget):
    """Smallest overhead over every subset of distinct routes of size <= budget meeting cover x."""
    routes, seen = [], set()
    for r in candidate_routes(topo, cfg):
        if r.link_set not in seen:
            seen.add(r.link_set)
            routes.append(r)
    cap = {l.pair: l.capacity for l in topo.links}
    best = None
    for k in range(budget + 1):
        for combo in itertools.combinations(routes, k):
            load = Counter(l for r in combo for l in r.path)
            if any(load[l] < cfg.min_cover for l in topo.targeted_links):
                continue
            mu = max((c * cfg.probe_rate / cap[l] for l, c in load.items()), default=0.0)
            if mu > cfg.max_overhead:
                continue
            best = mu if best is None else min(best, mu)
    return best


def test_two_node_unique_plan():
    t = Topology(("1", "2"), (DirectedLink("1", "2", 1e6), DirectedLink("2", "1", 5e5)), ("1",))
    cfg = PlanConfig(max_length=2, min_cover=1, probe_rate=1e3)
    plan = exact_select(t, cfg, 1)
    assert [f.nodes for f in plan.flows] == [["1", "2", "1"]]
    assert overhead_ratio(plan, t, cfg) == pytest.approx(1e3 / 5e5)


def directed_cycle():
    nodes = ("1", "2", "3", "4")
    return Topology(nodes, tuple(DirectedLink(a, b, 1e9) for a, b in zip(nodes, nodes[1:] + nodes[:1])),
                    nodes)


def test_cycle_optimum_matches_heuristic_and_brute_force():
    t = directed_cycle()
    cfg = PlanConfig(max_length=4, min_cover=1)
    exact = overhead_ratio(exact_select(t, cfg, 2), t, cfg)
    heur = overhead_ratio(select_flows(t, cfg), t, cfg)
    assert exact == pytest.approx(brute_force_mu(t, cfg, 2))
    assert exact == pytest.approx(heur) == pytest.approx(cfg.probe_rate / 1e9)


def test_ring_exact_beats_greedy():
    # greedy takes both 2-hop bounces first, then needs both tours
    t = undirected([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4), (4, 1)], monitors=[1])
    cfg = PlanConfig(max_length=4, min_cover=1)
    exact = overhead_ratio(exact_select(t, cfg, 4), t, cfg)
    heur = overhead_ratio(select_flows(t, cfg), t, cfg)
    assert exact == pytest.approx(brute_force_mu(t, cfg, 4)) == pytest.approx(cfg.probe_rate / 1e9)
    assert heur == pytest.approx(2 * cfg.probe_rate / 1e9)


@pytest.mark.parametrize("topo", [directed_cycle(),
                                  undirected([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4), (4, 1)], monitors=[1])])
def test_cycle_cover_three_infeasible(topo):
    with pytest.raises(InfeasibleError):
        exact_select(topo, PlanConfig(max_length=4, min_cover=3), 2)


def test_size_guard():
    t = undirected(range(7), [(i, i + 1) for i in range(6)], monitors=[0])
    with pytest.raises(InstanceTooLargeError):
        exact_select(t, PlanConfig(max_length=3, min_cover=1), 3)


def test_overhead_limit_respected():
    t = undirected([1, 2, 3], [(1, 2), (2, 3), (1, 3)], monitors=[1, 2, 3], capacity=1e5)
    cfg = PlanConfig(max_length=3, min_cover=2, probe_rate=1e4, max_overhead=0.1)
    with pytest.raises(InfeasibleError):
        exact_select(t, cfg, 6)


@pytest.mark.parametrize("idx", range(0, 60, 3))
def test_matches_brute_force_on_corpus(idx):
    topo = digraph_corpus()[idx]
    if not topo.monitor_nodes:
        return
    cfg = PlanConfig(max_length=len(topo.nodes), min_cover=1)
    for budget in (1, 2, 3):
        want = brute_force_mu(topo, cfg, budget)
        if want is None:
            with pytest.raises(InfeasibleError):
                exact_select(topo, cfg, budget)
            continue
        plan = exact_select(topo, cfg, budget)
        assert len(plan.flows) <= budget
        assert overhead_ratio(plan, topo, cfg) == pytest.approx(want)
        assert validate_plan(plan, topo, cfg) == []
