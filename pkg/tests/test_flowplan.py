import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ldvkit.flowplan import (
    CoverageError, FlowPlan, MonitoringFlow, PlanConfig, PlanError, ToSExhaustedError, assign_tos,
    coverage_report, distinctness_check, find_routes, ordering_matrix, overhead_ratio, routing_matrix,
    select_flows, similarity, validate_plan,
)
from ldvkit.topology import DirectedLink, Topology, to_matrices, zoo_topology

from conftest import brute_force_loops, random_digraph, undirected


def directed_cycle(n):
    nodes = [str(i) for i in range(1, n + 1)]
    links = [DirectedLink(nodes[i], nodes[(i + 1) % n], 1e9) for i in range(n)]
    return Topology(tuple(nodes), tuple(links), ("1",))


def by_eq(violations, eq):
    return [v for v in violations if v.equation == eq]


# ---------------------------------------------------------------- find_routes

def test_directed_cycle_single_route():
    t = directed_cycle(4)
    routes = find_routes("1", 4, to_matrices(t))
    assert [r.nodes for r in routes] == [["1", "2", "3", "4", "1"]]
    assert find_routes("1", 3, to_matrices(t)) == []


def test_zero_length_is_empty():
    assert find_routes("1", 0, to_matrices(directed_cycle(4))) == []


def test_square_contains_tour(square):
    routes = find_routes("s1", 4, to_matrices(square))
    assert ["s1", "s2", "s4", "s3", "s1"] in [r.nodes for r in routes]
    assert ["s1", "s3", "s4", "s2", "s1"] in [r.nodes for r in routes]
    assert len(routes) == 2


def test_targeted_filter(square):
    mats = to_matrices(square)
    only = find_routes("s1", 2, mats, targeted=[("s3", "s1")])
    assert [r.nodes for r in only] == [["s1", "s3", "s1"]]


@st.composite
def small_digraphs(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, 5))
    p = draw(st.floats(0.2, 1.0))
    return random_digraph(np.random.Generator(np.random.PCG64(seed)), n, p)


@settings(max_examples=150, deadline=None)
@given(small_digraphs(), st.integers(1, 6))
def test_find_routes_matches_brute_force(topo, length):
    mats = to_matrices(topo)
    for start in topo.nodes:
        got = [tuple(r.nodes) for r in find_routes(start, length, mats)]
        assert got == brute_force_loops(topo, start, length)


@settings(max_examples=150, deadline=None)
@given(small_digraphs(), st.integers(1, 6))
def test_routes_are_well_formed(topo, length):
    mats = to_matrices(topo)
    for start in topo.nodes:
        for r in find_routes(start, length, mats):
            assert r.problems(length) == []
            assert r.length == length and r.is_loop
            assert all(topo.has_link(*l) for l in r.path)


# ---------------------------------------------------------------- select_flows

def test_two_node_single_flow():
    t = undirected([1, 2], [(1, 2)], monitors=[1])
    plan = select_flows(t, PlanConfig(max_length=2, min_cover=1))
    assert [f.nodes for f in plan.flows] == [["1", "2", "1"]]
    assert plan.flows[0].tos == 1
    assert plan.covered_links == {("1", "2"), ("2", "1")}
    assert coverage_report(plan, t).fraction == 1.0


def test_coverage_error_carries_partial_plan():
    t = undirected([1, 2], [(1, 2)], monitors=[1])
    with pytest.raises(CoverageError) as err:
        select_flows(t, PlanConfig(max_length=2, min_cover=2))
    assert set(err.value.uncovered) == {("1", "2"), ("2", "1")}
    assert len(err.value.plan.flows) == 1
    partial = select_flows(t, PlanConfig(max_length=2, min_cover=2), allow_partial=True)
    assert coverage_report(partial, t, 2).uncovered == [("1", "2"), ("2", "1")]


def test_tos_per_pair_from_one(square):
    plan = select_flows(square.with_monitors(["s1", "s4"]), PlanConfig(max_length=4, min_cover=2))
    seen = {}
    for f in plan.flows:
        seen.setdefault((f.source, f.destination), []).append(f.tos)
    for tags in seen.values():
        assert tags == list(range(1, len(tags) + 1))
    assert [f.id for f in plan.flows] == list(range(len(plan.flows)))


def test_tos_exhaustion():
    f = MonitoringFlow.from_nodes(0, ["1", "2", "1"])
    assign_tos([f] * 255)
    with pytest.raises(ToSExhaustedError):
        assign_tos([f] * 256)


def test_abilene_single_monitor_threshold():
    t = zoo_topology("Abilene", monitor_nodes=["0"])
    low = select_flows(t, PlanConfig(max_length=9, min_cover=1), allow_partial=True)
    assert coverage_report(low, t).fraction < 1.0
    with pytest.raises(CoverageError) as err:
        select_flows(t, PlanConfig(max_length=10, min_cover=1))
    assert err.value.uncovered
    plan = select_flows(t, PlanConfig(max_length=11, min_cover=1))
    assert coverage_report(plan, t).fraction == 1.0


def test_abilene_five_monitors_short_flows():
    t = zoo_topology("Abilene", monitor_nodes=["0", "1", "5", "6", "9"])
    plan = select_flows(t, PlanConfig(max_length=5, min_cover=1))
    assert coverage_report(plan, t).fraction == 1.0
    assert max(f.length for f in plan.flows) <= 5


def test_exhaustive_mode_takes_every_distinct_route(square):
    cfg = PlanConfig(max_length=4, min_cover=1, mode="exhaustive", rank_safeguard=False)
    plan = select_flows(square, cfg)
    # s1 loops: two 2-hop bounces and the tour in both directions
    assert len(plan.flows) == 4


def test_rank_safeguard_adds_rank():
    t = zoo_topology("Abilene", monitor_nodes=["0", "1", "5", "6", "9"])
    off = select_flows(t, PlanConfig(max_length=11, min_cover=1, rank_safeguard=False))
    on = select_flows(t, PlanConfig(max_length=11, min_cover=1))
    assert on.rank >= off.rank
    # every loop is a cycle, so the rank cannot pass |E| - |N| + 1
    assert on.rank <= len(t.links) - len(t.nodes) + 1


def test_overhead_limit_blocks_routes():
    t = undirected([1, 2, 3], [(1, 2), (2, 3), (1, 3)], monitors=[1, 2, 3], capacity=1e5)
    cfg = PlanConfig(max_length=3, min_cover=2, probe_rate=1e4, max_overhead=0.1)
    # capacity admits exactly one probe flow per link
    plan = select_flows(t, cfg, allow_partial=True)
    assert overhead_ratio(plan, t, cfg) <= 0.1
    with pytest.raises(CoverageError):
        select_flows(t, cfg)


@pytest.mark.parametrize("kwargs", [
    dict(max_length=0), dict(min_cover=0), dict(max_overhead=0), dict(max_overhead=1.5),
    dict(probe_rate=0), dict(mode="greedy"), dict(max_length=3, allowed_lengths=(4,)),
])
def test_plan_config_validation(kwargs):
    with pytest.raises(ValueError):
        PlanConfig(**kwargs)


# ---------------------------------------------------------------- FlowPlan

def test_plan_round_trip_and_matrix():
    t = zoo_topology("Abilene", monitor_nodes=["0", "5"])
    plan = select_flows(t, PlanConfig(max_length=8, min_cover=1))
    back = FlowPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert back.flows == plan.flows
    assert (back.measurement_matrix == plan.measurement_matrix).all()
    targeted = set(t.targeted_links)
    for f, row in zip(plan.flows, plan.measurement_matrix):
        assert row.sum() == sum(1 for l in f.path if l in targeted)


def test_tampered_measurement_rejected():
    t = undirected([1, 2], [(1, 2)], monitors=[1])
    d = select_flows(t, PlanConfig(max_length=2, min_cover=1)).to_dict()
    d["measurement"][0] = [0]
    with pytest.raises(PlanError):
        FlowPlan.from_dict(d)


# ---------------------------------------------------------------- validate_plan

def test_routing_and_ordering_matrices(five_node):
    f = MonitoringFlow.from_nodes(1, [1, 2, 4, 5])
    r = np.zeros((5, 5), int)
    p = np.zeros((5, 5), int)
    for k, (i, j) in enumerate([(1, 2), (2, 4), (4, 5)], start=1):
        r[i - 1, j - 1] = 1
        p[i - 1, j - 1] = k
    assert (routing_matrix(f, five_node) == r).all()
    assert (ordering_matrix(f, five_node) == p).all()


def test_open_path_satisfies_structure(five_node):
    plan = FlowPlan((MonitoringFlow.from_nodes(0, [1, 2, 4, 5], tos=1),), five_node.targeted_links)
    v = validate_plan(plan, five_node, PlanConfig(max_length=3, min_cover=1))
    assert {x.equation for x in v} == {"3"}


def test_nonexistent_link(five_node):
    plan = FlowPlan((MonitoringFlow.from_nodes(0, [1, 2, 3, 1], tos=1),), five_node.targeted_links)
    v = validate_plan(plan, five_node, PlanConfig(max_length=5, min_cover=1))
    bad = by_eq(v, "2")
    assert len(bad) == 1 and "2->3" in bad[0].subject


def test_under_covered_link_named():
    t = undirected([1, 2, 3], [(1, 2), (2, 3), (1, 3)], monitors=[1])
    t = t.with_targeted([("1", "2"), ("2", "1"), ("1", "3"), ("3", "1")])
    cfg = PlanConfig(max_length=3, min_cover=2)
    flows = [MonitoringFlow.from_nodes(0, [1, 2, 3, 1], 1), MonitoringFlow.from_nodes(1, [1, 3, 2, 1], 2),
             MonitoringFlow.from_nodes(2, [1, 2, 1], 3), MonitoringFlow.from_nodes(3, [1, 3, 1], 4)]
    plan = FlowPlan(tuple(flows), t.targeted_links)
    assert validate_plan(plan, t, cfg) == []
    # drop the bounce 1->3->1: links 1->3 and 3->1 keep one flow each
    short = FlowPlan(tuple(flows[:3]), t.targeted_links)
    v = validate_plan(short, t, cfg)
    assert sorted(x.subject for x in v) == ["link 1->3", "link 3->1"]
    assert all(x.equation == "3" and x.observed == 1 for x in v)


def test_overhead_violation_ratio():
    t = undirected([1, 2, 3], [(1, 2), (2, 3), (1, 3)], monitors=[1], capacity=1e6)
    cfg = PlanConfig(max_length=3, min_cover=1, probe_rate=1e5, max_overhead=0.1)
    flows = (MonitoringFlow.from_nodes(0, [1, 2, 1], 1), MonitoringFlow.from_nodes(1, [1, 2, 3, 1], 2),
             MonitoringFlow.from_nodes(2, [1, 3, 2, 1], 3))
    plan = FlowPlan(flows, t.targeted_links)
    v = by_eq(validate_plan(plan, t, cfg), "7")
    # 1->2 carries two flows, 2->1 carries two flows
    assert sorted(x.subject for x in v) == ["link 1->2", "link 2->1"]
    assert all(x.observed == pytest.approx(2 * 1e5 / 1e6) for x in v)
    assert overhead_ratio(plan, t, cfg) == pytest.approx(0.2)


def test_overhead_ratio_cases():
    t = undirected([1, 2, 3], [(1, 2), (2, 3), (1, 3)], monitors=[1, 2, 3], capacity=1e6)
    cfg = PlanConfig(max_length=3, min_cover=2, probe_rate=1e3)
    assert overhead_ratio(FlowPlan((), t.targeted_links), t, cfg) == 0.0
    three = tuple(MonitoringFlow.from_nodes(i, n, i + 1) for i, n in
                  enumerate([[1, 2, 1], [1, 2, 3, 1], [3, 1, 2, 3]]))
    assert overhead_ratio(FlowPlan(three, t.targeted_links), t, cfg) == pytest.approx(3e3 / 1e6)
    # each triangle link lies on one bounce and one tour: exactly two flows each
    tight = tuple(MonitoringFlow.from_nodes(i, n, 1) for i, n in
                  enumerate([[1, 2, 1], [2, 3, 2], [1, 3, 1], [1, 2, 3, 1], [1, 3, 2, 1]]))
    plan = FlowPlan(tight, t.targeted_links)
    assert validate_plan(plan, t, cfg) == []
    assert overhead_ratio(plan, t, cfg) == pytest.approx(2e3 / 1e6)


def test_big_m_bound(square):
    f = MonitoringFlow.from_nodes(0, ["s1", "s2", "s4", "s3", "s1"], 1)
    g = MonitoringFlow.from_nodes(1, ["s1", "s2", "s1"], 2)
    plan = FlowPlan((f, g), square.targeted_links)
    v = by_eq(validate_plan(plan, square, PlanConfig(max_length=4, min_cover=1, big_m=10)), "15-16")
    assert len(v) == 1 and v[0].observed == 42


# ---------------------------------------------------------------- distinctness

def test_identical_paths_flagged(square):
    f = MonitoringFlow.from_nodes(0, ["s1", "s2", "s1"], 1)
    g = MonitoringFlow.from_nodes(1, ["s1", "s2", "s1"], 2)
    dup = distinctness_check(FlowPlan((f, g), square.targeted_links), square)
    assert dup == [(0, 1, 0)]
    v = by_eq(validate_plan(FlowPlan((f, g), square.targeted_links), square,
                            PlanConfig(max_length=2, min_cover=1)), "14-17")
    assert len(v) == 1


def test_two_disjoint_paths_not_flagged(square):
    a = MonitoringFlow.from_nodes(0, ["s1", "s2", "s4"], 1)
    b = MonitoringFlow.from_nodes(1, ["s1", "s3", "s4"], 2)
    assert distinctness_check(FlowPlan((a, b), square.targeted_links), square) == []


def test_partial_overlap_similarity(square):
    # N = 4, positions s1..s4 -> 1..4, link code (N+1)*i + j
    f = MonitoringFlow.from_nodes(0, ["s1", "s2", "s4", "s3", "s1"], 1)  # 7 + 14 + 23 + 16 = 60
    g = MonitoringFlow.from_nodes(1, ["s1", "s2", "s1"], 2)              # 7 + 11 = 18
    assert similarity(f, g, 4, square) == 42
    assert distinctness_check(FlowPlan((f, g), square.targeted_links), square) == []


# ---------------------------------------------------------------- properties

def roomy(topo):
    return Topology(topo.nodes, tuple(DirectedLink(l.src, l.dst, 1e12) for l in topo.links),
                    topo.monitor_nodes)


@settings(max_examples=120, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_digraphs(), st.integers(1, 5), st.integers(1, 3), st.sampled_from(["stop", "exhaustive"]))
def test_select_flows_valid_or_coverage_error(topo, l, x, mode):
    if not topo.monitor_nodes:
        return
    cfg = PlanConfig(max_length=l, min_cover=x, mode=mode)
    try:
        plan = select_flows(topo, cfg)
    except CoverageError:
        return
    assert validate_plan(plan, topo, cfg) == []


@settings(max_examples=100, deadline=None)
@given(small_digraphs(), st.integers(1, 3))
def test_coverage_monotone_in_length(topo, x):
    topo = roomy(topo)
    prev = -1.0
    for l in range(1, len(topo.nodes) + 1):
        plan = select_flows(topo, PlanConfig(max_length=l, min_cover=x), allow_partial=True)
        frac = coverage_report(plan, topo, x).fraction
        assert frac >= prev
        prev = frac


@settings(max_examples=100, deadline=None)
@given(small_digraphs(), st.integers(1, 5), st.integers(1, 3), st.randoms(use_true_random=False))
def test_coverage_monotone_in_monitors(topo, l, x, rnd):
    topo = roomy(topo)
    extra = [n for n in topo.nodes if n not in topo.monitor_nodes]
    bigger = topo.with_monitors(list(topo.monitor_nodes) + rnd.sample(extra, rnd.randint(0, len(extra))))
    cfg = PlanConfig(max_length=l, min_cover=x)
    small_cov = coverage_report(select_flows(topo, cfg, allow_partial=True), topo, x).fraction
    big_cov = coverage_report(select_flows(bigger, cfg, allow_partial=True), bigger, x).fraction
    assert small_cov <= big_cov
