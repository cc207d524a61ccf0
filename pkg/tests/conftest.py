import itertools

import numpy as np
import pytest

from ldvkit.topology import DirectedLink, Topology, node_key


def undirected(nodes, edges, monitors=(), capacity=1e9, delays=None):
    links = []
    for a, b in edges:
        for s, d in ((a, b), (b, a)):
            delay = None if delays is None else delays[(s, d)]
            links.append(DirectedLink(str(s), str(d), capacity, delay))
    return Topology(tuple(map(str, nodes)), tuple(links), tuple(map(str, monitors)))


@pytest.fixture
def square():
    """s1-s2, s1-s3, s2-s4, s3-s4: the two-path testbed."""
    return undirected(["s1", "s2", "s3", "s4"], [("s1", "s2"), ("s1", "s3"), ("s2", "s4"), ("s3", "s4")],
                      monitors=["s1"])


@pytest.fixture
def five_node():
    return undirected(range(1, 6), [(1, 2), (1, 3), (2, 4), (3, 5), (4, 5)], monitors=[1])


def random_digraph(rng, n, p=0.5, capacity=1e9):
    nodes = [str(i) for i in range(1, n + 1)]
    links = [DirectedLink(a, b, capacity) for a in nodes for b in nodes if a != b and rng.random() < p]
    k = int(rng.integers(1, n + 1))
    monitors = sorted(rng.choice(nodes, size=k, replace=False).tolist(), key=node_key)
    return Topology(tuple(nodes), tuple(links), tuple(monitors))


def digraph_corpus(count=60, seed=2024):
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    while len(out) < count:
        n = int(rng.integers(2, 6))
        out.append(random_digraph(rng, n, p=float(rng.uniform(0.35, 0.9))))
    return out


def brute_force_loops(topo, start, length, targeted=None):
    """Every loop start -> ... -> start of exactly ``length`` hops, by permutation enumeration."""
    targeted = set(topo.targeted_links if targeted is None else targeted)
    others = [n for n in topo.nodes if n != start]
    out = []
    for mid in itertools.permutations(others, length - 1):
        seq = (start, *mid, start)
        hops = list(zip(seq, seq[1:]))
        if all(topo.has_link(a, b) for a, b in hops) and any(h in targeted for h in hops):
            out.append(seq)
    # lexicographic in node order, which is what sorted-neighbour DFS produces
    return sorted(out, key=lambda s: [topo.index(v) for v in s])
