import json
import random
from itertools import combinations

import networkx as nx
import pytest

from airdrop_privacy.clustering import Partition, cluster_stream
from airdrop_privacy.crosschain import (CoClusterGraph, Component, StarKind, UnknownChainError, Vertex,
                                        build_cocluster_graph, classify_star, connected_components,
                                        impact_report, impacted_subgraph, write_dot, write_edge_csv,
                                        write_report_json)

from chainkit import colour_chains, make_chain


@pytest.fixture
def colours():
    return {c: cluster_stream(s.txs) for c, s in colour_chains().items()}


def V(chain, rep):
    return Vertex(chain, rep)


def test_colour_graph_shape(colours):
    g = build_cocluster_graph(colours)
    assert g.n_vertices == 6
    assert g.n_edges == 4
    assert g.degree(V("A", "blue")) == 2
    assert g.isolated == {"A": 1, "B": 0, "C": 0}  # A's {pink} shares nothing
    assert {(u, v): set(s) for u, v, s in g.edges()} == {
        (V("A", "blue"), V("B", "blue")): {"blue"},
        (V("A", "blue"), V("B", "green")): {"green"},
        (V("B", "blue"), V("C", "red")): {"red"},
        (V("B", "green"), V("C", "orange")): {"orange"},
    }


def test_colour_impacted_subgraph_a_to_b(colours):
    g = build_cocluster_graph(colours)
    comps = connected_components(impacted_subgraph(g, "A", "B"))
    assert len(comps) == 1
    assert comps[0].vertices == (V("A", "blue"), V("B", "blue"), V("B", "green"))
    assert classify_star(comps[0], "A") is StarKind.STAR


def test_colour_full_graph_single_component(colours):
    comps = connected_components(build_cocluster_graph(colours))
    assert len(comps) == 1
    assert {v.chain for v in comps[0].vertices} == {"A", "B", "C"}


def test_colour_report(colours):
    rep = impact_report(colours, "A", ["B"])
    tb = rep.per_target["B"]
    assert (tb.n_components, tb.n_impacted_clusters, tb.n_target_clusters) == (1, 2, 2)
    assert tb.fraction == 1.0
    assert tb.n_star == 1
    assert tb.components[0].witnesses == {"blue": ["A-1"]}


def test_colour_multihop_is_not_a_star(colours):
    rep = impact_report(colours, "A", ["B", "C"], multihop=True)
    mh = rep.multihop
    assert mh.n_components == 1
    assert mh.components[0].kind is StarKind.NON_STAR
    assert mh.impacted == {"B": 2, "C": 2}
    # C alone is untouched directly: A shares nothing with C
    assert rep.per_target["C"].n_components == 0


def test_reverse_direction_needs_no_code_change(colours):
    rep = impact_report(colours, "B", ["A"])
    assert rep.per_target["A"].n_components == 0
    rep = impact_report(colours, "C", ["B"])
    assert rep.per_target["B"].n_components == 0


def test_disjoint_chains_give_empty_graph():
    parts = {"X": cluster_stream(make_chain("X", [([], ["a", "b"])]).txs),
             "Y": cluster_stream(make_chain("Y", [([], ["c"])]).txs)}
    g = build_cocluster_graph(parts)
    assert g.n_edges == 0 and g.n_materialized == 0 and g.n_vertices == 3
    assert connected_components(g) == []
    rep = impact_report(parts, "X", ["Y"])
    assert rep.per_target["Y"].n_components == 0
    assert rep.per_target["Y"].fraction == 0.0


def test_degree_one_source_excluded():
    parts = {"S": cluster_stream(make_chain("S", [([], ["a", "b"]), (["a", "b"], ["z"])]).txs),
             "T": cluster_stream(make_chain("T", [([], ["a", "b"]), (["a", "b"], ["a"])]).txs)}
    g = build_cocluster_graph(parts)
    assert g.degree(V("S", "a")) == 1
    assert impacted_subgraph(g, "S", "T").n_materialized == 0


def test_errors(colours):
    g = build_cocluster_graph(colours)
    with pytest.raises(UnknownChainError):
        impacted_subgraph(g, "A", "Z")
    with pytest.raises(UnknownChainError):
        impact_report(colours, "A", ["Z"])
    with pytest.raises(ValueError):
        build_cocluster_graph({"A": colours["A"]})


def test_star_examples():
    hub = V("clam", "h")
    comp = Component((hub, V("btc", "1"), V("btc", "2"), V("btc", "3")),
                     tuple((hub, V("btc", x), frozenset({x})) for x in "123"))
    assert classify_star(comp, "clam") is StarKind.STAR
    path = [V("clam", "a"), V("btc", "b"), V("clam", "c"), V("btc", "d")]
    comp = Component(tuple(sorted(path)),
                     tuple((u, v, frozenset({"x"})) for u, v in zip(path, path[1:])))
    assert classify_star(comp, "clam") is StarKind.NON_STAR
    single = Component((V("clam", "a"), V("btc", "b")), ((V("clam", "a"), V("btc", "b"), frozenset("x")),))
    assert classify_star(single, "clam") is StarKind.STAR
    # hub on the wrong chain does not count
    assert classify_star(Component((V("btc", "1"), V("clam", "a"), V("clam", "b")),
                                   ((V("btc", "1"), V("clam", "a"), frozenset("x")),
                                    (V("btc", "1"), V("clam", "b"), frozenset("y")))),
                         "clam") is StarKind.NON_STAR


def random_partitions(rng, n_chains=3, pool=300, per_chain=180, unions=120):
    parts = {}
    for c in range(n_chains):
        p = Partition()
        addrs = rng.sample(range(pool), per_chain)
        for a in addrs:
            p.add(f"x{a}")
        for _ in range(unions):
            a, b = rng.sample(addrs, 2)
            p.union(f"x{a}", f"x{b}")
        parts[f"c{c}"] = p.freeze()
    return parts


@pytest.mark.parametrize("seed", range(8))
def test_edges_match_brute_force_intersection(seed):
    parts = random_partitions(random.Random(seed))
    g = build_cocluster_graph(parts)
    expect = {}
    for ca, cb in combinations(sorted(parts), 2):
        for ra, ma in parts[ca].clusters():
            for rb, mb in parts[cb].clusters():
                inter = set(ma) & set(mb)
                if inter:
                    expect[(V(ca, ra), V(cb, rb))] = inter
    got = {(u, v): set(s) for u, v, s in g.edges()}
    assert got == expect
    for u, v, s in g.edges():
        assert g.shared(u, v) == g.shared(v, u) == s
    for v in g.vertices:
        # an address sits in one cluster per chain, so edges from v into any
        # single other chain carry disjoint shared sets
        for other in parts:
            sets = [g.shared(v, n) for n in g.neighbors(v, other)]
            assert sum(len(s) for s in sets) == len(set().union(*sets))
            if other != v.chain:
                assert g.degree(v, other) <= min(len(parts[v.chain].members(v.cluster)),
                                                 parts[other].n_clusters)
    assert g.n_vertices == sum(p.n_clusters for p in parts.values())


@pytest.mark.parametrize("seed", range(8))
def test_components_match_flood_fill(seed):
    parts = random_partitions(random.Random(100 + seed), unions=60)
    g = build_cocluster_graph(parts)
    ng = nx.Graph()
    ng.add_nodes_from(g.vertices)
    ng.add_edges_from((u, v) for u, v, _ in g.edges())
    oracle = sorted(tuple(sorted(c)) for c in nx.connected_components(ng))
    ours = [c.vertices for c in connected_components(g)]
    assert ours == oracle
    assert sum(len(c.edges) for c in connected_components(g)) == g.n_edges


@pytest.mark.parametrize("seed", range(6))
def test_report_invariants(seed):
    parts = random_partitions(random.Random(200 + seed), unions=40)
    rep = impact_report(parts, "c0", ["c1", "c2"], multihop=True)
    for t, ti in rep.per_target.items():
        sizes = sum(len(c.vertices) for c in ti.components)
        assert ti.n_components <= ti.n_impacted_clusters <= sizes
        assert ti.n_impacted_clusters <= ti.n_target_clusters
        for c in ti.components:
            src = [v for v in c.vertices if v.chain == "c0"]
            tgt = [v for v in c.vertices if v.chain == t]
            assert len(tgt) >= 2
            assert any(sum(1 for u, w, _ in c.edges if s in (u, w)) >= 2 for s in src)
        g = impacted_subgraph(build_cocluster_graph(parts), "c0", t)
        for v in g.vertices:
            if v.chain == "c0":
                assert g.degree(v) <= parts[t].n_clusters


def test_exports(tmp_path, colours):
    g = build_cocluster_graph(colours)
    rows = write_edge_csv(g, tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "src_chain,src_cluster,dst_chain,dst_cluster,shared_count"
    assert rows[1] == "A,blue,B,blue,1"
    assert len(rows) == 5
    dot = write_dot(g, tmp_path / "g.dot").read_text()
    assert dot.startswith("graph cocluster {") and dot.count(" -- ") == 4
    rep = impact_report(colours, "A", ["B", "C"], multihop=True)
    data = json.loads(write_report_json(rep, tmp_path / "r.json").read_text())
    assert data["summary"]["B"]["components"] == 1
    assert data["components"]["B"][0]["star"] is True
    assert data["multihop"]["components"][0]["star"] is False
    assert data["graph"]["vertices"] == 6


def test_induced_and_restrict(colours):
    g = build_cocluster_graph(colours)
    ab = g.restrict(["A", "B"])
    assert ab.n_edges == 2 and isinstance(ab, CoClusterGraph)
    with pytest.raises(UnknownChainError):
        g.restrict(["A", "Q"])
    sub = g.induced([V("B", "blue"), V("C", "red")])
    assert sub.n_edges == 1
