from __future__ import annotations

import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from builders import CASE_UPLOADER, CORE_TITLES, info_hash_for, torrent_row
from swarmtrace import graph as g
from swarmtrace.analysis import AnalysisParams, analyze
from swarmtrace.enrichment import IpProfile
from swarmtrace.magnet import InfoHash
from swarmtrace.tracker_client import PeerObservation


def random_bipartite(rng: random.Random) -> g.BipartiteGraph:
    ips = [f"10.0.0.{i}" for i in range(1, rng.randint(1, 30) + 1)]
    hashes = [f"{i:040x}" for i in range(rng.randint(1, 30))]
    p = rng.uniform(0.02, 0.5)
    edges = {(ip, h) for ip in ips for h in hashes if rng.random() < p}
    edges.add((ips[0], hashes[0]))
    return g.BipartiteGraph(frozenset(ip for ip, _ in edges), frozenset(h for _, h in edges),
                            frozenset(edges))


def oracle_projection(bip: g.BipartiteGraph, side: str) -> dict[frozenset, int]:
    own, other = (0, 1) if side == g.IP else (1, 0)
    sets: dict[str, set] = {}
    for e in bip.edges:
        sets.setdefault(e[own], set()).add(e[other])
    out = {}
    for a, b in itertools.combinations(sorted(sets), 2):
        shared = len(sets[a] & sets[b])
        if shared:
            out[frozenset((a, b))] = shared
    return out


def as_pairs(graph: g.WeightedGraph) -> dict[frozenset, int]:
    return {frozenset(e): w for e, w in graph.edges.items()}


def test_projection_matches_intersection_oracle():
    rng = random.Random(2024)
    for _ in range(200):
        bip = random_bipartite(rng)
        for side in (g.IP, g.CONTENT):
            assert as_pairs(g.project(bip, side)) == oracle_projection(bip, side)


def test_small_projection_example():
    bip = g.BipartiteGraph(frozenset({"1.0.0.1", "1.0.0.2"}), frozenset({"h1", "h2"}),
                           frozenset({("1.0.0.1", "h1"), ("1.0.0.2", "h1"), ("1.0.0.1", "h2")}))
    ip_net = g.project(bip, g.IP)
    assert dict(ip_net.edges) == {("1.0.0.1", "1.0.0.2"): 1}
    assert ip_net.annotations["1.0.0.1"]["downloads"] == 2
    assert g.project(bip, g.CONTENT).weight("h1", "h2") == 1


def test_weighted_graph_invariants():
    with pytest.raises(ValueError):
        g.WeightedGraph.build(g.CONTENT, ["a"], {("a", "a"): 1})
    with pytest.raises(ValueError):
        g.WeightedGraph.build(g.CONTENT, ["a", "b"], {("a", "b"): 0})
    with pytest.raises(ValueError):
        g.WeightedGraph.build(g.CONTENT, ["a"], {("a", "b"): 1})
    wg = g.WeightedGraph.build(g.IP, ["10.0.0.10", "10.0.0.9"], {("10.0.0.10", "10.0.0.9"): 2})
    assert wg.nodes == ("10.0.0.9", "10.0.0.10")
    assert list(wg.edges) == [("10.0.0.9", "10.0.0.10")]
    with pytest.raises(ValueError):
        g.BipartiteGraph(frozenset({"x"}), frozenset(), frozenset({("x", "h")}))


def chain(weights):
    nodes = [f"n{i:03d}" for i in range(len(weights) + 1)]
    return g.WeightedGraph.build(g.CONTENT, nodes,
                                 {(nodes[i], nodes[i + 1]): w for i, w in enumerate(weights)})


def test_top_fraction_count_and_ties():
    graph = chain(list(range(1, 10_001)))
    kept = g.filter_top_fraction(graph, 0.0001)
    assert list(kept.edges.values()) == [10_000]
    tied = g.filter_top_fraction(chain([5, 5, 5, 1]), 0.25)
    assert sorted(tied.edges.values()) == [5, 5, 5]
    assert g.filter_top_fraction(chain([1, 2]), 1.0).edges == chain([1, 2]).edges
    with pytest.raises(ValueError):
        g.filter_top_fraction(chain([1]), 0)


@settings(max_examples=60)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=60), st.floats(0.001, 1.0))
def test_top_fraction_property(weights, fraction):
    graph = chain(weights)
    kept = g.filter_top_fraction(graph, fraction)
    need = max(1, math.ceil(fraction * len(weights) - 1e-9))
    assert len(kept.edges) >= need
    cut = min(kept.edges.values())
    assert all(w < cut for e, w in graph.edges.items() if e not in kept.edges)


def flagged_graph():
    nodes = [f"10.0.0.{i}" for i in range(1, 7)]
    ann = {n: {"flags": ["cem"] if n in ("10.0.0.1", "10.0.0.2") else []} for n in nodes}
    edges = {("10.0.0.1", "10.0.0.2"): 1, ("10.0.0.1", "10.0.0.3"): 2,
             ("10.0.0.3", "10.0.0.4"): 1, ("10.0.0.2", "10.0.0.4"): 1,
             ("10.0.0.5", "10.0.0.6"): 4}
    return g.WeightedGraph.build(g.IP, nodes, edges, ann)


def test_subgraph_flagged_modes():
    graph = flagged_graph()
    only = g.subgraph_flagged(graph, "cem")
    assert only.nodes == ("10.0.0.1", "10.0.0.2") and len(only.edges) == 1
    ext = g.subgraph_flagged(graph, "cem", g.EXTENDED_ONE_HOP)
    assert ext.nodes == ("10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4")
    assert ext.suppressed == {("10.0.0.3", "10.0.0.4")}
    assert len(ext.edges) == 4
    assert g.subgraph_flagged(graph, "none").nodes == ()


def test_top_pairs_order():
    pairs = g.top_pairs(flagged_graph(), 2)
    assert [(p.a, p.b, p.weight) for p in pairs] == [("10.0.0.5", "10.0.0.6", 4),
                                                     ("10.0.0.1", "10.0.0.3", 2)]


def test_csv_and_graphml_roundtrip(tmp_path):
    graph = g.subgraph_flagged(flagged_graph(), "cem", g.EXTENDED_ONE_HOP)
    g.write_csv(graph, tmp_path / "n.csv", tmp_path / "e.csv")
    back = g.read_csv(g.IP, tmp_path / "n.csv", tmp_path / "e.csv")
    assert back.nodes == graph.nodes and dict(back.edges) == dict(graph.edges)
    assert back.suppressed == graph.suppressed
    g.write_graphml(graph, tmp_path / "g.graphml")
    back = g.read_graphml(tmp_path / "g.graphml")
    assert back.nodes == graph.nodes and dict(back.edges) == dict(graph.edges)
    assert back.suppressed == graph.suppressed


def test_relabel_keeps_structure():
    graph = flagged_graph()
    mapping = {n: f"n{i:05d}" for i, n in enumerate(graph.nodes, 1)}
    out = g.relabel(graph, mapping, drop_fields=["flags"])
    assert out.nodes == tuple(sorted(mapping.values()))
    assert out.weight("n00001", "n00003") == 2
    assert all("flags" not in a for a in out.annotations.values())
    with pytest.raises(ValueError):
        g.relabel(graph, dict.fromkeys(graph.nodes, "same"))


def test_build_bipartite_filters(store):
    titles = [("Book A", "E-books", "alice"), ("Book B", "E-books", "bob"),
              ("Film C", "Movies", "alice")]
    store.ingest_torrents([torrent_row(t, c, u) for t, c, u in titles])
    links = [("Book A", "10.0.0.1"), ("Book B", "10.0.0.1"), ("Film C", "10.0.0.1"),
             ("Book A", "10.0.0.2"), ("Film C", "10.0.0.3")]
    store.record_observations([PeerObservation(InfoHash.from_text(info_hash_for(t)), ip, 1, 0.0)
                               for t, ip in links])
    store.upsert_profiles([IpProfile("10.0.0.2", flags={"cem"})])
    full = g.build_bipartite(store)
    assert len(full.edges) == 5 and len(full.ip_nodes) == 3
    books = g.build_bipartite(store, g.NodeFilter(categories=frozenset({"e-books"})))
    assert books.ip_nodes == {"10.0.0.1", "10.0.0.2"}
    heavy = g.build_bipartite(store, g.NodeFilter(min_links=2))
    assert heavy.ip_nodes == {"10.0.0.1"}
    # the category filter runs first, so 10.0.0.1 keeps only 2 links
    with pytest.raises(g.EmptyResult):
        g.build_bipartite(store, g.NodeFilter(categories=frozenset({"E-books"}), min_links=3))
    flagged = g.build_bipartite(store, g.NodeFilter(flag_label="cem"))
    assert flagged.ip_nodes == {"10.0.0.2"}
    alice = g.build_bipartite(store, g.NodeFilter(uploader="ALICE"))
    assert alice.torrent_annotations[info_hash_for("Book A")]["found_peers"] == 2


def test_case_study_bipartite(case_store):
    bip = g.build_bipartite(case_store, g.NodeFilter(uploader=CASE_UPLOADER))
    assert len(bip.torrent_nodes) <= 59 and len(bip.ip_nodes) == 42


def test_case_study_content_table(case_store):
    result = analyze(case_store, AnalysisParams(content_uploader=CASE_UPLOADER))
    study = result.content
    assert (len(study.network.nodes), len(study.network.edges)) == (22, 46)
    shape = [(r.degree, f"{r.normalized_degree:.3f}", f"{r.betweenness:.3f}")
             for r in study.rows]
    assert shape[:4] == [(9, "0.429", "0.006")] * 4
    assert shape[4] == (8, "0.381", "0.000")
    assert study.rows[4].title == "Cia Explosives for Sabotage Manual.pdf"
    numbers = {title: n for n, _, title in study.references}
    assert set(numbers) == set(CORE_TITLES)
    for row in study.rows:
        assert numbers[row.title] not in row.connected and len(row.connected) == row.degree
    ext = result.content_extended
    assert len(ext.network.nodes) == 24
    assert ext.rows[0].title == "MILITARY Explosives Chemistry Must Have Ebook"
    assert [n for n, _, _ in ext.references] == list(range(1, len(ext.references) + 1))
