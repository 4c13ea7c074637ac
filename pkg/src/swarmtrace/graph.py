"""Bipartite IP/torrent graph, unipartite projections, filters and centrality.

Node ids are strings: dotted-quad IPs on the ip side, 40-hex info-hashes on
the content side. Undirected edges are stored as ``(a, b)`` with ``a`` before
``b`` in the graph's node order (numeric for IPs, lexicographic for hashes).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from . import _brandes
from .enrichment import ip_sort_key

IP = "ip"
CONTENT = "content"
HOPS = "hops"
INVERSE_WEIGHT = "inverse_weight"


class EmptyResult(ValueError):
    """A filter left nothing to build a graph from."""


def _ip_or_alias_key(node: str) -> tuple[int, int, str]:
    # pseudonymized graphs carry opaque ids; they sort after real addresses
    try:
        return (0, ip_sort_key(node), "")
    except ValueError:
        return (1, 0, node)


def node_key(kind: str) -> Callable[[str], Any]:
    return _ip_or_alias_key if kind == IP else str


@dataclass(frozen=True)
class NodeFilter:
    """Restrict a bipartite build. Torrent filters apply before ``min_links``."""

    categories: frozenset[str] | None = None
    uploader: str | None = None
    min_links: int = 0
    flag_label: str | None = None
    ips: frozenset[str] | None = None

    def describe(self) -> dict[str, Any]:
        return {"categories": sorted(self.categories) if self.categories else None,
                "uploader": self.uploader, "min_links": self.min_links,
                "flag_label": self.flag_label}


@dataclass(frozen=True)
class BipartiteGraph:
    ip_nodes: frozenset[str]
    torrent_nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]  # (ip, info_hash)
    ip_annotations: Mapping[str, dict] = field(default_factory=dict)
    torrent_annotations: Mapping[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        for ip, h in self.edges:
            if ip not in self.ip_nodes or h not in self.torrent_nodes:
                raise ValueError(f"edge ({ip}, {h}) leaves the node sets")

    def ip_degree(self) -> dict[str, int]:
        out = dict.fromkeys(self.ip_nodes, 0)
        for ip, _ in self.edges:
            out[ip] += 1
        return out

    def torrent_degree(self) -> dict[str, int]:
        out = dict.fromkeys(self.torrent_nodes, 0)
        for _, h in self.edges:
            out[h] += 1
        return out


@dataclass(frozen=True)
class WeightedGraph:
    kind: str
    nodes: tuple[str, ...]
    edges: Mapping[tuple[str, str], int]
    annotations: Mapping[str, dict] = field(default_factory=dict)
    suppressed: frozenset[tuple[str, str]] = frozenset()

    @classmethod
    def build(cls, kind: str, nodes: Iterable[str], edges: Mapping[tuple[str, str], int],
              annotations: Mapping[str, dict] | None = None,
              suppressed: Iterable[tuple[str, str]] = ()) -> WeightedGraph:
        """Canonicalize node order and edge orientation, validating weights."""
        key = node_key(kind)
        ordered = tuple(sorted(set(nodes), key=key))
        rank = {n: i for i, n in enumerate(ordered)}
        canon: dict[tuple[str, str], int] = {}
        for (a, b), w in edges.items():
            if a == b:
                raise ValueError(f"self-loop on {a}")
            if a not in rank or b not in rank:
                raise ValueError(f"edge ({a}, {b}) references unknown node")
            if w < 1:
                raise ValueError(f"edge ({a}, {b}) has weight {w}")
            pair = (a, b) if rank[a] < rank[b] else (b, a)
            canon[pair] = int(w)
        sorted_edges = dict(sorted(canon.items(), key=lambda kv: (rank[kv[0][0]], rank[kv[0][1]])))
        supp = frozenset((a, b) if rank[a] < rank[b] else (b, a) for a, b in suppressed)
        ann = {n: dict((annotations or {}).get(n, {})) for n in ordered}
        return cls(kind, ordered, sorted_edges, ann, supp & set(sorted_edges))

    def weight(self, a: str, b: str) -> int:
        return self.edges.get((a, b)) or self.edges.get((b, a)) or 0

    def degrees(self) -> dict[str, int]:
        out = dict.fromkeys(self.nodes, 0)
        for a, b in self.edges:
            out[a] += 1
            out[b] += 1
        return out

    def neighbors(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            out[a].add(b)
            out[b].add(a)
        return out

    def induced(self, keep: Iterable[str]) -> WeightedGraph:
        keep = set(keep)
        edges = {e: w for e, w in self.edges.items() if e[0] in keep and e[1] in keep}
        return WeightedGraph.build(self.kind, keep, edges, self.annotations,
                                   self.suppressed & set(edges))

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric CSR arrays (indptr, indices, weights) in node order."""
        n = len(self.nodes)
        rank = {v: i for i, v in enumerate(self.nodes)}
        if not self.edges:
            return np.zeros(n + 1, np.int64), np.zeros(0, np.int32), np.zeros(0)
        rows = np.fromiter((rank[a] for a, _ in self.edges), np.int64, len(self.edges))
        cols = np.fromiter((rank[b] for _, b in self.edges), np.int64, len(self.edges))
        w = np.fromiter(self.edges.values(), np.float64, len(self.edges))
        m = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([rows, cols]),
                                                    np.concatenate([cols, rows]))),
                          shape=(n, n)).tocsr()
        m.sort_indices()
        return m.indptr.astype(np.int64), m.indices.astype(np.int32), m.data


# -- construction -------------------------------------------------------------


def build_bipartite(store, node_filter: NodeFilter | None = None) -> BipartiteGraph:
    """One edge per distinct stored (torrent, ip) link that passes the filter."""
    f = node_filter or NodeFilter()
    torrents = {t.info_hash.hex(): t for t in store.torrents()}
    if not torrents:
        raise EmptyResult("store holds no torrents")
    cats = {c.casefold() for c in f.categories} if f.categories else None

    def torrent_ok(t) -> bool:
        if cats is not None and t.category.casefold() not in cats:
            return False
        if f.uploader is not None and t.uploader.casefold() != f.uploader.casefold():
            return False
        return True

    profiles = {p.ip: p for p in store.profiles()}
    edges = [(link.ip, link.info_hash) for link in store.links()
             if torrent_ok(torrents[link.info_hash])]
    if f.ips is not None:
        edges = [e for e in edges if e[0] in f.ips]
    if f.flag_label is not None:
        edges = [e for e in edges if f.flag_label in profiles[e[0]].flags]
    if f.min_links > 0:
        per_ip: dict[str, int] = {}
        for ip, _ in edges:
            per_ip[ip] = per_ip.get(ip, 0) + 1
        edges = [e for e in edges if per_ip[e[0]] >= f.min_links]
    if not edges:
        raise EmptyResult(f"no links pass the filter {f.describe()}")
    ip_nodes = frozenset(ip for ip, _ in edges)
    torrent_nodes = frozenset(h for _, h in edges)
    found = {}
    for _, h in edges:
        found[h] = found.get(h, 0) + 1
    ip_ann = {ip: _ip_annotation(profiles[ip]) for ip in ip_nodes}
    tor_ann = {h: {"title": torrents[h].title, "category": torrents[h].category,
                   "uploader": torrents[h].uploader, "found_peers": found[h]}
               for h in torrent_nodes}
    return BipartiteGraph(ip_nodes, torrent_nodes, frozenset(edges), ip_ann, tor_ann)


def _ip_annotation(p) -> dict:
    return {"latitude": p.latitude, "longitude": p.longitude, "country": p.country,
            "privacy": bool(p.privacy), "flags": sorted(p.flags), "hostname": p.hostname}


def project(bipartite: BipartiteGraph, side: str) -> WeightedGraph:
    """Unipartite projection; weight = number of shared opposite-side nodes."""
    if not bipartite.edges:
        raise EmptyResult("bipartite graph has no edges")
    ips = sorted(bipartite.ip_nodes, key=ip_sort_key)
    hashes = sorted(bipartite.torrent_nodes)
    ip_rank = {v: i for i, v in enumerate(ips)}
    h_rank = {v: i for i, v in enumerate(hashes)}
    rows = np.fromiter((ip_rank[ip] for ip, _ in bipartite.edges), np.int64)
    cols = np.fromiter((h_rank[h] for _, h in bipartite.edges), np.int64)
    incidence = sp.csr_matrix((np.ones(len(rows), np.int64), (rows, cols)),
                              shape=(len(ips), len(hashes)))
    if side == IP:
        co, nodes = incidence @ incidence.T, ips
        ann = {ip: dict(bipartite.ip_annotations.get(ip, {}),
                        downloads=d) for ip, d in bipartite.ip_degree().items()}
    elif side == CONTENT:
        co, nodes = incidence.T @ incidence, hashes
        ann = {h: dict(bipartite.torrent_annotations.get(h, {})) for h in hashes}
    else:
        raise ValueError(f"side must be {IP!r} or {CONTENT!r}, not {side!r}")
    upper = sp.triu(co, k=1).tocoo()
    edges = {(nodes[i], nodes[j]): int(w) for i, j, w in zip(upper.row, upper.col, upper.data)}
    return WeightedGraph.build(side, nodes, edges, ann)


# -- filters ------------------------------------------------------------------


def drop_isolated(graph: WeightedGraph) -> WeightedGraph:
    used = {n for e in graph.edges for n in e}
    return graph.induced(used)


def filter_top_fraction(graph: WeightedGraph, fraction: float) -> WeightedGraph:
    """Keep the ceil(fraction*|E|) heaviest edges plus any tied with the last one."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if not graph.edges:
        raise EmptyResult("graph has no edges to filter")
    # the epsilon keeps 0.0001 * 10000 from rounding up to 2
    keep = max(1, math.ceil(fraction * len(graph.edges) - 1e-9))
    cut = sorted(graph.edges.values(), reverse=True)[keep - 1]
    edges = {e: w for e, w in graph.edges.items() if w >= cut}
    used = {n for e in edges for n in e}
    return WeightedGraph.build(graph.kind, used, edges, graph.annotations,
                               graph.suppressed & set(edges))


FLAGGED_ONLY = "flagged_only"
EXTENDED_ONE_HOP = "extended_one_hop"


def subgraph_flagged(graph: WeightedGraph, label: str, mode: str = FLAGGED_ONLY
                     ) -> WeightedGraph:
    """Flagged nodes alone, or with their neighbours and every edge among the retained set.

    In the extended form, edges between two unflagged nodes are kept (centrality
    needs them) but listed in ``suppressed`` for display.
    """
    flagged = {n for n in graph.nodes if label in graph.annotations.get(n, {}).get("flags", ())}
    if mode == FLAGGED_ONLY:
        return graph.induced(flagged)
    if mode != EXTENDED_ONE_HOP:
        raise ValueError(f"unknown mode {mode!r}")
    keep = set(flagged)
    for a, b in graph.edges:
        if a in flagged:
            keep.add(b)
        elif b in flagged:
            keep.add(a)
    edges = {e: w for e, w in graph.edges.items() if e[0] in keep and e[1] in keep}
    suppressed = {e for e in edges if e[0] not in flagged and e[1] not in flagged}
    return WeightedGraph.build(graph.kind, keep, edges, graph.annotations, suppressed)


# -- centrality ---------------------------------------------------------------


@dataclass(frozen=True)
class CentralityRow:
    node: str
    betweenness: float | None
    degree: int
    normalized_degree: float
    annotations: Mapping[str, Any] = field(default_factory=dict)


def betweenness_scores(graph: WeightedGraph, distance: str = HOPS) -> dict[str, float]:
    """Exact normalized betweenness. ``inverse_weight`` uses 1/weight as edge length."""
    n = len(graph.nodes)
    if n < 3 or not graph.edges:
        return dict.fromkeys(graph.nodes, 0.0)
    indptr, indices, weights = graph.csr()
    if distance == HOPS:
        raw = _brandes.hop_dependencies(indptr, indices)
    elif distance == INVERSE_WEIGHT:
        adj = [[(int(indices[k]), 1.0 / weights[k]) for k in range(indptr[v], indptr[v + 1])]
               for v in range(n)]
        raw = _brandes.weighted_dependencies(n, adj)
    else:
        raise ValueError(f"unknown distance model {distance!r}")
    scale = (n - 1) * (n - 2)
    return {v: float(raw[i] / scale) for i, v in enumerate(graph.nodes)}


def _rows(graph: WeightedGraph, between: dict[str, float] | None) -> list[CentralityRow]:
    deg = graph.degrees()
    n = len(graph.nodes)
    return [CentralityRow(v, between[v] if between is not None else None, deg[v],
                          deg[v] / (n - 1) if n > 1 else 0.0, graph.annotations.get(v, {}))
            for v in graph.nodes]


def betweenness(graph: WeightedGraph, distance: str = HOPS) -> list[CentralityRow]:
    """Rows sorted by betweenness (desc), then degree (desc), then node order."""
    rank = {v: i for i, v in enumerate(graph.nodes)}
    rows = _rows(graph, betweenness_scores(graph, distance))
    return sorted(rows, key=lambda r: (-r.betweenness, -r.degree, rank[r.node]))


def degree(graph: WeightedGraph, with_betweenness: bool = False,
           distance: str = HOPS) -> list[CentralityRow]:
    """Rows sorted by degree (desc), then node order."""
    rank = {v: i for i, v in enumerate(graph.nodes)}
    between = betweenness_scores(graph, distance) if with_betweenness else None
    return sorted(_rows(graph, between), key=lambda r: (-r.degree, rank[r.node]))


@dataclass(frozen=True)
class PairRow:
    a: str
    b: str
    weight: int
    a_annotations: Mapping[str, Any]
    b_annotations: Mapping[str, Any]


def top_pairs(graph: WeightedGraph, k: int) -> list[PairRow]:
    """The k heaviest edges; ties are ordered by canonical pair position."""
    rank = {v: i for i, v in enumerate(graph.nodes)}
    ranked = sorted(graph.edges.items(), key=lambda kv: (-kv[1], rank[kv[0][0]], rank[kv[0][1]]))
    return [PairRow(a, b, w, graph.annotations.get(a, {}), graph.annotations.get(b, {}))
            for (a, b), w in ranked[:max(k, 0)]]


# -- interchange --------------------------------------------------------------


def relabel(graph: WeightedGraph, mapping: Mapping[str, str],
            drop_fields: Iterable[str] = ()) -> WeightedGraph:
    """Rename nodes (e.g. to pseudonyms) keeping the original node order."""
    drop = set(drop_fields)
    new_ids = [mapping[n] for n in graph.nodes]
    if len(set(new_ids)) != len(new_ids):
        raise ValueError("relabel mapping is not one-to-one")
    ann = {mapping[n]: {k: v for k, v in a.items() if k not in drop}
           for n, a in graph.annotations.items()}
    return WeightedGraph(
        graph.kind, tuple(new_ids),
        {(mapping[a], mapping[b]): w for (a, b), w in graph.edges.items()},
        ann, frozenset((mapping[a], mapping[b]) for a, b in graph.suppressed))


def _flat(value: Any) -> Any:
    if isinstance(value, (list, tuple, set, frozenset)):
        return ";".join(str(v) for v in value)
    return value


def write_csv(graph: WeightedGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    """Node table (id + annotation columns) and edge table (source, target, weight, suppressed)."""
    fields = sorted({k for a in graph.annotations.values() for k in a})
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *fields])
        for n in graph.nodes:
            a = graph.annotations.get(n, {})
            w.writerow([n, *("" if a.get(k) is None else _flat(a.get(k)) for k in fields)])
    with Path(edges_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "weight", "suppressed"])
        for (a, b), weight in graph.edges.items():
            w.writerow([a, b, weight, int((a, b) in graph.suppressed)])


def read_csv(kind: str, nodes_path: str | Path, edges_path: str | Path) -> WeightedGraph:
    """Inverse of :func:`write_csv`. Annotation values come back as strings."""
    with Path(nodes_path).open(newline="") as fh:
        ann = {r.pop("id"): {k: v for k, v in r.items() if v != ""} for r in csv.DictReader(fh)}
    edges, suppressed = {}, set()
    with Path(edges_path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            edges[(r["source"], r["target"])] = int(r["weight"])
            if r.get("suppressed") == "1":
                suppressed.add((r["source"], r["target"]))
    return WeightedGraph.build(kind, ann, edges, ann, suppressed)


def to_networkx(graph: WeightedGraph):
    import networkx as nx

    g = nx.Graph(kind=graph.kind)
    for n in graph.nodes:
        g.add_node(n, **{k: _flat(v) for k, v in graph.annotations.get(n, {}).items()
                         if v is not None})
    for (a, b), w in graph.edges.items():
        g.add_edge(a, b, weight=w, suppressed=(a, b) in graph.suppressed)
    return g


def write_graphml(graph: WeightedGraph, path: str | Path) -> None:
    import networkx as nx

    nx.write_graphml(to_networkx(graph), str(path))


def read_graphml(path: str | Path) -> WeightedGraph:
    import networkx as nx

    g = nx.read_graphml(str(path))
    kind = g.graph.get("kind", IP)
    edges = {(a, b): int(d["weight"]) for a, b, d in g.edges(data=True)}
    suppressed = {(a, b) for a, b, d in g.edges(data=True) if d.get("suppressed")}
    return WeightedGraph.build(kind, g.nodes, edges, {n: dict(d) for n, d in g.nodes(data=True)},
                               suppressed)


def with_annotations(graph: WeightedGraph, extra: Mapping[str, dict]) -> WeightedGraph:
    ann = {n: dict(graph.annotations.get(n, {}), **extra.get(n, {})) for n in graph.nodes}
    return replace(graph, annotations=ann)
