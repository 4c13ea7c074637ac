"""Network studies run over a store: co-download pairs, flagged-IP centrality, content networks.

Order of operations for the IP co-download network: the per-IP link threshold
(``min_links``) is applied to the bipartite graph first, then the projection is
cut to its heaviest ``top_fraction`` of edges. Flagged subnetworks are taken
from the complete IP projection of the chosen torrent scope, without either cut.

"Downloads" for an IP means distinct torrents linked, not repeated sightings.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any

from . import graph as g

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisParams:
    min_links: int = 7
    top_fraction: float = 0.0001
    top_k: int = 10
    flag_label: str = "cem"
    flag_categories: tuple[str, ...] | None = None
    content_uploader: str | None = None
    content_categories: tuple[str, ...] | None = None
    content_rows: int = 5
    distance: str = g.HOPS

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("flag_categories", "content_categories"):
            d[k] = list(d[k]) if d[k] is not None else None
        return d

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> AnalysisParams:
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        for k in ("flag_categories", "content_categories"):
            if known.get(k) is not None:
                known[k] = tuple(known[k])
        return cls(**known)


@dataclass(frozen=True)
class ContentRow:
    info_hash: str
    title: str
    found_peers: int
    degree: int
    normalized_degree: float
    betweenness: float
    connected: tuple[int, ...]  # numbers into the reference list


@dataclass
class ContentStudy:
    network: g.WeightedGraph
    rows: list[ContentRow]
    references: list[tuple[int, str, str]]  # (number, info_hash, title)


@dataclass
class AnalysisResult:
    params: AnalysisParams
    ip_network: g.WeightedGraph | None = None
    pairs: list[g.PairRow] = field(default_factory=list)
    flagged: g.WeightedGraph | None = None
    flagged_rows: list[g.CentralityRow] = field(default_factory=list)
    extended: g.WeightedGraph | None = None
    extended_rows: list[g.CentralityRow] = field(default_factory=list)
    content: ContentStudy | None = None
    content_extended: ContentStudy | None = None
    omissions: dict[str, str] = field(default_factory=dict)


def _cats(values) -> frozenset[str] | None:
    return frozenset(values) if values else None


def ip_study(store, params: AnalysisParams, result: AnalysisResult) -> None:
    try:
        bip = g.build_bipartite(store, g.NodeFilter(categories=_cats(params.flag_categories),
                                                    min_links=params.min_links))
        net = g.project(bip, g.IP)
        result.ip_network = g.filter_top_fraction(net, params.top_fraction)
        result.pairs = g.top_pairs(result.ip_network, params.top_k)
    except g.EmptyResult as exc:
        result.omissions["ip_network"] = str(exc)

    try:
        full = g.project(g.build_bipartite(
            store, g.NodeFilter(categories=_cats(params.flag_categories))), g.IP)
    except g.EmptyResult as exc:
        result.omissions["flagged"] = result.omissions["extended"] = str(exc)
        return
    flagged = g.subgraph_flagged(full, params.flag_label, g.FLAGGED_ONLY)
    if not flagged.nodes:
        reason = f"no IP carries the flag {params.flag_label!r}"
        result.omissions["flagged"] = result.omissions["extended"] = reason
        return
    result.flagged = flagged
    result.flagged_rows = g.betweenness(flagged, params.distance)[:params.top_k]
    result.extended = g.subgraph_flagged(full, params.flag_label, g.EXTENDED_ONE_HOP)
    result.extended_rows = g.betweenness(result.extended, params.distance)[:params.top_k]


def _content_study(bip: g.BipartiteGraph, params: AnalysisParams,
                   primary: set[str]) -> ContentStudy:
    network = g.drop_isolated(g.project(bip, g.CONTENT))
    if not network.edges:
        raise g.EmptyResult("no two torrents share a downloader")
    neighbors = network.neighbors()
    ranked = g.betweenness(network, params.distance)
    ann = network.annotations
    ranked.sort(key=lambda r: (-r.betweenness, -r.degree, ann[r.node]["title"].casefold(),
                               r.node))
    top = ranked[:params.content_rows]
    listed = {r.node for r in top}
    for r in top:
        listed |= neighbors[r.node]
    # torrents from the study scope first, then anything the extension pulled in
    order = sorted(listed, key=lambda h: (h not in primary, ann[h]["title"].casefold(), h))
    number = {h: i for i, h in enumerate(order, start=1)}
    rows = [ContentRow(r.node, ann[r.node]["title"], int(ann[r.node]["found_peers"]),
                       r.degree, r.normalized_degree, r.betweenness,
                       tuple(sorted(number[h] for h in neighbors[r.node])))
            for r in top]
    refs = [(number[h], h, ann[h]["title"]) for h in order]
    return ContentStudy(network, rows, refs)


def content_study(store, params: AnalysisParams, result: AnalysisResult) -> None:
    scope = g.NodeFilter(categories=_cats(params.content_categories),
                         uploader=params.content_uploader)
    if scope.categories is None and scope.uploader is None:
        result.omissions["content"] = result.omissions["content_extended"] = \
            "no content scope configured (uploader or categories)"
        return
    try:
        bip = g.build_bipartite(store, scope)
        primary = set(bip.torrent_nodes)
        result.content = _content_study(bip, params, primary)
    except g.EmptyResult as exc:
        result.omissions["content"] = result.omissions["content_extended"] = str(exc)
        return
    try:
        # every torrent the study population touched; found peers still counts only them
        wider = g.build_bipartite(store, g.NodeFilter(ips=bip.ip_nodes))
        result.content_extended = _content_study(wider, params, primary)
    except g.EmptyResult as exc:
        result.omissions["content_extended"] = str(exc)


def analyze(store, params: AnalysisParams | None = None) -> AnalysisResult:
    params = params or AnalysisParams()
    result = AnalysisResult(params)
    ip_study(store, params, result)
    content_study(store, params, result)
    for name, reason in result.omissions.items():
        log.info("analysis %s skipped: %s", name, reason)
    return result
