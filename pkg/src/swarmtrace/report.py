"""Summary tables, rankings, pseudonymized labels, geodata and report bundles.

Bundle layout (``BUNDLE_VERSION`` 1), all text files UTF-8 with header rows::

    manifest.json                 parameters, file digests, omissions
    summary.csv                   whole-dataset counts and rates
    summary_scope.csv             same, restricted to the content-study scope
    rankings_<kind>.csv           isp, country, uploader, category
    top_pairs.csv                 heaviest IP co-download pairs
    centrality_flagged.csv        flagged-only IP network
    centrality_extended.csv       flagged IPs plus one-hop neighbours
    content_metrics[_extended].csv  and  connected_titles[_extended].csv
    geo_ips.geojson               one point per located IP
    geo_<network>.geojson         points and co-download lines
    graphs/<network>.graphml|_nodes.csv|_edges.csv

Rates are percentages rendered with two decimals. Rankings of IP fields use the
IPs that have a value for that field as the denominator.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import graph as g
from .analysis import AnalysisResult, ContentStudy
from .enrichment import IpProfile

BUNDLE_VERSION = 1
DOTTED_QUAD = re.compile(r"(?<![\d.])(?:\d{1,3}\.){3}\d{1,3}(?![\d.])")
RANKING_KINDS = ("isp", "country", "uploader", "category")


def scrub_addresses(text: str) -> str:
    # free text (titles, provider names) could still hold an address
    return DOTTED_QUAD.sub("[address]", text)


def pct(count: int, total: int) -> str:
    return f"{100.0 * count / total:.2f}" if total else "0.00"


@dataclass(frozen=True)
class RateCount:
    count: int
    total: int

    @property
    def rate(self) -> float:
        return self.count / self.total if self.total else 0.0

    @property
    def percent(self) -> str:
        return pct(self.count, self.total)

    def __str__(self) -> str:
        return f"{self.count} ({self.percent}%)"


@dataclass
class SummaryStats:
    torrent_count: int = 0
    unique_ip_count: int = 0
    country_count: int = 0
    flagged: dict[str, RateCount] = field(default_factory=dict)
    privacy: RateCount = RateCount(0, 0)
    least_anonymized: RateCount = RateCount(0, 0)
    flagged_privacy: dict[str, RateCount] = field(default_factory=dict)
    flagged_least_anonymized: dict[str, RateCount] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, int, int | str, str]]:
        out: list[tuple[str, int, int | str, str]] = [
            ("torrents", self.torrent_count, "", ""),
            ("unique_ips", self.unique_ip_count, "", ""),
            ("countries", self.country_count, "", ""),
        ]
        rated = [("privacy", self.privacy), ("least_anonymized", self.least_anonymized)]
        for label in sorted(self.flagged):
            rated += [(f"flagged:{label}", self.flagged[label]),
                      (f"flagged_privacy:{label}", self.flagged_privacy[label]),
                      (f"flagged_least_anonymized:{label}", self.flagged_least_anonymized[label])]
        out += [(name, rc.count, rc.total, rc.percent) for name, rc in rated]
        return out


def least_anonymized(p: IpProfile) -> bool:
    """No privacy indicator and no hostname to go on."""
    return not p.privacy and not p.hostname


def _scoped(store, scope: g.NodeFilter | None):
    torrents = store.torrents()
    if scope is not None:
        cats = {c.casefold() for c in scope.categories} if scope.categories else None
        torrents = [t for t in torrents
                    if (cats is None or t.category.casefold() in cats)
                    and (scope.uploader is None
                         or t.uploader.casefold() == scope.uploader.casefold())]
        keep = {t.info_hash.hex() for t in torrents}
        ips = {link.ip for link in store.links() if link.info_hash in keep}
        profiles = store.profiles(ips)
    else:
        profiles = store.profiles()
    return torrents, profiles


def summary(store, flag_labels: Iterable[str] | None = None,
            scope: g.NodeFilter | None = None) -> SummaryStats:
    """Counts and rates over all IPs, or over the IPs linked to the scoped torrents."""
    torrents, profiles = _scoped(store, scope)
    labels = sorted(set(flag_labels) if flag_labels is not None
                    else {f for p in profiles for f in p.flags})
    n = len(profiles)
    stats = SummaryStats(
        torrent_count=len(torrents),
        unique_ip_count=n,
        country_count=len({p.country for p in profiles if p.country}),
        privacy=RateCount(sum(p.privacy for p in profiles), n),
        least_anonymized=RateCount(sum(least_anonymized(p) for p in profiles), n),
    )
    for label in labels:
        flagged = [p for p in profiles if label in p.flags]
        stats.flagged[label] = RateCount(len(flagged), n)
        stats.flagged_privacy[label] = RateCount(sum(p.privacy for p in flagged), len(flagged))
        stats.flagged_least_anonymized[label] = RateCount(
            sum(least_anonymized(p) for p in flagged), len(flagged))
    return stats


@dataclass(frozen=True)
class RankRow:
    rank: int
    name: str
    count: int
    total: int

    @property
    def percent(self) -> str:
        return pct(self.count, self.total)


def rankings(store, kind: str, k: int, scope: g.NodeFilter | None = None) -> list[RankRow]:
    """Top-k values of a field by count; ties broken by name."""
    torrents, profiles = _scoped(store, scope)
    if kind in ("isp", "country"):
        values = [getattr(p, kind) for p in profiles]
    elif kind in ("uploader", "category"):
        values = [getattr(t, kind) for t in torrents]
    else:
        raise ValueError(f"ranking kind must be one of {RANKING_KINDS}, not {kind!r}")
    counts = Counter(v for v in values if v)
    total = sum(counts.values())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max(k, 0)]
    return [RankRow(i, name, c, total) for i, (name, c) in enumerate(ranked, start=1)]


# -- pseudonymization -----------------------------------------------------------


class NoLocation(ValueError):
    pass


@dataclass(frozen=True)
class PseudonymLabel:
    coords: tuple[float, float] | None
    country: str | None


def pseudonymize(profile: IpProfile, decimals: int = 4) -> PseudonymLabel:
    if profile.has_coords:
        return PseudonymLabel((round(profile.latitude, decimals),
                               round(profile.longitude, decimals)), profile.country)
    if profile.country:
        return PseudonymLabel(None, profile.country)
    raise NoLocation("profile has neither coordinates nor country")


class Pseudonymizer:
    """Stable per-run labels: rounded coordinates plus country, else ``node-NNNN`` aliases.

    Aliases and opaque node ids are assigned in numeric IP order up front, so a
    label never depends on the order in which callers ask for it.
    """

    def __init__(self, profiles: Iterable[IpProfile], decimals: int = 4):
        self.decimals = decimals
        self.labels: dict[str, str] = {}
        self.ids: dict[str, str] = {}
        alias = 0
        ordered = sorted(profiles, key=lambda p: g.node_key(g.IP)(p.ip))
        for i, p in enumerate(ordered, start=1):
            self.ids[p.ip] = f"n{i:05d}"
            try:
                lab = pseudonymize(p, decimals)
            except NoLocation:
                lab = PseudonymLabel(None, None)
            if lab.coords is not None:
                lat, lon = lab.coords
                text = f"({lat:.{decimals}f}, {lon:.{decimals}f})"
                self.labels[p.ip] = f"{text} {lab.country}" if lab.country else text
            else:
                alias += 1
                text = f"node-{alias:04d}"
                self.labels[p.ip] = f"{text} ({lab.country})" if lab.country else text
        by_label: dict[str, list[str]] = defaultdict(list)
        for ip, lab in self.labels.items():
            by_label[lab].append(ip)
        self.collisions = {lab: ips for lab, ips in by_label.items() if len(ips) > 1}

    @property
    def warnings(self) -> list[str]:
        return [f"{len(ips)} IPs share the label {lab}" for lab, ips in sorted(self.collisions.items())]

    def label(self, ip: str) -> str:
        return self.labels[ip]

    def node_id(self, ip: str) -> str:
        return self.ids[ip]


# -- geodata --------------------------------------------------------------------


@dataclass(frozen=True)
class GeoStyle:
    flag_label: str = "cem"
    flagged_color: str = "red"
    plain_color: str = "blue"
    privacy_shape: str = "triangle"
    plain_shape: str = "circle"


@dataclass(frozen=True)
class GeoPoint:
    id: str
    label: str
    latitude: float
    longitude: float
    downloads: int
    privacy: bool
    flags: tuple[str, ...] = ()


def geo_export(points: Iterable[GeoPoint], lines: Iterable[tuple[str, str, int, bool]] = (),
               style: GeoStyle | None = None) -> dict[str, Any]:
    """GeoJSON FeatureCollection of IP points and optional co-download lines.

    Points carry both ``weight`` (downloads) and ``ip_weight`` (1) so heat maps
    can weight either way. Lines reference point ids; ones with an unlocated
    endpoint are skipped.
    """
    style = style or GeoStyle()
    feats = []
    where = {}
    for p in points:
        where[p.id] = [p.longitude, p.latitude]
        flagged = style.flag_label in p.flags
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": [p.longitude, p.latitude]},
                      "properties": {
                          "id": p.id, "label": p.label, "weight": p.downloads, "ip_weight": 1,
                          "size": p.downloads, "privacy": p.privacy, "flags": list(p.flags),
                          "flag": style.flag_label if flagged else None,
                          "shape": style.privacy_shape if p.privacy else style.plain_shape,
                          "color": style.flagged_color if flagged else style.plain_color}})
    for a, b, weight, suppressed in lines:
        if a in where and b in where:
            feats.append({"type": "Feature",
                          "geometry": {"type": "LineString", "coordinates": [where[a], where[b]]},
                          "properties": {"source": a, "target": b, "weight": weight,
                                         "suppressed": bool(suppressed)}})
    return {"type": "FeatureCollection", "features": feats}


# -- bundle ---------------------------------------------------------------------


@dataclass
class ReportOptions:
    flag_labels: tuple[str, ...] | None = None
    pseudonymize: bool = True
    decimals: int = 4
    top_k: int = 10
    scope: g.NodeFilter | None = None
    style: GeoStyle = field(default_factory=GeoStyle)


@dataclass
class Manifest:
    directory: Path
    files: dict[str, str]
    omissions: dict[str, str]
    warnings: list[str]


def _csv_text(header: Iterable[str], rows: Iterable[Iterable[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class _Bundle:
    def __init__(self, directory: Path, scrub: bool):
        self.directory = directory
        self.scrub = scrub
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        if self.scrub:
            text = scrub_addresses(text)
        path = self.directory / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def write_path(self, name: str, path: Path) -> None:
        self.write(name, path.read_text())
        if (self.directory / name) != path:
            path.unlink()


def _fmt(x: float | None, places: int = 6) -> str:
    return "" if x is None else f"{x:.{places}f}"


def render_report(store, analysis: AnalysisResult, directory: str | Path,
                  options: ReportOptions | None = None) -> Manifest:
    """Write the bundle; anything that cannot be produced is listed under omissions."""
    opts = options or ReportOptions()
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    old = out / "manifest.json"
    if old.exists():
        for name in json.loads(old.read_text()).get("files", {}):
            (out / name).unlink(missing_ok=True)
    bundle = _Bundle(out, opts.pseudonymize)
    omissions = dict(analysis.omissions)
    profiles = store.profiles()
    by_ip = {p.ip: p for p in profiles}
    pseudo = Pseudonymizer(profiles, opts.decimals)

    def name_of(ip: str) -> str:
        return pseudo.label(ip) if opts.pseudonymize else ip

    labels = opts.flag_labels
    for fname, scope in (("summary.csv", None), ("summary_scope.csv", opts.scope)):
        if fname == "summary_scope.csv" and scope is None:
            omissions[fname] = "no content-study scope configured"
            continue
        stats = summary(store, labels, scope)
        bundle.write(fname, _csv_text(("metric", "count", "total", "percent"), stats.rows()))

    enriched = any(p.is_enriched for p in profiles)
    for kind in RANKING_KINDS:
        fname = f"rankings_{kind}.csv"
        if kind in ("isp", "country") and not enriched:
            omissions[fname] = "no IP has enrichment data; run enrich first"
            continue
        rows = rankings(store, kind, opts.top_k)
        bundle.write(fname, _csv_text(("rank", "name", "count", "total", "percent"),
                                      [(r.rank, r.name, r.count, r.total, r.percent) for r in rows]))

    def ip_cols(ip: str, ann: Mapping[str, Any]) -> list[Any]:
        return [name_of(ip), ann.get("country") or "", int(bool(ann.get("privacy"))),
                ";".join(ann.get("flags", ()))]

    if analysis.ip_network is not None:
        rows = [[i, *ip_cols(p.a, p.a_annotations), *ip_cols(p.b, p.b_annotations), p.weight]
                for i, p in enumerate(analysis.pairs, start=1)]
        bundle.write("top_pairs.csv", _csv_text(
            ("rank", "a", "a_country", "a_privacy", "a_flags",
             "b", "b_country", "b_privacy", "b_flags", "weight"), rows))
    for fname, rows in (("centrality_flagged.csv", analysis.flagged_rows if analysis.flagged else None),
                        ("centrality_extended.csv", analysis.extended_rows if analysis.extended else None)):
        if rows is None:
            continue
        bundle.write(fname, _csv_text(
            ("rank", "node", "country", "privacy", "flags", "betweenness", "degree",
             "normalized_degree"),
            [[i, *ip_cols(r.node, r.annotations), _fmt(r.betweenness), r.degree,
              _fmt(r.normalized_degree)] for i, r in enumerate(rows, start=1)]))

    for suffix, study in (("", analysis.content), ("_extended", analysis.content_extended)):
        if study is None:
            continue
        _write_content(bundle, suffix, study)

    located = sorted((p for p in profiles if p.has_coords), key=lambda p: g.node_key(g.IP)(p.ip))
    downloads = store.links_per_ip()

    def point(p: IpProfile, ann_downloads: int | None = None) -> GeoPoint:
        return GeoPoint(pseudo.node_id(p.ip) if opts.pseudonymize else p.ip, name_of(p.ip),
                        round(p.latitude, opts.decimals), round(p.longitude, opts.decimals),
                        downloads.get(p.ip, 0) if ann_downloads is None else ann_downloads,
                        bool(p.privacy), tuple(sorted(p.flags)))

    bundle.write("geo_ips.geojson", _json(geo_export([point(p) for p in located],
                                                     style=opts.style)))
    networks = {"ip_network": analysis.ip_network, "flagged": analysis.flagged,
                "extended": analysis.extended,
                "content": analysis.content.network if analysis.content else None,
                "content_extended": (analysis.content_extended.network
                                     if analysis.content_extended else None)}
    for name, net in networks.items():
        if net is None:
            omissions.setdefault(f"graphs/{name}", omissions.get(name, "not computed"))
            continue
        if net.kind == g.IP:
            pts = [point(by_ip[n]) for n in net.nodes if by_ip[n].has_coords]
            ident = (lambda ip: pseudo.node_id(ip)) if opts.pseudonymize else (lambda ip: ip)
            lines = [(ident(a), ident(b), w, (a, b) in net.suppressed)
                     for (a, b), w in net.edges.items()]
            bundle.write(f"geo_{name}.geojson", _json(geo_export(pts, lines, opts.style)))
            if opts.pseudonymize:
                net = g.relabel(_with_labels(net, pseudo), pseudo.ids, drop_fields=("hostname",))
        _write_graph(bundle, name, net)

    warnings = pseudo.warnings if opts.pseudonymize else []
    manifest = {
        "bundle_version": BUNDLE_VERSION,
        "pseudonymized": opts.pseudonymize,
        "parameters": analysis.params.to_json(),
        "scope": opts.scope.describe() if opts.scope else None,
        "flag_labels": sorted(labels) if labels is not None else None,
        "files": dict(sorted(bundle.files.items())),
        "omissions": dict(sorted(omissions.items())),
        "warnings": warnings,
    }
    (out / "manifest.json").write_text(_json(manifest))
    return Manifest(out, dict(bundle.files), omissions, warnings)


def _with_labels(net: g.WeightedGraph, pseudo: Pseudonymizer) -> g.WeightedGraph:
    return g.with_annotations(net, {n: {"label": pseudo.label(n)} for n in net.nodes})


def _write_content(bundle: _Bundle, suffix: str, study: ContentStudy) -> None:
    bundle.write(f"content_metrics{suffix}.csv", _csv_text(
        ("title", "found_peers", "degree", "betweenness", "connected_titles"),
        [(r.title, r.found_peers, f"{r.normalized_degree:.3f}", f"{r.betweenness:.3f}",
          ", ".join(str(i) for i in r.connected)) for r in study.rows]))
    bundle.write(f"connected_titles{suffix}.csv", _csv_text(
        ("number", "title"), [(num, title) for num, _, title in study.references]))


def _write_graph(bundle: _Bundle, name: str, net: g.WeightedGraph) -> None:
    tmp = bundle.directory / "graphs"
    tmp.mkdir(parents=True, exist_ok=True)
    nodes, edges, gml = (tmp / f"{name}_nodes.csv", tmp / f"{name}_edges.csv",
                         tmp / f"{name}.graphml")
    g.write_csv(net, nodes, edges)
    g.write_graphml(net, gml)
    for path in (nodes, edges, gml):
        bundle.write_path(f"graphs/{path.name}", path)


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- self-audit -----------------------------------------------------------------


def _scope_sql(scope: g.NodeFilter | None) -> tuple[str, list[str]]:
    where, params = "1", []
    if scope is not None and scope.uploader is not None:
        where += " AND lower(uploader) = lower(?)"
        params.append(scope.uploader)
    if scope is not None and scope.categories:
        cats = sorted({c.lower() for c in scope.categories})
        where += f" AND lower(category) IN ({', '.join('?' * len(cats))})"
        params += cats
    return where, params


def _scope_ips_sql(where: str) -> str:
    return ("SELECT DISTINCT h.ip FROM hash_ip h JOIN tor_info t USING (info_hash) WHERE "
            + where.replace("uploader", "t.uploader").replace("category", "t.category"))


def _sql_summary(store, scope: g.NodeFilter | None, labels: Iterable[str]) -> dict[str, tuple]:
    """Recompute summary rows with SQL only, sharing no code with :func:`summary`."""
    where, params = _scope_sql(scope)
    ip_set = "SELECT ip FROM ip_info" if scope is None else _scope_ips_sql(where)
    q = lambda sql: store.select(sql, params if "?" in sql else ())[0][0]  # noqa: E731
    ips = f"SELECT * FROM ip_info WHERE ip IN ({ip_set})"
    n = q(f"SELECT count(*) FROM ({ips})")
    out = {
        "torrents": (q(f"SELECT count(*) FROM tor_info WHERE {where}"), "", ""),
        "unique_ips": (n, "", ""),
        "countries": (q(f"SELECT count(DISTINCT country) FROM ({ips}) WHERE country != ''"), "", ""),
    }
    lean = "privacy = 0 AND (hostname IS NULL OR hostname = '')"
    rated = {"privacy": (q(f"SELECT count(*) FROM ({ips}) WHERE privacy = 1"), n),
             "least_anonymized": (q(f"SELECT count(*) FROM ({ips}) WHERE {lean}"), n)}
    for label in labels:
        lit = label.replace("'", "''")
        flagged = f"SELECT * FROM ({ips}) WHERE ip IN (SELECT ip FROM ip_flag WHERE label = '{lit}')"
        m = q(f"SELECT count(*) FROM ({flagged})")
        rated[f"flagged:{label}"] = (m, n)
        rated[f"flagged_privacy:{label}"] = (q(f"SELECT count(*) FROM ({flagged}) WHERE privacy = 1"), m)
        rated[f"flagged_least_anonymized:{label}"] = (
            q(f"SELECT count(*) FROM ({flagged}) WHERE {lean}"), m)
    for name, (c, t) in rated.items():
        out[name] = (c, t, f"{100.0 * c / t:.2f}" if t else "0.00")
    return out


def _read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def self_audit(store, directory: str | Path, scope: g.NodeFilter | None = None) -> list[str]:
    """Diff every recomputable number in a bundle against fresh store queries.

    Returns human-readable discrepancies; an empty list means the bundle checks out.
    """
    out = Path(directory)
    diffs: list[str] = []
    manifest = json.loads((out / "manifest.json").read_text())
    present = {name for name in manifest["files"] if (out / name).is_file()}
    for name, digest in manifest["files"].items():
        path = out / name
        if not path.exists():
            diffs.append(f"{name}: listed in manifest but missing")
        elif hashlib.sha256(path.read_bytes()).hexdigest() != digest:
            diffs.append(f"{name}: digest differs from manifest")
        elif manifest["pseudonymized"] and DOTTED_QUAD.search(path.read_text()):
            diffs.append(f"{name}: contains a dotted-quad address")
    if scope is None and manifest.get("scope"):
        s = manifest["scope"]
        scope = g.NodeFilter(categories=frozenset(s["categories"]) if s["categories"] else None,
                             uploader=s["uploader"])

    for fname, sc in (("summary.csv", None), ("summary_scope.csv", scope)):
        if fname not in present:
            continue
        rows = {r["metric"]: r for r in _read_csv(out / fname)}
        labels = [m.split(":", 1)[1] for m in rows if m.startswith("flagged:")]
        expected = _sql_summary(store, sc, labels)
        for metric, (c, t, p) in expected.items():
            got = rows.get(metric)
            if got is None:
                diffs.append(f"{fname}: metric {metric} missing")
            elif (got["count"], got["total"], got["percent"]) != (str(c), str(t), p):
                diffs.append(f"{fname}: {metric} is {got['count']}/{got['total']} "
                             f"({got['percent']}) but store gives {c}/{t} ({p})")
        for metric in set(rows) - set(expected):
            diffs.append(f"{fname}: unexpected metric {metric}")

    shown = scrub_addresses if manifest["pseudonymized"] else (lambda text: text)
    sql_rank = {
        "isp": "SELECT isp, count(*) FROM ip_info WHERE isp != '' GROUP BY isp",
        "country": "SELECT country, count(*) FROM ip_info WHERE country != '' GROUP BY country",
        "uploader": "SELECT uploader, count(*) FROM tor_info WHERE uploader != '' GROUP BY uploader",
        "category": "SELECT category, count(*) FROM tor_info WHERE category != '' GROUP BY category",
    }
    for kind, sql in sql_rank.items():
        fname = f"rankings_{kind}.csv"
        if fname not in present:
            continue
        counts = dict(store.select(sql))
        total = sum(counts.values())
        got = [(r["name"], r["count"], r["total"], r["percent"]) for r in _read_csv(out / fname)]
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:len(got)]
        want = [(shown(n), str(c), str(total), pct(c, total)) for n, c in ranked]
        for g_row, w_row in zip(got, want):
            if g_row != w_row:
                diffs.append(f"{fname}: row {g_row[0]!r} is {g_row[1:]} but store gives "
                             f"{w_row[0]!r} {w_row[1:]}")
        if len(got) > len(want):
            diffs.append(f"{fname}: {len(got) - len(want)} more rows than the store has values")

    for suffix in ("", "_extended"):
        fname = f"content_metrics{suffix}.csv"
        if fname not in present:
            continue
        where, params = _scope_sql(scope)
        scope_ips = {row[0] for row in store.select(_scope_ips_sql(where), params)}
        titles: dict[str, str] = {}
        peers: dict[str, set[str]] = defaultdict(set)
        for h, title, ip in store.select("SELECT t.info_hash, t.title, h.ip FROM hash_ip h "
                                         "JOIN tor_info t USING (info_hash)"):
            titles[h] = title
            peers[h].add(ip)
        for r in _read_csv(out / fname):
            # a (scrubbed) title may stand for several torrents; one of them must agree
            found = {len(peers[h] & scope_ips) for h, title in titles.items()
                     if shown(title) == r["title"]}
            if int(r["found_peers"]) not in found:
                diffs.append(f"{fname}: found peers for {r['title']!r} is {r['found_peers']}, "
                             f"store gives {sorted(found)}")
    return diffs
