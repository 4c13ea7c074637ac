"""Single-file relational dataset: ``tor_info``, ``ip_info`` and ``hash_ip``.

Schema (version 1, stored in ``PRAGMA user_version`` and ``meta.schema_version``):

* ``tor_info``  one row per torrent, keyed by lowercase hex info-hash.
* ``ip_info``   one row per IPv4 address with enrichment fields.
* ``ip_flag``   (ip, label) external flag memberships.
* ``hash_ip``   one row per distinct (torrent, ip) link with first/last sighting
  and the number of distinct sightings.
* ``observation`` raw (torrent, ip, port, seen_at) sightings; makes
  re-ingesting the same observations a no-op.
* ``provider_raw`` per-provider lookup payloads kept for audit (this is where
  anycast indicators end up; ``ip_info`` never has an anycast column).
* ``meta``      key/value settings, including stored analysis parameters.

Timestamps are UTC epoch seconds.
"""

from __future__ import annotations

import csv
import datetime as dt
import ipaddress
import json
import logging
import sqlite3
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .enrichment import (
    IpProfile, LabelCount, PrivacyKeywords, apply_flags, canonical_ip, parse_bool,
    privacy_heuristic, FlagList,
)
from .magnet import InfoHash, MagnetError, parse_magnet
from .places import InterestRules, PlaceTable, clean_text
from .tracker_client import PeerObservation

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SCHEMA = """
CREATE TABLE meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
CREATE TABLE tor_info (
    info_hash TEXT PRIMARY KEY CHECK (length(info_hash) = 40),
    title TEXT NOT NULL,
    category TEXT NOT NULL DEFAULT '',
    subcategory TEXT NOT NULL DEFAULT '',
    uploaded_at TEXT,
    size_bytes INTEGER NOT NULL DEFAULT 0 CHECK (size_bytes >= 0),
    seeders INTEGER NOT NULL DEFAULT 0 CHECK (seeders >= 0),
    leechers INTEGER NOT NULL DEFAULT 0 CHECK (leechers >= 0),
    uploader TEXT NOT NULL DEFAULT '',
    magnet TEXT NOT NULL DEFAULT '',
    interest_category TEXT
);
CREATE TABLE ip_info (
    ip TEXT PRIMARY KEY,
    ip_num INTEGER NOT NULL,
    city TEXT, region TEXT, country TEXT, isp TEXT, org TEXT, as_number TEXT,
    latitude REAL CHECK (latitude BETWEEN -90 AND 90),
    longitude REAL CHECK (longitude BETWEEN -180 AND 180),
    hostname TEXT,
    provider_privacy INTEGER NOT NULL DEFAULT 0,
    privacy INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE ip_flag (
    ip TEXT NOT NULL REFERENCES ip_info(ip),
    label TEXT NOT NULL,
    PRIMARY KEY (ip, label)
);
CREATE TABLE hash_ip (
    info_hash TEXT NOT NULL REFERENCES tor_info(info_hash),
    ip TEXT NOT NULL REFERENCES ip_info(ip),
    first_seen REAL NOT NULL,
    last_seen REAL NOT NULL,
    observation_count INTEGER NOT NULL CHECK (observation_count >= 1),
    PRIMARY KEY (info_hash, ip),
    CHECK (first_seen <= last_seen)
);
CREATE INDEX hash_ip_by_ip ON hash_ip(ip);
CREATE TABLE observation (
    info_hash TEXT NOT NULL,
    ip TEXT NOT NULL,
    port INTEGER NOT NULL,
    seen_at REAL NOT NULL,
    PRIMARY KEY (info_hash, ip, port, seen_at)
);
CREATE TABLE provider_raw (
    ip TEXT NOT NULL,
    provider TEXT NOT NULL,
    payload TEXT NOT NULL,
    PRIMARY KEY (ip, provider)
);
"""

TORRENT_COLUMNS = ("info_hash", "title", "category", "subcategory", "uploaded_at",
                   "size_bytes", "seeders", "leechers", "uploader", "magnet",
                   "interest_category")
IP_COLUMNS = ("ip", "city", "region", "country", "isp", "org", "as_number", "latitude",
              "longitude", "hostname", "provider_privacy", "privacy")
LINK_COLUMNS = ("info_hash", "ip", "first_seen", "last_seen", "observation_count")
QUERY_KINDS = ("torrents_by_keyword", "torrents_by_uploader", "ips_by_torrent",
               "torrents_by_ip", "ips_with_min_links", "flagged_ips", "category_counts",
               "isp_counts", "country_counts")


class StoreError(Exception):
    pass


class SchemaMismatch(StoreError):
    pass


class FormatError(StoreError, ValueError):
    pass


class UnknownKind(StoreError, ValueError):
    pass


class UnknownHash(StoreError, KeyError):
    pass


@dataclass(frozen=True)
class TorrentRecord:
    info_hash: InfoHash
    title: str
    category: str = ""
    subcategory: str = ""
    uploaded_at: dt.date | None = None
    size_bytes: int = 0
    seeders: int = 0
    leechers: int = 0
    uploader: str = ""
    magnet: str = ""
    interest_category: str | None = None


@dataclass(frozen=True)
class HashIpLink:
    info_hash: str
    ip: str
    first_seen: float
    last_seen: float
    observation_count: int


@dataclass
class IngestCounts:
    inserted: int = 0
    updated: int = 0
    unchanged: int = 0
    rejected: int = 0
    reasons: list[tuple[int, str]] = field(default_factory=list)

    def reject(self, row: int, reason: str) -> None:
        self.rejected += 1
        self.reasons.append((row, reason))


@dataclass
class ObservationCounts:
    links_created: int = 0
    links_updated: int = 0
    duplicates: int = 0
    ips_created: int = 0
    rejected: int = 0
    unknown_hashes: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class Change:
    table: str
    key: str
    field: str
    old: Any
    new: Any


@dataclass
class NormalizeReport:
    changes: list[Change] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.changes)

    def __len__(self) -> int:
        return len(self.changes)

    def by_field(self) -> Counter:
        return Counter(c.field for c in self.changes)


@dataclass
class AuditReport:
    problems: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.problems


def _parse_int(value, name: str) -> int:
    if value is None or str(value).strip() == "":
        return 0
    try:
        n = int(str(value).strip().replace(",", ""))
    except ValueError as exc:
        raise FormatError(f"{name} is not an integer: {value!r}") from exc
    if n < 0:
        raise FormatError(f"{name} is negative: {n}")
    return n


def _parse_date(value) -> dt.date | None:
    text = clean_text(value)
    if text is None:
        return None
    try:
        return dt.date.fromisoformat(text[:10])
    except ValueError as exc:
        raise FormatError(f"uploaded_at is not an ISO date: {value!r}") from exc


def parse_torrent_row(row: Mapping[str, Any], rules: InterestRules | None = None
                      ) -> TorrentRecord:
    """Validate one torrent interchange row (column names as ``TORRENT_COLUMNS``)."""
    title = clean_text(row.get("title"))
    if title is None:
        raise FormatError("title is empty")
    magnet = clean_text(row.get("magnet")) or ""
    from_magnet = None
    if magnet:
        try:
            from_magnet = parse_magnet(magnet).info_hash
        except MagnetError as exc:
            raise FormatError(f"bad magnet: {exc}") from exc
    raw_hash = clean_text(row.get("info_hash"))
    try:
        info_hash = InfoHash.from_text(raw_hash) if raw_hash else from_magnet
    except MagnetError as exc:
        raise FormatError(str(exc)) from exc
    if info_hash is None:
        raise FormatError("no info_hash and no magnet")
    if from_magnet is not None and from_magnet != info_hash:
        raise FormatError("info_hash disagrees with magnet")
    category = clean_text(row.get("category")) or ""
    uploader = clean_text(row.get("uploader")) or ""
    interest = clean_text(row.get("interest_category"))
    if interest is None and rules is not None:
        interest = rules.classify(title, category, uploader)
    return TorrentRecord(
        info_hash=info_hash,
        title=title,
        category=category,
        subcategory=clean_text(row.get("subcategory")) or "",
        uploaded_at=_parse_date(row.get("uploaded_at")),
        size_bytes=_parse_int(row.get("size_bytes"), "size_bytes"),
        seeders=_parse_int(row.get("seeders"), "seeders"),
        leechers=_parse_int(row.get("leechers"), "leechers"),
        uploader=uploader,
        magnet=magnet,
        interest_category=interest,
    )


def _ip_num(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def _row_to_profile(row: sqlite3.Row, flags: set[str]) -> IpProfile:
    return IpProfile(
        ip=row["ip"], city=row["city"], region=row["region"], country=row["country"],
        isp=row["isp"], org=row["org"], as_number=row["as_number"], latitude=row["latitude"],
        longitude=row["longitude"], hostname=row["hostname"],
        provider_privacy=bool(row["provider_privacy"]), privacy=bool(row["privacy"]),
        flags=flags,
    )


class Store:
    """Open (creating if needed) a dataset file. ``":memory:"`` gives a scratch store.

    Writes are serialized; reads go through the same connection under a lock.
    """

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA foreign_keys = ON")
        if self.path != ":memory:":
            self._conn.execute("PRAGMA journal_mode = WAL")
        self._init_schema()

    def _init_schema(self) -> None:
        version = self._conn.execute("PRAGMA user_version").fetchone()[0]
        tables = self._conn.execute(
            "SELECT count(*) FROM sqlite_master WHERE type='table'").fetchone()[0]
        if version == 0 and tables == 0:
            with self._write() as c:
                for stmt in SCHEMA.split(";"):
                    if stmt.strip():
                        c.execute(stmt)
                c.execute("INSERT INTO meta VALUES ('schema_version', ?)", (str(SCHEMA_VERSION),))
                c.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")
        elif version != SCHEMA_VERSION:
            raise SchemaMismatch(f"{self.path}: schema version {version}, "
                                 f"expected {SCHEMA_VERSION}")

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> Store:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @contextmanager
    def _write(self) -> Iterator[sqlite3.Connection]:
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                yield self._conn
            except BaseException:
                self._conn.execute("ROLLBACK")
                raise
            self._conn.execute("COMMIT")

    def _read(self, sql: str, params: Iterable = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, tuple(params)).fetchall()

    def select(self, sql: str, params: Iterable = ()) -> list[tuple]:
        """Run a read-only statement (used by independent audit passes)."""
        if not sql.lstrip().upper().startswith(("SELECT", "WITH")):
            raise StoreError("select() only runs SELECT statements")
        return [tuple(r) for r in self._read(sql, params)]

    # -- meta ---------------------------------------------------------------

    def get_meta(self, key: str, default: Any = None) -> Any:
        rows = self._read("SELECT value FROM meta WHERE key = ?", (key,))
        if not rows:
            return default
        try:
            return json.loads(rows[0][0])
        except json.JSONDecodeError:
            return rows[0][0]

    def set_meta(self, key: str, value: Any) -> None:
        with self._write() as c:
            c.execute("INSERT INTO meta VALUES (?, ?) ON CONFLICT(key) DO UPDATE SET "
                      "value = excluded.value", (key, json.dumps(value, sort_keys=True)))

    # -- torrents -----------------------------------------------------------

    def ingest_torrents(self, source: str | Path | Iterable[Mapping[str, Any]],
                        rules: InterestRules | None = None) -> IngestCounts:
        """Upsert torrent rows by info-hash.

        Re-ingesting a known torrent updates seeders/leechers only; a different
        title for the same hash is rejected.
        """
        if isinstance(source, (str, Path)):
            with Path(source).open(newline="") as fh:
                rows = list(csv.DictReader(fh))
        else:
            rows = list(source)
        counts = IngestCounts()
        with self._write() as c:
            for lineno, row in enumerate(rows, start=1):
                try:
                    rec = parse_torrent_row(row, rules)
                except FormatError as exc:
                    counts.reject(lineno, str(exc))
                    continue
                key = rec.info_hash.hex()
                old = c.execute("SELECT title, seeders, leechers FROM tor_info WHERE info_hash=?",
                                (key,)).fetchone()
                if old is None:
                    c.execute(
                        f"INSERT INTO tor_info ({', '.join(TORRENT_COLUMNS)}) "
                        f"VALUES ({', '.join('?' * len(TORRENT_COLUMNS))})",
                        (key, rec.title, rec.category, rec.subcategory,
                         rec.uploaded_at.isoformat() if rec.uploaded_at else None,
                         rec.size_bytes, rec.seeders, rec.leechers, rec.uploader, rec.magnet,
                         rec.interest_category))
                    counts.inserted += 1
                elif old["title"] != rec.title:
                    counts.reject(lineno, f"title mismatch for {key}")
                elif (old["seeders"], old["leechers"]) != (rec.seeders, rec.leechers):
                    c.execute("UPDATE tor_info SET seeders=?, leechers=? WHERE info_hash=?",
                              (rec.seeders, rec.leechers, key))
                    counts.updated += 1
                else:
                    counts.unchanged += 1
        for lineno, reason in counts.reasons:
            log.warning("torrent row %d rejected: %s", lineno, reason)
        return counts

    def torrents(self, hashes: Iterable[str] | None = None) -> list[TorrentRecord]:
        rows = self._read("SELECT * FROM tor_info ORDER BY info_hash")
        wanted = set(hashes) if hashes is not None else None
        out = []
        for r in rows:
            if wanted is not None and r["info_hash"] not in wanted:
                continue
            out.append(TorrentRecord(
                info_hash=InfoHash.from_text(r["info_hash"]), title=r["title"],
                category=r["category"], subcategory=r["subcategory"],
                uploaded_at=dt.date.fromisoformat(r["uploaded_at"]) if r["uploaded_at"] else None,
                size_bytes=r["size_bytes"], seeders=r["seeders"], leechers=r["leechers"],
                uploader=r["uploader"], magnet=r["magnet"],
                interest_category=r["interest_category"]))
        return out

    # -- observations -------------------------------------------------------

    def record_observations(self, observations: Iterable[PeerObservation]) -> ObservationCounts:
        """Fold peer sightings into ``hash_ip``; unseen IPs get skeleton rows."""
        counts = ObservationCounts()
        with self._write() as c:
            known = {r[0] for r in c.execute("SELECT info_hash FROM tor_info")}
            for o in observations:
                key = InfoHash(o.info_hash).hex()
                if key not in known:
                    counts.rejected += 1
                    counts.unknown_hashes.add(key)
                    continue
                ip = canonical_ip(o.ip)
                ts = float(o.timestamp)
                cur = c.execute("INSERT OR IGNORE INTO observation VALUES (?, ?, ?, ?)",
                                (key, ip, int(o.port), ts))
                if cur.rowcount == 0:
                    counts.duplicates += 1
                    continue
                cur = c.execute("INSERT OR IGNORE INTO ip_info (ip, ip_num) VALUES (?, ?)",
                                (ip, _ip_num(ip)))
                counts.ips_created += cur.rowcount
                cur = c.execute("INSERT OR IGNORE INTO hash_ip VALUES (?, ?, ?, ?, 1)",
                                (key, ip, ts, ts))
                if cur.rowcount:
                    counts.links_created += 1
                else:
                    c.execute(
                        "UPDATE hash_ip SET first_seen = min(first_seen, ?), "
                        "last_seen = max(last_seen, ?), observation_count = observation_count + 1 "
                        "WHERE info_hash = ? AND ip = ?", (ts, ts, key, ip))
                    counts.links_updated += 1
        if counts.rejected:
            log.warning("%d observations reference %d unknown torrents", counts.rejected,
                        len(counts.unknown_hashes))
        return counts

    def links(self) -> list[HashIpLink]:
        rows = self._read(f"SELECT {', '.join(LINK_COLUMNS)} FROM hash_ip "
                          "ORDER BY info_hash, ip")
        return [HashIpLink(*r) for r in rows]

    def links_per_ip(self) -> dict[str, int]:
        """Distinct torrent links per IP, including IPs with none."""
        rows = self._read("SELECT i.ip, count(h.info_hash) FROM ip_info i "
                          "LEFT JOIN hash_ip h ON h.ip = i.ip GROUP BY i.ip")
        return {r[0]: r[1] for r in rows}

    def link_stats(self) -> tuple[float, int]:
        """(mean, max) distinct torrent links per IP."""
        per_ip = self.links_per_ip()
        if not per_ip:
            return 0.0, 0
        return sum(per_ip.values()) / len(per_ip), max(per_ip.values())

    # -- profiles -----------------------------------------------------------

    def ips(self) -> list[str]:
        return [r[0] for r in self._read("SELECT ip FROM ip_info ORDER BY ip_num")]

    def profiles(self, ips: Iterable[str] | None = None) -> list[IpProfile]:
        flags: dict[str, set[str]] = {}
        for ip, label in self._read("SELECT ip, label FROM ip_flag"):
            flags.setdefault(ip, set()).add(label)
        rows = self._read("SELECT * FROM ip_info ORDER BY ip_num")
        wanted = set(ips) if ips is not None else None
        return [_row_to_profile(r, flags.get(r["ip"], set())) for r in rows
                if wanted is None or r["ip"] in wanted]

    def upsert_profiles(self, profiles: Iterable[IpProfile],
                        raw: Mapping[str, Mapping[str, Any]] | None = None) -> int:
        """Write profile fields (flags are only ever added). Returns rows written."""
        n = 0
        with self._write() as c:
            for p in profiles:
                ip = canonical_ip(p.ip)
                values = (p.city, p.region, p.country, p.isp, p.org, p.as_number, p.latitude,
                          p.longitude, p.hostname, int(p.provider_privacy), int(p.privacy))
                c.execute(
                    "INSERT INTO ip_info (ip, ip_num, city, region, country, isp, org, as_number, "
                    "latitude, longitude, hostname, provider_privacy, privacy) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?) ON CONFLICT(ip) DO UPDATE SET "
                    "city=excluded.city, region=excluded.region, country=excluded.country, "
                    "isp=excluded.isp, org=excluded.org, as_number=excluded.as_number, "
                    "latitude=excluded.latitude, longitude=excluded.longitude, "
                    "hostname=excluded.hostname, provider_privacy=excluded.provider_privacy, "
                    "privacy=excluded.privacy", (ip, _ip_num(ip), *values))
                c.executemany("INSERT OR IGNORE INTO ip_flag VALUES (?, ?)",
                              [(ip, f) for f in sorted(p.flags)])
                n += 1
            for ip, by_provider in (raw or {}).items():
                for provider, payload in by_provider.items():
                    c.execute("INSERT INTO provider_raw VALUES (?, ?, ?) ON CONFLICT(ip, provider) "
                              "DO UPDATE SET payload = excluded.payload",
                              (ip, provider, json.dumps(payload, sort_keys=True, default=str)))
        return n

    def import_ip_info(self, path: str | Path) -> tuple[int, list[str]]:
        """Load an ``ip_info`` CSV. Unknown columns (e.g. anycast) are ignored and reported."""
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            ignored = [c for c in (reader.fieldnames or []) if c not in IP_COLUMNS + ("flags",)]
            profiles = []
            for row in reader:
                lat, lon = row.get("latitude"), row.get("longitude")
                profiles.append(IpProfile(
                    ip=canonical_ip(row["ip"]),
                    **{k: clean_text(row.get(k)) for k in
                       ("city", "region", "country", "isp", "org", "as_number", "hostname")},
                    latitude=float(lat) if clean_text(lat) else None,
                    longitude=float(lon) if clean_text(lon) else None,
                    provider_privacy=bool(parse_bool(row.get("provider_privacy"))),
                    privacy=bool(parse_bool(row.get("privacy"))),
                    flags={f for f in (row.get("flags") or "").split(";") if f},
                ))
        return self.upsert_profiles(profiles), ignored

    def apply_flag_lists(self, lists: Iterable[FlagList]) -> dict[str, LabelCount]:
        profiles, summary = apply_flags(self.profiles(), lists)
        with self._write() as c:
            c.executemany("INSERT OR IGNORE INTO ip_flag VALUES (?, ?)",
                          [(p.ip, f) for p in profiles for f in sorted(p.flags)])
        return summary

    # -- normalization ------------------------------------------------------

    def normalize(self, places: PlaceTable | None = None,
                  keywords: PrivacyKeywords | None = None) -> NormalizeReport:
        """Standardize text fields and recompute privacy; returns every change made."""
        places = places or PlaceTable.load()
        report = NormalizeReport()
        rows = self._read("SELECT * FROM ip_info ORDER BY ip_num")
        new: dict[str, dict[str, Any]] = {}
        for r in rows:
            cur = dict(r)
            for name in ("isp", "org"):
                value = clean_text(cur[name])
                cur[name] = value.lower() if value else None
            for name in ("region", "as_number", "hostname"):
                cur[name] = clean_text(cur[name])
            cur["country"] = places.country(cur["country"])
            cur["city"] = places.city(cur["city"], cur["region"], cur["country"])
            new[r["ip"]] = cur
        merges = places.merge_case_variants(
            [(v["city"], v["region"], v["country"]) for v in new.values() if v["city"]])
        for v in new.values():
            if v["city"]:
                v["city"] = merges.get((v["city"], v["region"], v["country"]), v["city"])
            v["privacy"] = int(bool(v["provider_privacy"]) or privacy_heuristic(
                v["isp"], v["org"], v["as_number"], keywords))

        fields = ("city", "region", "country", "isp", "org", "as_number", "hostname", "privacy")
        with self._write() as c:
            for r in rows:
                cur = new[r["ip"]]
                diff = {f: cur[f] for f in fields if cur[f] != r[f]}
                if not diff:
                    continue
                for f, value in diff.items():
                    report.changes.append(Change("ip_info", r["ip"], f, r[f], value))
                c.execute(f"UPDATE ip_info SET {', '.join(f'{f} = ?' for f in diff)} WHERE ip = ?",
                          (*diff.values(), r["ip"]))
            cols = [row[1] for row in c.execute("PRAGMA table_info(ip_info)")]
            if "anycast" in cols:
                c.execute("ALTER TABLE ip_info DROP COLUMN anycast")
                report.changes.append(Change("ip_info", "*", "anycast", "column", None))
        return report

    # -- queries ------------------------------------------------------------

    def query(self, kind: str, **params) -> list[dict[str, Any]]:
        """Run a named query. Sort keys are fixed per kind so output is reproducible.

        ===================== ========================= =============================
        kind                  params                    order
        ===================== ========================= =============================
        torrents_by_keyword   keyword                   title (casefold), info_hash
        torrents_by_uploader  uploader                  title (casefold), info_hash
        ips_by_torrent        info_hash                 numeric ip
        torrents_by_ip        ip                        title (casefold), info_hash
        ips_with_min_links    n                         links desc, numeric ip
        flagged_ips           label                     numeric ip
        category_counts       -                         count desc, name
        isp_counts            -                         count desc, name
        country_counts        -                         count desc, name
        ===================== ========================= =============================
        """
        by_title = "ORDER BY lower(title), info_hash"
        if kind == "torrents_by_keyword":
            kw = str(params["keyword"]).lower()
            rows = self._read(f"SELECT * FROM tor_info WHERE instr(lower(title), ?) > 0 {by_title}",
                              (kw,))
        elif kind == "torrents_by_uploader":
            rows = self._read(f"SELECT * FROM tor_info WHERE lower(uploader) = lower(?) {by_title}",
                              (params["uploader"],))
        elif kind == "ips_by_torrent":
            key = InfoHash.from_text(str(params["info_hash"])).hex()
            rows = self._read("SELECT i.ip, h.first_seen, h.last_seen, h.observation_count "
                              "FROM hash_ip h JOIN ip_info i ON i.ip = h.ip "
                              "WHERE h.info_hash = ? ORDER BY i.ip_num", (key,))
        elif kind == "torrents_by_ip":
            rows = self._read(f"SELECT t.* FROM tor_info t JOIN hash_ip h ON h.info_hash = "
                              f"t.info_hash WHERE h.ip = ? {by_title}".replace(
                                  "lower(title), info_hash", "lower(t.title), t.info_hash"),
                              (canonical_ip(params["ip"]),))
        elif kind == "ips_with_min_links":
            rows = self._read("SELECT i.ip, count(*) AS links FROM hash_ip h JOIN ip_info i "
                              "ON i.ip = h.ip GROUP BY i.ip HAVING count(*) >= ? "
                              "ORDER BY links DESC, i.ip_num", (int(params["n"]),))
        elif kind == "flagged_ips":
            rows = self._read("SELECT i.ip FROM ip_flag f JOIN ip_info i ON i.ip = f.ip "
                              "WHERE f.label = ? ORDER BY i.ip_num", (params["label"],))
        elif kind in ("category_counts", "isp_counts", "country_counts"):
            table, col = {"category_counts": ("tor_info", "category"),
                          "isp_counts": ("ip_info", "isp"),
                          "country_counts": ("ip_info", "country")}[kind]
            rows = self._read(f"SELECT {col} AS name, count(*) AS count FROM {table} "
                              f"WHERE {col} IS NOT NULL AND {col} != '' GROUP BY {col} "
                              f"ORDER BY count DESC, name")
        else:
            raise UnknownKind(f"unknown query kind {kind!r}; expected one of {QUERY_KINDS}")
        return [dict(r) for r in rows]

    def counts(self) -> dict[str, int]:
        out = {}
        for table in ("tor_info", "ip_info", "hash_ip", "observation", "ip_flag"):
            out[table] = self._read(f"SELECT count(*) FROM {table}")[0][0]
        return out

    # -- integrity ----------------------------------------------------------

    def audit(self) -> AuditReport:
        """Full scan for referential and aggregate consistency."""
        report = AuditReport(counts=self.counts())
        checks = {
            "hash_ip rows whose torrent is missing":
                "SELECT count(*) FROM hash_ip h LEFT JOIN tor_info t USING (info_hash) "
                "WHERE t.info_hash IS NULL",
            "hash_ip rows whose ip is missing":
                "SELECT count(*) FROM hash_ip h LEFT JOIN ip_info i USING (ip) WHERE i.ip IS NULL",
            "ip_flag rows whose ip is missing":
                "SELECT count(*) FROM ip_flag f LEFT JOIN ip_info i USING (ip) WHERE i.ip IS NULL",
            "observations without a link":
                "SELECT count(*) FROM observation o LEFT JOIN hash_ip h "
                "ON h.info_hash = o.info_hash AND h.ip = o.ip WHERE h.ip IS NULL",
            "links with first_seen > last_seen":
                "SELECT count(*) FROM hash_ip WHERE first_seen > last_seen",
            "links whose counts or bounds disagree with their observations":
                "SELECT count(*) FROM hash_ip h JOIN (SELECT info_hash, ip, count(*) AS n, "
                "min(seen_at) AS lo, max(seen_at) AS hi FROM observation GROUP BY info_hash, ip) o "
                "ON o.info_hash = h.info_hash AND o.ip = h.ip "
                "WHERE o.n != h.observation_count OR o.lo != h.first_seen OR o.hi != h.last_seen",
            "links with no observations":
                "SELECT count(*) FROM hash_ip h LEFT JOIN observation o "
                "ON o.info_hash = h.info_hash AND o.ip = h.ip WHERE o.ip IS NULL",
        }
        for label, sql in checks.items():
            n = self._read(sql)[0][0]
            if n:
                report.problems.append(f"{n} {label}")
        version = self._read("SELECT value FROM meta WHERE key = 'schema_version'")
        if not version or int(version[0][0]) != SCHEMA_VERSION:
            report.problems.append("schema_version header missing or wrong")
        return report

    # -- interchange --------------------------------------------------------

    def export(self, directory: str | Path) -> dict[str, Path]:
        """Write tor_info.csv, ip_info.csv (flags ';'-joined) and hash_ip.csv."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = {}
        path = out["tor_info"] = directory / "tor_info.csv"
        rows = self._read(f"SELECT {', '.join(TORRENT_COLUMNS)} FROM tor_info ORDER BY info_hash")
        _write_csv(path, TORRENT_COLUMNS, [tuple(r) for r in rows])
        path = out["ip_info"] = directory / "ip_info.csv"
        _write_csv(path, IP_COLUMNS + ("flags",), [
            (p.ip, p.city, p.region, p.country, p.isp, p.org, p.as_number, p.latitude,
             p.longitude, p.hostname, int(p.provider_privacy), int(p.privacy),
             ";".join(sorted(p.flags))) for p in self.profiles()])
        path = out["hash_ip"] = directory / "hash_ip.csv"
        _write_csv(path, LINK_COLUMNS, [tuple(r) for r in self._read(
            f"SELECT {', '.join(LINK_COLUMNS)} FROM hash_ip ORDER BY info_hash, ip")])
        return out


def _write_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(["" if v is None else v for v in row] for row in rows)
