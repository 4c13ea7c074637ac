"""IP enrichment: pluggable metadata providers, privacy keyword heuristic, flag lists.

A provider is anything with a ``name``, a shared ``limiter`` and a
``lookup(ip) -> mapping | None`` method. Mapping keys are IpProfile field
names plus ``privacy`` (bool) and optionally ``anycast``; unknown keys are
kept only in the raw audit copy.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import logging
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .places import PlaceTable, clean_text
from .ratelimit import RateLimiter

log = logging.getLogger(__name__)

TEXT_FIELDS = ("city", "region", "country", "isp", "org", "as_number", "hostname")
LOWERCASE_FIELDS = ("isp", "org")

# "host" also covers "hosting"; "tor" must stand alone so "operator" stays clean
PRIVACY_SUBSTRINGS = ("cloud", "host", "data centre", "data center", "datacenter",
                      "private internet", "private network", "proxy", "vpn")
PRIVACY_WORDS = ("tor",)


def canonical_ip(text: str) -> str:
    return str(ipaddress.IPv4Address(str(text).strip()))


def ip_sort_key(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def parse_bool(value) -> bool | None:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return bool(value)
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "y", "t"):
        return True
    if text in ("0", "false", "no", "n", "f"):
        return False
    return None


@dataclass
class IpProfile:
    ip: str
    city: str | None = None
    region: str | None = None
    country: str | None = None
    isp: str | None = None
    org: str | None = None
    as_number: str | None = None
    latitude: float | None = None
    longitude: float | None = None
    hostname: str | None = None
    provider_privacy: bool = False
    privacy: bool = False
    flags: set[str] = field(default_factory=set)

    @property
    def has_coords(self) -> bool:
        return self.latitude is not None and self.longitude is not None

    @property
    def is_enriched(self) -> bool:
        return any(getattr(self, f) is not None for f in TEXT_FIELDS) or self.has_coords


@dataclass(frozen=True)
class PrivacyKeywords:
    substrings: tuple[str, ...] = PRIVACY_SUBSTRINGS
    words: tuple[str, ...] = PRIVACY_WORDS

    def extended(self, substrings: Iterable[str] = (), words: Iterable[str] = ()
                 ) -> PrivacyKeywords:
        return PrivacyKeywords(tuple(dict.fromkeys(self.substrings + tuple(substrings))),
                               tuple(dict.fromkeys(self.words + tuple(words))))

    def pattern(self) -> re.Pattern | None:
        parts = [r"\s*".join(map(re.escape, k.split())) for k in self.substrings if k.strip()]
        parts += [r"\b" + r"\s+".join(map(re.escape, k.split())) + r"\b"
                  for k in self.words if k.strip()]
        return re.compile("|".join(parts), re.IGNORECASE) if parts else None


DEFAULT_KEYWORDS = PrivacyKeywords()
_DEFAULT_PATTERN = DEFAULT_KEYWORDS.pattern()


def privacy_heuristic(isp: str | None, org: str | None = None, as_field: str | None = None,
                      keywords: PrivacyKeywords | None = None) -> bool:
    """True if any ISP/org/AS text carries a VPN, proxy or hosting keyword."""
    pattern = _DEFAULT_PATTERN if keywords is None else keywords.pattern()
    if pattern is None:
        return False
    return any(pattern.search(text) for text in (isp, org, as_field) if text)


# -- providers --------------------------------------------------------------


class ProviderError(Exception):
    pass


class Provider(Protocol):
    name: str
    limiter: RateLimiter

    def lookup(self, ip: str) -> Mapping[str, Any] | None: ...


class OfflineProvider:
    """Lookups from a local CSV or JSON Lines file keyed by ``ip``."""

    def __init__(self, source: str | Path | Mapping[str, Mapping[str, Any]],
                 name: str = "offline", rate: float | None = None):
        self.name = name
        self.limiter = RateLimiter(rate)
        if isinstance(source, Mapping):
            self.records = {canonical_ip(k): dict(v) for k, v in source.items()}
        else:
            self.records = {canonical_ip(r["ip"]): r for r in read_records(source)}

    def lookup(self, ip: str) -> Mapping[str, Any] | None:
        return self.records.get(ip)


def read_records(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        lines = path.read_text().splitlines()
        return [json.loads(line) for line in lines if line.strip()]
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


_INDEX_RE = re.compile(r"^(.*)\[(\d+)\]$")


def _extract(payload: Any, path: str) -> Any:
    value = payload
    for part in path.split("."):
        index = None
        m = _INDEX_RE.match(part)
        if m:
            part, index = m.group(1), int(m.group(2))
        if not isinstance(value, Mapping) or part not in value:
            return None
        value = value[part]
        if index is not None:
            if isinstance(value, str):
                value = value.split(",")
            if not isinstance(value, (list, tuple)) or index >= len(value):
                return None
            value = value[index]
    return value


PRESETS: dict[str, dict[str, Any]] = {
    "ip-api": {
        "url": "http://ip-api.com/json/{ip}?fields=status,message,country,regionName,city,"
               "lat,lon,isp,org,as,reverse,proxy,hosting",
        "fields": {"city": "city", "region": "regionName", "country": "country", "isp": "isp",
                   "org": "org", "as_number": "as", "latitude": "lat", "longitude": "lon",
                   "hostname": "reverse", "privacy": ["proxy", "hosting"]},
        "fail_when": {"status": "fail"},
        "rate": 0.75,
    },
    "ipinfo": {
        "url": "https://ipinfo.io/{ip}/json?token={api_key}",
        "fields": {"city": "city", "region": "region", "country": "country", "org": "org",
                   "as_number": "org", "latitude": "loc[0]", "longitude": "loc[1]",
                   "hostname": "hostname", "anycast": "anycast",
                   "privacy": ["privacy.vpn", "privacy.proxy", "privacy.tor", "privacy.relay",
                               "privacy.hosting"]},
        "api_key_env": "IPINFO_TOKEN",
        "rate": 1.0,
    },
}


class HttpJsonProvider:
    """Generic JSON-over-HTTP lookup.

    ``field_map`` maps profile fields to dotted paths in the response; a list of
    paths means "first non-empty" for text and "any true" for ``privacy``.
    ``name[i]`` indexes a list or a comma-separated string.
    """

    def __init__(self, name: str, url_template: str, field_map: Mapping[str, str | Sequence[str]],
                 *, api_key_env: str | None = None, rate: float | None = 1.0,
                 timeout: float = 10.0, fail_when: Mapping[str, Any] | None = None,
                 client: httpx.Client | None = None):
        self.name = name
        self.url_template = url_template
        self.field_map = dict(field_map)
        self.api_key_env = api_key_env
        self.fail_when = dict(fail_when or {})
        self.limiter = RateLimiter(rate)
        self.timeout = timeout
        self._client = client

    @classmethod
    def preset(cls, preset: str, **overrides) -> HttpJsonProvider:
        cfg = dict(PRESETS[preset])
        cfg.update(overrides)
        return cls(cfg.pop("name", preset), cfg.pop("url"), cfg.pop("fields"), **cfg)

    def _url(self, ip: str) -> str:
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        return self.url_template.format(ip=ip, api_key=key)

    def lookup(self, ip: str) -> Mapping[str, Any] | None:
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            resp = client.get(self._url(ip))
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ProviderError(f"{self.name}: {type(exc).__name__}") from exc
        finally:
            if self._client is None:
                client.close()
        if not isinstance(payload, Mapping):
            raise ProviderError(f"{self.name}: response is not a JSON object")
        if self.fail_when and all(payload.get(k) == v for k, v in self.fail_when.items()):
            return None
        out: dict[str, Any] = {"_response": payload}
        for target, paths in self.field_map.items():
            paths = [paths] if isinstance(paths, str) else list(paths)
            values = [_extract(payload, p) for p in paths]
            if target == "privacy":
                flags = [parse_bool(v) for v in values]
                if any(f is not None for f in flags):
                    out["privacy"] = any(f for f in flags if f)
            else:
                out[target] = next((v for v in values if v not in (None, "")), None)
        return out


# -- enrichment -------------------------------------------------------------


def _coord(value, bound: float) -> float | None:
    try:
        x = float(value)
    except (TypeError, ValueError):
        return None
    return x if -bound <= x <= bound else None


def merge_fields(profile: IpProfile, fields: Mapping[str, Any], places: PlaceTable) -> IpProfile:
    """Fill empty fields of ``profile`` from ``fields``; existing values win."""
    updates: dict[str, Any] = {}
    for name in TEXT_FIELDS:
        if getattr(profile, name) is not None:
            continue
        value = clean_text(fields.get(name))
        if value is None:
            continue
        if name in LOWERCASE_FIELDS:
            value = value.lower()
        elif name == "country":
            value = places.country(value)
        updates[name] = value
    if not profile.has_coords:
        lat = _coord(fields.get("latitude"), 90.0)
        lon = _coord(fields.get("longitude"), 180.0)
        if lat is not None and lon is not None:
            updates["latitude"], updates["longitude"] = lat, lon
    if parse_bool(fields.get("privacy")):
        updates["provider_privacy"] = True
    merged = replace(profile, **updates) if updates else replace(profile)
    merged.flags = set(profile.flags)
    return merged


def finalize_privacy(profile: IpProfile, keywords: PrivacyKeywords | None = None) -> IpProfile:
    profile.privacy = profile.provider_privacy or privacy_heuristic(
        profile.isp, profile.org, profile.as_number, keywords)
    return profile


@dataclass
class EnrichmentResult:
    profiles: list[IpProfile]
    raw: dict[str, dict[str, Any]] = field(default_factory=dict)
    failures: Counter = field(default_factory=Counter)
    all_failed: list[str] = field(default_factory=list)
    lookups: Counter = field(default_factory=Counter)


def enrich(ips: Iterable[str | IpProfile], providers: Sequence[Provider], *, workers: int = 4,
           keywords: PrivacyKeywords | None = None,
           places: PlaceTable | None = None) -> EnrichmentResult:
    """Build one IpProfile per input IP by field-level merge over ``providers``.

    The first provider to supply a non-empty value wins each field; ``privacy``
    is the OR of every provider's flag and the keyword heuristic. Passing
    existing profiles keeps their fields, so re-enrichment is a no-op.
    """
    if not providers:
        raise ValueError("at least one provider is required")
    places = places or PlaceTable.load()
    result = EnrichmentResult(profiles=[])
    seeds = [p if isinstance(p, IpProfile) else IpProfile(canonical_ip(p)) for p in ips]

    def one(seed: IpProfile) -> tuple[IpProfile, dict[str, Any], list[str], list[str]]:
        profile = seed
        raw: dict[str, Any] = {}
        failed, asked = [], []
        for provider in providers:
            provider.limiter.acquire()
            asked.append(provider.name)
            try:
                fields = provider.lookup(seed.ip)
            except ProviderError as exc:
                log.warning("provider %s failed for an address: %s", provider.name, exc)
                failed.append(provider.name)
                continue
            if fields is None:
                continue
            raw[provider.name] = {k: v for k, v in fields.items() if k != "_response"} | (
                {"response": fields["_response"]} if "_response" in fields else {})
            profile = merge_fields(profile, fields, places)
        return finalize_privacy(profile, keywords), raw, failed, asked

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for seed, (profile, raw, failed, asked) in zip(seeds, pool.map(one, seeds)):
            result.profiles.append(profile)
            result.lookups.update(asked)
            if raw:
                result.raw[profile.ip] = raw
            result.failures.update(failed)
            if failed and len(failed) == len(providers):
                result.all_failed.append(profile.ip)
    return result


# -- flag lists -------------------------------------------------------------


@dataclass(frozen=True)
class FlagList:
    label: str
    members: frozenset[str]

    def __contains__(self, ip: str) -> bool:
        return ip in self.members


_LABEL_RE = re.compile(r"^#\s*label\s*[:=]\s*(\S+)", re.IGNORECASE)


def load_flag_list(path: str | Path, label: str | None = None) -> FlagList:
    """Read one IP per line. The label comes from ``# label: x`` or the argument."""
    header_label = None
    members = set()
    skipped = 0
    for line in Path(path).read_text().splitlines():
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            m = _LABEL_RE.match(text)
            if m and header_label is None:
                header_label = m.group(1)
            continue
        try:
            members.add(canonical_ip(text.split()[0]))
        except ValueError:
            skipped += 1
    if skipped:
        log.warning("flag list %s: skipped %d unparseable lines", path, skipped)
    final = label or header_label
    if not final:
        raise ValueError(f"flag list {path} has no label header and none was given")
    return FlagList(final.lower(), frozenset(members))


@dataclass(frozen=True)
class LabelCount:
    count: int
    total: int

    @property
    def rate(self) -> float:
        return 100.0 * self.count / self.total if self.total else 0.0


def apply_flags(profiles: Iterable[IpProfile], lists: Iterable[FlagList]
                ) -> tuple[list[IpProfile], dict[str, LabelCount]]:
    """Add every matching label to each profile; never removes labels."""
    profiles = list(profiles)
    lists = list(lists)
    summary = {}
    for fl in lists:
        for p in profiles:
            if p.ip in fl.members:
                p.flags.add(fl.label)
    for label in sorted({fl.label for fl in lists}):
        count = sum(1 for p in profiles if label in p.flags)
        summary[label] = LabelCount(count, len(profiles))
    return profiles, summary
