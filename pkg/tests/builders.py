"""Synthetic datasets used across the test-suite.

``popular_dataset`` reproduces the published aggregate counts of the popular
torrent collection (IPs, flags, privacy, ISP and country tallies, link
aggregates). ``case_dataset`` is a small uploader case study whose content
network has the published shape: four title hubs at degree 9/21 and a fifth at
8/21, with one bridging pattern that gives the hubs equal betweenness.
"""

from __future__ import annotations

import csv
import hashlib
import ipaddress
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from swarmtrace.enrichment import IpProfile
from swarmtrace.magnet import InfoHash
from swarmtrace.tracker_client import PeerObservation

BASE_TIME = 1_707_350_400.0  # 2024-02-08T00:00:00Z


def info_hash_for(title: str) -> str:
    return hashlib.sha1(title.encode()).hexdigest()


def magnet_for(title: str, trackers: tuple[str, ...] = ()) -> str:
    from urllib.parse import quote

    tr = "".join(f"&tr={quote(t, safe='')}" for t in trackers)
    return f"magnet:?xt=urn:btih:{info_hash_for(title)}&dn={quote(title)}{tr}"


@dataclass
class Dataset:
    torrents: list[dict] = field(default_factory=list)
    links: list[tuple[str, str]] = field(default_factory=list)  # (info_hash, ip)
    profiles: list[IpProfile] = field(default_factory=list)
    flags: dict[str, set[str]] = field(default_factory=dict)

    def observations(self) -> list[PeerObservation]:
        return [PeerObservation(InfoHash.from_text(h), ip, 6881, BASE_TIME + i)
                for i, (h, ip) in enumerate(self.links)]

    def load(self, store) -> None:
        store.ingest_torrents(self.torrents)
        store.record_observations(self.observations())
        for p in self.profiles:
            p.flags = {label for label, members in self.flags.items() if p.ip in members}
        store.upsert_profiles(self.profiles)

    # files for the command-line pipeline
    def write_torrents(self, path: Path) -> None:
        cols = ["info_hash", "title", "category", "subcategory", "uploaded_at", "size_bytes",
                "seeders", "leechers", "uploader", "magnet"]
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, cols, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(self.torrents)

    def write_profiles(self, path: Path) -> None:
        cols = ["ip", "city", "region", "country", "isp", "org", "as_number", "latitude",
                "longitude", "hostname", "privacy"]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for p in self.profiles:
                w.writerow(["" if getattr(p, c) is None else getattr(p, c) for c in cols[:-1]]
                           + ["true" if p.provider_privacy else "false"])

    def write_flags(self, path: Path, label: str) -> None:
        members = sorted(self.flags.get(label, ()), key=lambda ip: int(ipaddress.IPv4Address(ip)))
        path.write_text(f"# label: {label}\n" + "".join(f"{ip}\n" for ip in members))

    def write_swarms(self, path: Path) -> None:
        peers: dict[str, list[str]] = {}
        for h, ip in self.links:
            peers.setdefault(h, []).append(f"{ip}:6881")
        lines = [json.dumps({"info_hash": t["info_hash"], "peers": peers.get(t["info_hash"], []),
                             "seeders": t["seeders"], "leechers": t["leechers"]})
                 for t in self.torrents]
        path.write_text("\n".join(lines) + "\n")


def torrent_row(title: str, category: str, uploader: str, day: int = 0,
                seeders: int = 10, leechers: int = 5) -> dict:
    return {"info_hash": info_hash_for(title), "title": title, "category": category,
            "subcategory": "", "uploaded_at": f"2024-02-{8 + day % 20:02d}",
            "size_bytes": 1_000_000 + len(title) * 1000, "seeders": seeders,
            "leechers": leechers, "uploader": uploader, "magnet": magnet_for(title)}


# -- popular-torrent aggregates -------------------------------------------------

POPULAR_IPS = 60_369
POPULAR_TORRENTS = 206
POPULAR_LINKS = 91_157  # mean 1.51 per IP
POPULAR_MAX_LINKS = 57
POPULAR_FLAGGED = 940
POPULAR_PRIVACY = 12_392
POPULAR_LEAST = 16_591
FLAGGED_PRIVACY = 713
FLAGGED_LEAST = 79
POPULAR_COUNTRIES = 213
MISSING_COUNTRY = 39

TOP_ISPS = [("datacamp limited", 1486), ("tefincom s.a.", 1315), ("m247 europe srl", 792),
            ("philippine long distance telephone co.", 785), ("chinanet", 768),
            ("claro nxt telecomunicacoes ltda", 694), ("cogent communications", 615),
            ("clouvider limited", 489), ("rcs & rds", 473), ("packethub s.a.", 462)]
TOP_ISP_PRIVACY = {"datacamp limited": 1471, "tefincom s.a.": 1315, "m247 europe srl": 760,
                   "philippine long distance telephone co.": 750, "chinanet": 735,
                   "claro nxt telecomunicacoes ltda": 0, "cogent communications": 590,
                   "clouvider limited": 470, "rcs & rds": 455, "packethub s.a.": 445}
TOP_COUNTRIES = [("United States", 5181), ("United Kingdom", 3263), ("Canada", 3037),
                 ("Brazil", 2835), ("South Africa", 2733), ("Australia", 2198),
                 ("Philippines", 1871), ("Netherlands", 1815), ("China", 1768),
                 ("Portugal", 1528)]


def _spread(total: int, buckets: int, cap: int, rng: random.Random) -> list[int]:
    """``buckets`` positive integers summing to ``total``, each at most ``cap``."""
    sizes = [1] * buckets
    left = total - buckets
    while left:
        i = rng.randrange(buckets)
        if sizes[i] < cap:
            sizes[i] += 1
            left -= 1
    return sizes


def popular_dataset(seed: int = 7) -> Dataset:
    rng = random.Random(seed)
    ds = Dataset()
    cats = ["Porn", "Video > Movies", "Video > TV shows", "Audio > Music", "Games > PC"]
    for i in range(POPULAR_TORRENTS):
        ds.torrents.append(torrent_row(f"Popular release {i:03d}", cats[i % len(cats)],
                                       f"uploader{i % 17:02d}", day=i))
    hashes = [t["info_hash"] for t in ds.torrents]
    base = int(ipaddress.IPv4Address("11.0.0.1"))
    ips = [str(ipaddress.IPv4Address(base + i * 7)) for i in range(POPULAR_IPS)]

    # ISP tallies: the ten published ones, the rest spread thin
    isp_of: list[str] = []
    for name, n in TOP_ISPS:
        isp_of += [name] * n
    rest = POPULAR_IPS - len(isp_of)
    sizes = _spread(rest, 300, 400, rng)
    for j, n in enumerate(sizes):
        isp_of += [f"regional telecom {j:03d}"] * n
    rng.shuffle(isp_of)

    countries: list[str | None] = []
    for name, n in TOP_COUNTRIES:
        countries += [name] * n
    others = POPULAR_COUNTRIES - len(TOP_COUNTRIES)
    sizes = _spread(POPULAR_IPS - MISSING_COUNTRY - len(countries), others, 1500, rng)
    for j, n in enumerate(sizes):
        countries += [f"Country {j:03d}"] * n
    countries += [None] * MISSING_COUNTRY
    rng.shuffle(countries)

    # privacy: published ISP-level rates first, the remainder from generic ISPs
    privacy = [False] * POPULAR_IPS
    by_isp: dict[str, list[int]] = {}
    for i, name in enumerate(isp_of):
        by_isp.setdefault(name, []).append(i)
    for name, n in TOP_ISP_PRIVACY.items():
        for i in by_isp[name][:n]:
            privacy[i] = True
    generic = [i for i, name in enumerate(isp_of) if name.startswith("regional")]
    need = POPULAR_PRIVACY - sum(privacy)
    for i in rng.sample(generic, need):
        privacy[i] = True
    plain = [i for i in range(POPULAR_IPS) if not privacy[i]]
    rng.shuffle(plain)
    least = set(plain[:POPULAR_LEAST])

    priv_idx = [i for i in range(POPULAR_IPS) if privacy[i]]
    datacamp_priv = [i for i in by_isp["datacamp limited"] if privacy[i]]
    flagged = set(datacamp_priv[:116])  # 7.81% of datacamp IPs
    flagged |= set(rng.sample([i for i in priv_idx if i not in flagged],
                              FLAGGED_PRIVACY - len(flagged)))
    flagged |= set(rng.sample(sorted(least), FLAGGED_LEAST))
    named = [i for i in plain if i not in least]
    flagged |= set(rng.sample(named, POPULAR_FLAGGED - len(flagged)))
    ds.flags["cem"] = {ips[i] for i in flagged}

    for i, ip in enumerate(ips):
        ds.profiles.append(IpProfile(
            ip=ip, country=countries[i], isp=isp_of[i],
            hostname=None if (i in least or privacy[i]) else f"cpe-{i}.example.net",
            latitude=round(rng.uniform(-50, 60), 5), longitude=round(rng.uniform(-120, 150), 5),
            provider_privacy=privacy[i], privacy=privacy[i]))

    # links: everyone downloads one torrent, one IP reaches the published maximum
    extras = [0] * POPULAR_IPS
    extras[0] = POPULAR_MAX_LINKS - 1
    left = POPULAR_LINKS - POPULAR_IPS - extras[0]
    while left:
        i = rng.randrange(1, POPULAR_IPS)
        if extras[i] < 5:
            extras[i] += 1
            left -= 1
    for i, ip in enumerate(ips):
        for h in rng.sample(hashes, 1 + extras[i]):
            ds.links.append((h, ip))
    return ds


# -- uploader case study --------------------------------------------------------

CASE_UPLOADER = "crwildman"
CORE_TITLES = [
    "A Guide to Field Manufactured Explosives.pdf",
    "Cia Explosives for Sabotage Manual.pdf",
    "Explosives and Poisons Guide",
    "Explosives and Weapons - Homebuilt Claymore Mines",
    "Guerrillas.Arsenal.How.to.make.IED.and.Bombs",
    "How to Make - Astrolite and sodium chlorate explosives.pdf",
    "Kitchen Improvised Fertilizer Explosives",
    "Making Plastic Explosives.pdf",
    "MILITARY Explosives Chemistry Must Have Ebook",
    "Survivalist Engineering Explosives and Demolitions",
]
POPULAR_EXTRA = ["Aquaman.and.the.Lost.Kingdom.2023.1080p.WEBRip.1400MB.DD5.1.x264",
                 "Halo S02E01 1080p WEB h264-ETHEL"]
PAIR_TITLES = [
    ("Wilderness Survival Handbook", "Urban Evasion Field Notes"),
    ("Close Quarters Combat Techniques", "Knife Fighting Basics"),
    ("Lock Picking Illustrated", "Safe Manipulation Primer"),
    ("Improvised Shelters", "Bushcraft Water Purification"),
    ("Chemical Supplier List 1998", "Home Lab Reagent Sourcing"),
    ("Guerrilla Warfare Field Guide", "Sabotage Ops Manual"),
]
ISOLATED_TITLES = [
    "Combat Techniques of the Special Forces", "Pickpocketing for Magicians",
    "Anarchist Cookbook Revisited", "Assassination Methods Archive",
    "Cannibal Tribes of the Pacific", "Evasion and Escape Manual",
    "Military Map Reading", "Field Interrogation Handbook", "CIA Psychological Operations",
    "Silent Killing Guide", "Booby Traps Manual", "Survival Poaching",
    "Covert Surveillance Techniques", "Ranger Handbook",
]
UNSEEN_TITLES = [f"Obscure Manual Volume {i:02d}" for i in range(1, 24)]

# (country, IPs, downloads) as published for the case study: 19 countries
CASE_COUNTRIES = [("United States", 12), ("India", 2), ("Canada", 5), ("China", 3),
                  ("Netherlands", 3), ("Greece", 2), ("Poland", 2), ("South Africa", 2),
                  ("Germany", 1), ("France", 1), ("Brazil", 1), ("Australia", 1), ("Japan", 1),
                  ("Mexico", 1), ("Spain", 1), ("Italy", 1), ("Sweden", 1), ("Turkey", 1),
                  ("Argentina", 1)]
COUNTRY_COORDS = {
    "United States": (39.8, -98.6), "India": (20.6, 78.9), "Canada": (56.1, -106.3),
    "China": (35.9, 104.2), "Netherlands": (52.1, 5.3), "Greece": (39.1, 21.8),
    "Poland": (51.9, 19.1), "South Africa": (-30.6, 22.9), "Germany": (51.2, 10.5),
    "France": (46.2, 2.2), "Brazil": (-14.2, -51.9), "Australia": (-25.3, 133.8),
    "Japan": (36.2, 138.3), "Mexico": (23.6, -102.6), "Spain": (40.5, -3.7),
    "Italy": (41.9, 12.6), "Sweden": (60.1, 18.6), "Turkey": (38.9, 35.2),
    "Argentina": (-38.4, -63.6),
}
MUMBAI = (19.07601, 72.87765)


def case_dataset(with_popular_network: bool = True) -> Dataset:
    ds = Dataset()
    for i, t in enumerate(CORE_TITLES + [t for pair in PAIR_TITLES for t in pair]
                          + ISOLATED_TITLES + UNSEEN_TITLES):
        ds.torrents.append(torrent_row(t, "Other > E-books", CASE_UPLOADER, day=i))
    for i, t in enumerate(POPULAR_EXTRA):
        ds.torrents.append(torrent_row(t, "Video > Movies" if i == 0 else "Video > TV shows",
                                       "popular-uploader", day=i, seeders=900, leechers=300))
    h = {t["title"]: t["info_hash"] for t in ds.torrents}
    core = [h[t] for t in CORE_TITLES]

    # download sets, one entry per IP; countries are assigned after
    hub1 = [core[i] for i in (0, 1, 2, 3, 5, 6, 7, 8, 9)]
    hub2 = [core[i] for i in (0, 2, 3, 4, 6)]
    pairs = [[h[a], h[b]] for a, b in PAIR_TITLES]
    singles: list[list[str]] = []
    for idx, n in ((0, 2), (3, 2), (1, 2), (8, 3), (4, 1)):
        singles += [[core[idx]] for _ in range(n)]
    singles[-2].append(h[POPULAR_EXTRA[0]])  # a T9 downloader also took Aquaman
    singles[-1].append(h[POPULAR_EXTRA[1]])  # the T5 downloader also took Halo
    iso = [h[t] for t in ISOLATED_TITLES]
    singles += [[x] for x in iso]
    singles += [[iso[i]] for i in range(10)]
    assert len(singles) == 34

    # country assignment: hubs India, pairs 5 US + 1 Greece, singles by the table
    single_countries: list[str] = []
    for country, n in CASE_COUNTRIES:
        skip = {"United States": 5, "India": 2, "Greece": 1}.get(country, 0)
        single_countries += [country] * (n - skip)
    assert len(single_countries) == 34

    people: list[tuple[list[str], str]] = [(hub1, "India"), (hub2, "India")]
    people += [(p, "United States" if i < 5 else "Greece") for i, p in enumerate(pairs)]
    people += list(zip(singles, single_countries))
    assert len(people) == 42

    base = int(ipaddress.IPv4Address("203.0.113.0"))
    ips = [str(ipaddress.IPv4Address(base + 3 * i + 1)) for i in range(42)]
    privacy_quota = {"United States": 7, "Canada": 3, "Netherlands": 2, "Poland": 1,
                     "Germany": 1, "Sweden": 1}
    seen: dict[str, int] = {}
    least_left = 7
    for i, ((downloads, country), ip) in enumerate(zip(people, ips)):
        for x in downloads:
            ds.links.append((x, ip))
        k = seen.get(country, 0)
        seen[country] = k + 1
        priv = k < privacy_quota.get(country, 0) and i >= 2
        if i == 0:
            lat, lon, city = *MUMBAI, "Mumbai"
        elif i == 1:
            lat = lon = city = None  # located only to country level
        else:
            clat, clon = COUNTRY_COORDS[country]
            lat, lon, city = round(clat + 0.1 * k, 5), round(clon + 0.137 * k, 5), None
        hostname = None
        if not priv:
            if least_left and i >= 2 and country not in ("United States",):
                least_left -= 1
            else:
                hostname = f"host{i}.isp-{country.split()[0].lower()}.example"
        ds.profiles.append(IpProfile(
            ip=ip, city=city, country=country,
            isp=("m247 europe srl" if priv else f"{country.lower()} broadband"),
            latitude=lat, longitude=lon, hostname=hostname,
            provider_privacy=priv, privacy=priv))
    # flagged: a single on the first core title, one on a combat manual, one in NL
    first_of = {tuple(d): ip for (d, _), ip in reversed(list(zip(people, ips)))}
    nl = [ip for (_, c), ip in zip(people, ips) if c == "Netherlands"]
    ds.flags["cem"] = {first_of[(core[0],)],
                       first_of[(h["Combat Techniques of the Special Forces"],)], nl[-1]}
    assert len(ds.flags["cem"]) == 3

    if with_popular_network:
        _add_popular_network(ds)
    return ds


def _add_popular_network(ds: Dataset) -> None:
    """A separate adult-content swarm cluster for the co-download and flagged studies."""
    rng = random.Random(3)
    titles = [f"Adult release {i:02d}" for i in range(12)]
    for i, t in enumerate(titles):
        ds.torrents.append(torrent_row(t, "Porn", "studio-uploads", day=i,
                                       seeders=500, leechers=200))
    hashes = [info_hash_for(t) for t in titles]
    base = int(ipaddress.IPv4Address("198.51.100.0"))
    ips = [str(ipaddress.IPv4Address(base + 2 * i + 1)) for i in range(30)]
    cem = ds.flags.setdefault("cem", set())
    for i, ip in enumerate(ips):
        k = 9 if i < 10 else rng.randint(1, 6)
        for x in rng.sample(hashes, k):
            ds.links.append((x, ip))
        east = i % 3 == 0
        ds.profiles.append(IpProfile(
            ip=ip, country="South Korea" if east else "United Kingdom",
            latitude=37.29801 + 0.01 * i if east else 51.5 + 0.01 * i,
            longitude=127.07772 + 0.01 * i if east else -0.12 + 0.01 * i,
            isp="korea telecom" if east else "bt broadband",
            hostname=f"dsl-{i}.example.org", provider_privacy=i % 4 == 1,
            privacy=i % 4 == 1))
        if i in (1, 4, 12, 20):
            cem.add(ip)
