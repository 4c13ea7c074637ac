"""``swarmtrace`` command line: one subcommand per pipeline stage.

Exit status: 0 success, 1 unexpected failure, 2 usage or config error,
3 bad input file, 4 store error, 5 store locked by another process,
6 network failure (nothing harvested / cannot bind), 7 every enrichment
lookup failed, 8 audit found problems.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Callable, Sequence

from filelock import FileLock, Timeout

from . import __version__
from . import graph as g
from .analysis import AnalysisParams, analyze
from .config import ConfigError, PipelineConfig, load_config
from .enrichment import (
    HttpJsonProvider, OfflineProvider, ProviderError, enrich as run_enrich, load_flag_list,
)
from .magnet import InfoHash, MagnetError, MagnetLink, parse_magnet, tracker_endpoint
from .mock_tracker import BindFailure, FaultProfile, MockTracker, load_fixtures
from .places import InterestRules, PlaceTable
from .report import (
    Pseudonymizer, ReportOptions, render_report, scrub_addresses, self_audit,
)
from .store import FormatError, Store, StoreError
from .tracker_client import (
    AnnounceParams, HarvestSchedule, PeerObservation, RetryPolicy, harvest_swarms,
)

log = logging.getLogger("swarmtrace")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_STORE = 4
EXIT_LOCKED = 5
EXIT_NETWORK = 6
EXIT_PROVIDER = 7
EXIT_AUDIT = 8

OBSERVATION_COLUMNS = ("info_hash", "ip", "port", "timestamp")


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _out(text: str) -> None:
    print(text, flush=True)


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _places(cfg: PipelineConfig) -> PlaceTable:
    return PlaceTable.load(cfg.resolve(cfg.places) if cfg.places else None)


def _analysis_params(cfg: PipelineConfig) -> AnalysisParams:
    return AnalysisParams(
        min_links=cfg.min_links, top_fraction=cfg.top_fraction, top_k=cfg.top_k,
        flag_label=cfg.flag_label, flag_categories=cfg.flag_categories or None,
        content_uploader=cfg.content_uploader or None,
        content_categories=cfg.content_categories or None, distance=cfg.distance)


def _scope(params: AnalysisParams) -> g.NodeFilter | None:
    if not params.content_uploader and not params.content_categories:
        return None
    return g.NodeFilter(categories=frozenset(params.content_categories)
                        if params.content_categories else None,
                        uploader=params.content_uploader)


# -- subcommands ----------------------------------------------------------------


def cmd_ingest(args, cfg: PipelineConfig, store: Store) -> int:
    code = EXIT_OK
    if args.records:
        rules = InterestRules.load(cfg.resolve(cfg.interest_rules) if cfg.interest_rules else None)
        counts = store.ingest_torrents(args.records, rules)
        _out(f"torrents: inserted={counts.inserted} updated={counts.updated} "
             f"unchanged={counts.unchanged} rejected={counts.rejected}")
    if args.observations:
        with Path(args.observations).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            obs = [PeerObservation(InfoHash.from_text(r["info_hash"]), r["ip"], int(r["port"]),
                                   float(r["timestamp"])) for r in rows]
        except (KeyError, ValueError, MagnetError) as exc:
            raise CommandError(f"{args.observations}: bad observation row: {exc}", EXIT_INPUT)
        c = store.record_observations(obs)
        _out(f"observations: links_created={c.links_created} links_updated={c.links_updated} "
             f"duplicates={c.duplicates} ips_created={c.ips_created} rejected={c.rejected}")
    if not args.records and not args.observations:
        raise CommandError("ingest needs a records file and/or --observations", EXIT_USAGE)
    return code


def _magnets(store: Store) -> list[MagnetLink]:
    out = []
    for t in store.torrents():
        if t.magnet:
            try:
                out.append(parse_magnet(t.magnet))
                continue
            except MagnetError as exc:
                log.warning("stored magnet for %s unusable: %s", t.info_hash, exc)
        out.append(MagnetLink(t.info_hash, t.title))
    return out


def cmd_harvest(args, cfg: PipelineConfig, store: Store) -> int:
    extra = []
    for url in (*cfg.trackers, *(args.tracker or ())):
        ep = tracker_endpoint(url)
        if ep is None:
            raise CommandError(f"not a udp://host:port tracker URL: {url}", EXIT_USAGE)
        extra.append(ep)
    schedule = HarvestSchedule(
        concurrency=cfg.tracker_concurrency,
        per_tracker_rate=cfg.tracker_rate or None,
        retry=RetryPolicy(cfg.tracker_timeout, cfg.tracker_retries, cfg.timeout_scale))
    report = harvest_swarms(_magnets(store), schedule,
                            params=AnnounceParams(num_want=cfg.num_want), extra_trackers=extra)
    counts = store.record_observations(report.observations)
    if args.output:
        with Path(args.output).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OBSERVATION_COLUMNS)
            w.writerows((bytes(o.info_hash).hex(), o.ip, o.port, repr(o.timestamp))
                        for o in report.observations)
    announces = sum(t.announces for t in report.trackers.values())
    _out(f"harvest: announces={announces} failures={report.failure_count} "
         f"skipped={len(report.skipped)} observations={len(report.observations)} "
         f"links_created={counts.links_created} ips_created={counts.ips_created}")
    for name, tally in sorted(report.trackers.items()):
        for kind, n in sorted(tally.failures.items()):
            log.warning("tracker %s: %d x %s", name, n, kind)
    if report.failure_count and announces == 0:
        raise CommandError("every announce failed", EXIT_NETWORK)
    return EXIT_OK


def cmd_enrich(args, cfg: PipelineConfig, store: Store) -> int:
    offline = args.offline or (cfg.resolve(cfg.offline_provider) if cfg.offline_provider else None)
    names = args.provider or list(cfg.providers)
    providers = []
    for name in names:
        if name == "offline":
            if offline is None:
                raise CommandError("offline provider selected but no file given", EXIT_USAGE)
            try:
                providers.append(OfflineProvider(offline))
            except (OSError, ValueError) as exc:
                raise CommandError(f"{offline}: {exc}", EXIT_INPUT)
        elif name == "ipinfo":
            providers.append(HttpJsonProvider.preset(
                "ipinfo", api_key_env=cfg.ipinfo_token_env, rate=cfg.provider_rate,
                timeout=cfg.provider_timeout))
        elif name == "ip-api":
            providers.append(HttpJsonProvider.preset(
                "ip-api", rate=cfg.provider_rate, timeout=cfg.provider_timeout))
        else:
            raise CommandError(f"unknown provider {name!r}", EXIT_USAGE)
    profiles = store.profiles()
    todo = profiles if args.all else [p for p in profiles if not p.is_enriched]
    result = run_enrich(todo, providers, workers=args.workers, places=_places(cfg))
    store.upsert_profiles(result.profiles, result.raw)
    _out(f"enrich: looked_up={len(todo)} all_providers_failed={len(result.all_failed)} "
         + " ".join(f"{k}={v}" for k, v in sorted(result.lookups.items())))
    if todo and len(result.all_failed) == len(todo):
        raise CommandError("every lookup failed", EXIT_PROVIDER)
    return EXIT_OK


def cmd_flag(args, cfg: PipelineConfig, store: Store) -> int:
    paths = args.lists or [str(cfg.resolve(p)) for p in cfg.flag_lists]
    if not paths:
        raise CommandError("no flag list given", EXIT_USAGE)
    try:
        lists = [load_flag_list(p, args.label) for p in paths]
    except (OSError, ValueError) as exc:
        raise CommandError(str(exc), EXIT_INPUT)
    summary = store.apply_flag_lists(lists)
    for label, c in sorted(summary.items()):
        _out(f"flag {label}: {c.count} of {c.total} IPs ({100 * c.rate:.2f}%)")
    return EXIT_OK


def cmd_normalize(args, cfg: PipelineConfig, store: Store) -> int:
    report = store.normalize(_places(cfg))
    by_field = report.by_field()
    _out(f"normalize: {len(report)} changes"
         + "".join(f" {k}={v}" for k, v in sorted(by_field.items())))
    return EXIT_OK


def cmd_analyze(args, cfg: PipelineConfig, store: Store) -> int:
    params = _analysis_params(cfg)
    store.set_meta("analysis_params", params.to_json())
    result = analyze(store, params)
    _out("analyze: " + " ".join(f"{k}={v}" for k, v in sorted(params.to_json().items())))
    pseudo = Pseudonymizer(store.profiles(), cfg.coord_decimals)
    show = (lambda ip: ip) if args.unsafe_raw_ips else pseudo.label
    text = (lambda t: t) if args.unsafe_raw_ips else scrub_addresses
    for name in ("ip_network", "flagged", "extended"):
        net = getattr(result, name)
        if net is None:
            _out(f"  {name}: skipped ({result.omissions.get(name)})")
        else:
            _out(f"  {name}: {len(net.nodes)} nodes, {len(net.edges)} edges")
    for i, p in enumerate(result.pairs, start=1):
        _out(f"  pair {i}: {show(p.a)} -- {show(p.b)} weight {p.weight}")
    for name in ("content", "content_extended"):
        study = getattr(result, name)
        if study is None:
            _out(f"  {name}: skipped ({result.omissions.get(name)})")
            continue
        _out(f"  {name}: {len(study.network.nodes)} titles, {len(study.network.edges)} edges")
        for r in study.rows:
            _out(f"    {text(r.title)} | peers {r.found_peers} | degree {r.normalized_degree:.3f} "
                 f"| betweenness {r.betweenness:.3f}")
    return EXIT_OK


def cmd_report(args, cfg: PipelineConfig, store: Store) -> int:
    stored = store.get_meta("analysis_params")
    params = AnalysisParams.from_json(stored) if stored else _analysis_params(cfg)
    result = analyze(store, params)
    pseudonymize = cfg.pseudonymize and not args.unsafe_raw_ips
    opts = ReportOptions(flag_labels=None, pseudonymize=pseudonymize,
                         decimals=cfg.coord_decimals, top_k=params.top_k, scope=_scope(params))
    manifest = render_report(store, result, args.directory, opts)
    _out(f"report: {len(manifest.files)} files in {manifest.directory}, "
         f"{len(manifest.omissions)} omitted")
    for name, reason in sorted(manifest.omissions.items()):
        log.info("omitted %s: %s", name, reason)
    for w in manifest.warnings:
        log.warning(w)
    return EXIT_OK


def cmd_audit(args, cfg: PipelineConfig, store: Store) -> int:
    report = store.audit()
    problems = list(report.problems)
    _out("audit: " + " ".join(f"{k}={v}" for k, v in sorted(report.counts.items())))
    if args.bundle:
        diffs = self_audit(store, args.bundle)
        _out(f"self-audit: {len(diffs)} differences")
        problems += diffs
    for p in problems:
        _out(f"  problem: {p}")
    return EXIT_AUDIT if problems else EXIT_OK


def cmd_mock_tracker(args, cfg: PipelineConfig) -> int:
    try:
        fixtures = load_fixtures(args.fixtures)
    except (OSError, ValueError, KeyError) as exc:
        raise CommandError(f"{args.fixtures}: {exc}", EXIT_INPUT)
    faults = FaultProfile(drop_first_n=args.drop_first_n,
                          corrupt_transaction_id=args.corrupt_transaction_id,
                          error_message=args.error_message,
                          stale_token_rejection=args.stale_token_rejection,
                          response_peer_cap=args.peer_cap)
    try:
        tracker = MockTracker(fixtures, faults, args.host, args.port)
    except BindFailure as exc:
        raise CommandError(str(exc), EXIT_NETWORK)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    tracker.start()
    if args.url_file:
        Path(args.url_file).write_text(tracker.url + "\n")
    _out(tracker.url)
    stop.wait(args.duration)
    stats = tracker.shutdown()
    log.info("mock tracker served %s, dropped %d", stats.requests_by_action, stats.dropped)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmtrace",
                                description="Torrent swarm collection and network analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-c", "--config", help="TOML config file")
    p.add_argument("--store", help="dataset file (overrides config)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("ingest", help="load torrent records and/or observations")
    s.add_argument("records", nargs="?", help="torrent records CSV")
    s.add_argument("--observations", help="observations CSV (info_hash,ip,port,timestamp)")

    s = sub.add_parser("harvest", help="announce every stored magnet and record peers")
    s.add_argument("--tracker", action="append", help="extra udp:// tracker (repeatable)")
    s.add_argument("--timeout-scale", type=float, dest="timeout_scale")
    s.add_argument("--concurrency", type=int, dest="tracker_concurrency")
    s.add_argument("--num-want", type=int, dest="num_want")
    s.add_argument("--retries", type=int, dest="tracker_retries")
    s.add_argument("--output", help="also write the observations as CSV")

    s = sub.add_parser("enrich", help="look up IP metadata")
    s.add_argument("--offline", help="offline provider file (CSV or JSON Lines)")
    s.add_argument("--provider", action="append", choices=("offline", "ip-api", "ipinfo"),
                   help="provider in precedence order (repeatable)")
    s.add_argument("--all", action="store_true", help="re-query already enriched IPs")
    s.add_argument("--workers", type=int, default=4)

    s = sub.add_parser("flag", help="cross-reference IPs against flag lists")
    s.add_argument("lists", nargs="*", help="flag list files")
    s.add_argument("--label", help="label for lists without a header")

    sub.add_parser("normalize", help="standardize text fields and recompute privacy")

    s = sub.add_parser("analyze", help="build networks and centralities")
    s.add_argument("--min-links", type=int, dest="min_links")
    s.add_argument("--top-fraction", type=float, dest="top_fraction")
    s.add_argument("--top-k", type=int, dest="top_k")
    s.add_argument("--flag-label", dest="flag_label")
    s.add_argument("--uploader", dest="content_uploader", help="content-study uploader")
    s.add_argument("--distance", choices=("hops", "inverse_weight"))
    s.add_argument("--unsafe-raw-ips", action="store_true", help="print raw addresses")

    s = sub.add_parser("report", help="write the report bundle")
    s.add_argument("directory")
    s.add_argument("--unsafe-raw-ips", action="store_true",
                   help="disable pseudonymization in the bundle")

    s = sub.add_parser("audit", help="integrity checks, optionally against a bundle")
    s.add_argument("--bundle", help="report bundle to re-derive and diff")

    s = sub.add_parser("mock-tracker", help="serve swarm fixtures over UDP")
    s.add_argument("fixtures", help="JSON Lines swarm fixtures")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--duration", type=float, default=None, help="seconds to serve, default forever")
    s.add_argument("--url-file", help="write the tracker URL here once listening")
    s.add_argument("--drop-first-n", type=int, default=0)
    s.add_argument("--corrupt-transaction-id", action="store_true")
    s.add_argument("--error-message")
    s.add_argument("--stale-token-rejection", action="store_true")
    s.add_argument("--peer-cap", type=int)
    return p


COMMANDS: dict[str, Callable] = {
    "ingest": cmd_ingest, "harvest": cmd_harvest, "enrich": cmd_enrich, "flag": cmd_flag,
    "normalize": cmd_normalize, "analyze": cmd_analyze, "report": cmd_report,
    "audit": cmd_audit,
}
OVERRIDES = ("timeout_scale", "tracker_concurrency", "num_want", "tracker_retries", "min_links",
             "top_fraction", "top_k", "flag_label", "content_uploader", "distance")


def _input_files(args) -> list[Path]:
    out = []
    for name in ("records", "observations", "offline", "fixtures", "config"):
        value = getattr(args, name, None)
        if value:
            out.append(Path(value))
    out += [Path(p) for p in getattr(args, "lists", None) or ()]
    return [p for p in out if p.is_file()]


def _provenance(cfg: PipelineConfig | None, args, status: int) -> None:
    if cfg is None or args.command == "mock-tracker":
        return
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    inputs = ",".join(f"{p.name}:{_digest(p)}" for p in _input_files(args)) or "-"
    line = f"{stamp}\t{args.command}\texit={status}\tinputs={inputs}\n"
    try:
        path = cfg.run_log_path
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a") as fh:
            fh.write(line)
    except OSError as exc:
        log.warning("cannot append to run log: %s", exc)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    cfg = None
    status = EXIT_FAILURE
    try:
        cfg = load_config(args.config)
        overrides = {k: getattr(args, k, None) for k in OVERRIDES}
        if args.store:
            overrides["store"] = str(Path(args.store).resolve())
        cfg = cfg.override(**overrides)
        if args.command == "mock-tracker":
            status = cmd_mock_tracker(args, cfg)
        else:
            cfg.store_path.parent.mkdir(parents=True, exist_ok=True)
            with FileLock(str(cfg.lock_path), timeout=0):
                with Store(cfg.store_path) as store:
                    status = COMMANDS[args.command](args, cfg, store)
    except ConfigError as exc:
        log.error("config: %s", exc)
        status = EXIT_USAGE
    except CommandError as exc:
        log.error("%s", exc)
        status = exc.code
    except Timeout:
        log.error("store %s is locked by another process", cfg.store_path if cfg else "?")
        status = EXIT_LOCKED
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        log.error("input: %s", exc)
        status = EXIT_INPUT
    except StoreError as exc:
        log.error("store: %s", exc)
        status = EXIT_STORE
    except ProviderError as exc:
        log.error("provider: %s", exc)
        status = EXIT_PROVIDER
    except g.EmptyResult as exc:
        log.error("%s", exc)
        status = EXIT_INPUT
    _provenance(cfg, args, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
