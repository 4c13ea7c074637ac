"""UDP tracker client: connect, announce, scrape, and batch swarm harvesting.

One UDP socket is shared per resolved tracker endpoint. A reader thread per
socket hands replies to waiting callers by transaction id, so any number of
threads may use a :class:`TrackerClient` at once.
"""

from __future__ import annotations

import logging
import os
import secrets
import socket
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import protocol as wire
from .magnet import InfoHash, MagnetLink, TrackerEndpoint
from .protocol import PeerEndpoint, RaggedPayload, Truncated, decode_compact_peers
from .ratelimit import RateLimiter

log = logging.getLogger(__name__)

__all__ = [
    "AnnounceParams", "AnnounceResult", "ConnectionToken", "HarvestReport", "HarvestSchedule",
    "PeerEndpoint", "PeerObservation", "RaggedPayload", "RetryPolicy", "ScrapeEntry",
    "TokenExpired", "TooManyHashes", "TrackerClient", "TrackerClientError", "TrackerError",
    "TrackerTimeout", "TransactionMismatch", "Truncated", "decode_compact_peers",
    "harvest_swarms",
]

CLIENT_PREFIX = b"-ST0100-"
TOKEN_LIFETIME = 60.0
TOKEN_MARGIN = 5.0


class TrackerClientError(Exception):
    pass


class TrackerTimeout(TrackerClientError):
    pass


class TransactionMismatch(TrackerTimeout):
    """Only replies with foreign transaction ids arrived before the schedule ran out."""


class TrackerError(TrackerClientError):
    """The tracker answered with action 3."""

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class TokenExpired(TrackerClientError):
    pass


class TooManyHashes(TrackerClientError, ValueError):
    pass


def new_peer_id() -> bytes:
    return CLIENT_PREFIX + os.urandom(12)


@dataclass(frozen=True)
class RetryPolicy:
    """Wait ``base_timeout * 2**n * scale`` seconds for attempt n, n = 0..max_retries."""

    base_timeout: float = 15.0
    max_retries: int = 3
    scale: float = 1.0

    def timeouts(self) -> list[float]:
        return [self.base_timeout * 2**n * self.scale for n in range(self.max_retries + 1)]


@dataclass(frozen=True)
class ConnectionToken:
    connection_id: int
    obtained_at: float
    endpoint: tuple[str, int]


@dataclass(frozen=True)
class AnnounceParams:
    peer_id: bytes | None = None
    num_want: int = 200
    listen_port: int = 6881
    event: str = "none"
    downloaded: int = 0
    left: int = 0
    uploaded: int = 0


@dataclass(frozen=True)
class AnnounceResult:
    interval: int
    leechers: int
    seeders: int
    peers: list[PeerEndpoint]
    dropped_zero_port: int = 0


@dataclass(frozen=True)
class ScrapeEntry:
    info_hash: InfoHash
    seeders: int
    completed: int
    leechers: int


class _Pending:
    __slots__ = ("event", "data")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.data: bytes | None = None


class _Channel:
    def __init__(self, addr: tuple[str, int]):
        self.addr = addr
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.settimeout(0.05)
        self.sock.connect(addr)
        self.unmatched = 0
        self._pending: dict[int, _Pending] = {}
        self._lock = threading.Lock()
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name=f"tracker-{addr}",
                                        daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while not self._closed.is_set():
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                # ICMP port-unreachable surfaces here on a connected socket; keep waiting
                if self._closed.is_set():
                    break
                continue
            try:
                _, tid = wire.peek(data)
            except Truncated:
                self.unmatched += 1
                continue
            with self._lock:
                slot = self._pending.get(tid)
            if slot is None or slot.event.is_set():
                self.unmatched += 1
                continue
            slot.data = data
            slot.event.set()

    def exchange(self, build: Callable[[int], bytes], timeouts: Sequence[float],
                 before_send: Callable[[], None], after_send: Callable[[bytes], None]) -> bytes:
        with self._lock:
            tid = secrets.randbits(32)
            while tid in self._pending:
                tid = secrets.randbits(32)
            slot = self._pending[tid] = _Pending()
        unmatched_at_start = self.unmatched
        try:
            packet = build(tid)
            for attempt, timeout in enumerate(timeouts):
                before_send()
                self.sock.send(packet)
                after_send(packet)
                if slot.event.wait(timeout):
                    assert slot.data is not None
                    return slot.data
                log.debug("tracker %s: no reply to attempt %d after %.3fs", self.addr,
                          attempt, timeout)
        finally:
            with self._lock:
                del self._pending[tid]
        if self.unmatched > unmatched_at_start:
            raise TransactionMismatch(f"{self.addr}: replies carried unknown transaction ids")
        raise TrackerTimeout(f"{self.addr}: no reply after {len(timeouts)} attempts")

    def close(self) -> None:
        self._closed.set()
        self._reader.join(timeout=1.0)
        self.sock.close()


class TrackerClient:
    """Thread-safe UDP tracker client.

    Args:
        retry: retransmission schedule.
        rate: per-tracker requests per second (None for unlimited).
        clock: monotonic clock used for token ages.
    """

    def __init__(self, retry: RetryPolicy | None = None, *, rate: float | None = None,
                 token_lifetime: float = TOKEN_LIFETIME, expiry_margin: float = TOKEN_MARGIN,
                 clock: Callable[[], float] = time.monotonic, peer_id: bytes | None = None):
        self.retry = retry or RetryPolicy()
        self.rate = rate
        self.token_lifetime = token_lifetime
        self.expiry_margin = expiry_margin
        self.peer_id = peer_id or new_peer_id()
        self.key = secrets.randbits(32)
        self.sent: Counter[int] = Counter()
        self._clock = clock
        self._lock = threading.Lock()
        self._channels: dict[tuple[str, int], _Channel] = {}
        self._limiters: dict[tuple[str, int], RateLimiter] = {}
        self._tokens: dict[tuple[str, int], ConnectionToken] = {}
        self._token_locks: dict[tuple[str, int], threading.Lock] = {}

    def __enter__(self) -> TrackerClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        with self._lock:
            channels = list(self._channels.values())
            self._channels.clear()
        for ch in channels:
            ch.close()

    # -- plumbing -----------------------------------------------------------

    @staticmethod
    def resolve(endpoint: TrackerEndpoint | tuple[str, int]) -> tuple[str, int]:
        host, port = (endpoint.host, endpoint.port) if isinstance(
            endpoint, TrackerEndpoint) else endpoint
        info = socket.getaddrinfo(host, port, socket.AF_INET, socket.SOCK_DGRAM)
        ip, port = info[0][4][:2]
        return ip, port

    def _channel(self, addr: tuple[str, int]) -> tuple[_Channel, RateLimiter]:
        with self._lock:
            ch = self._channels.get(addr)
            if ch is None:
                ch = self._channels[addr] = _Channel(addr)
                self._limiters[addr] = RateLimiter(self.rate)
            return ch, self._limiters[addr]

    def _exchange(self, addr: tuple[str, int], action: int, build: Callable[[int], bytes],
                  token: ConnectionToken | None = None) -> bytes:
        ch, limiter = self._channel(addr)

        def before_send() -> None:
            limiter.acquire()
            if token is not None:
                self._check_token(token)

        def after_send(packet: bytes) -> None:
            with self._lock:
                self.sent[action] += 1

        data = ch.exchange(build, self.retry.timeouts(), before_send, after_send)
        got, _ = wire.peek(data)
        if got == wire.ACTION_ERROR:
            _, message = wire.unpack_error(data)
            raise TrackerError(message)
        return data

    def _check_token(self, token: ConnectionToken) -> None:
        if self._clock() - token.obtained_at >= self.token_lifetime:
            raise TokenExpired(f"connection id for {token.endpoint} is older than "
                               f"{self.token_lifetime:g}s")

    # -- protocol operations ------------------------------------------------

    def connect(self, endpoint: TrackerEndpoint | tuple[str, int]) -> ConnectionToken:
        addr = self.resolve(endpoint)
        data = self._exchange(addr, wire.ACTION_CONNECT, wire.pack_connect_request)
        _, cid = wire.unpack_connect_reply(data)
        token = ConnectionToken(cid, self._clock(), addr)
        with self._lock:
            self._tokens[addr] = token
        return token

    def token_for(self, endpoint: TrackerEndpoint | tuple[str, int]) -> ConnectionToken:
        """Return a cached token younger than ``lifetime - margin``, else connect."""
        return self._token(self.resolve(endpoint))[0]

    def _token(self, addr: tuple[str, int]) -> tuple[ConnectionToken, bool]:
        with self._lock:
            lock = self._token_locks.setdefault(addr, threading.Lock())
        with lock:
            with self._lock:
                token = self._tokens.get(addr)
            if token is not None and (self._clock() - token.obtained_at
                                      < self.token_lifetime - self.expiry_margin):
                return token, True
            return self.connect(addr), False

    def invalidate(self, token: ConnectionToken) -> None:
        with self._lock:
            if self._tokens.get(token.endpoint) == token:
                del self._tokens[token.endpoint]

    def announce(self, token: ConnectionToken, info_hash: bytes,
                 params: AnnounceParams | None = None) -> AnnounceResult:
        params = params or AnnounceParams()
        self._check_token(token)
        if params.event not in wire.EVENTS:
            raise ValueError(f"unknown announce event {params.event!r}")

        def build(tid: int) -> bytes:
            return wire.pack_announce_request(wire.AnnounceRequest(
                connection_id=token.connection_id,
                transaction_id=tid,
                info_hash=bytes(InfoHash(info_hash)),
                peer_id=params.peer_id or self.peer_id,
                downloaded=params.downloaded,
                left=params.left,
                uploaded=params.uploaded,
                event=wire.EVENTS[params.event],
                key=self.key,
                num_want=params.num_want,
                port=params.listen_port,
            ))

        reply = wire.unpack_announce_reply(
            self._exchange(token.endpoint, wire.ACTION_ANNOUNCE, build, token))
        peers = reply.peers
        if params.num_want >= 0:
            peers = peers[: params.num_want]
        return AnnounceResult(reply.interval, reply.leechers, reply.seeders, peers,
                              reply.dropped_zero_port)

    def scrape(self, token: ConnectionToken, hashes: Sequence[bytes]) -> list[ScrapeEntry]:
        if not 1 <= len(hashes) <= wire.MAX_SCRAPE_HASHES:
            raise TooManyHashes(f"scrape takes 1..{wire.MAX_SCRAPE_HASHES} hashes, "
                                f"got {len(hashes)}")
        hashes = [InfoHash(h) for h in hashes]
        self._check_token(token)
        data = self._exchange(
            token.endpoint, wire.ACTION_SCRAPE,
            lambda tid: wire.pack_scrape_request(token.connection_id, tid, hashes), token)
        _, entries = wire.unpack_scrape_reply(data, len(hashes))
        return [ScrapeEntry(h, e.seeders, e.completed, e.leechers)
                for h, e in zip(hashes, entries)]


# -- batch harvesting -------------------------------------------------------


@dataclass(frozen=True)
class PeerObservation:
    info_hash: InfoHash
    ip: str
    port: int
    timestamp: float


@dataclass(frozen=True)
class HarvestSchedule:
    concurrency: int = 8
    per_tracker_rate: float | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)


@dataclass
class TrackerTally:
    announces: int = 0
    peers: int = 0
    failures: Counter = field(default_factory=Counter)


@dataclass
class HarvestReport:
    observations: list[PeerObservation] = field(default_factory=list)
    trackers: dict[str, TrackerTally] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    @property
    def failure_count(self) -> int:
        return sum(sum(t.failures.values()) for t in self.trackers.values())


def harvest_swarms(magnets: Iterable[MagnetLink], schedule: HarvestSchedule | None = None, *,
                   params: AnnounceParams | None = None, client: TrackerClient | None = None,
                   extra_trackers: Iterable[TrackerEndpoint] = (),
                   wall_clock: Callable[[], float] = time.time) -> HarvestReport:
    """Announce every magnet to each of its UDP trackers and collect peer sightings.

    Failures are tallied per tracker and never abort the batch. Magnets with no
    UDP tracker (after adding ``extra_trackers``) are listed in ``skipped``.
    """
    schedule = schedule or HarvestSchedule()
    params = params or AnnounceParams()
    extra = list(extra_trackers)
    report = HarvestReport()
    jobs: list[tuple[MagnetLink, TrackerEndpoint]] = []
    for m in magnets:
        endpoints = m.udp_trackers + [e for e in extra if e not in m.udp_trackers]
        if not endpoints:
            report.skipped.append(m.info_hash.hex())
            continue
        jobs.extend((m, ep) for ep in endpoints)
    for _, ep in jobs:
        report.trackers.setdefault(str(ep), TrackerTally())

    own_client = client is None
    client = client or TrackerClient(schedule.retry, rate=schedule.per_tracker_rate)
    tally_lock = threading.Lock()

    def run(job: tuple[MagnetLink, TrackerEndpoint]) -> list[PeerObservation]:
        magnet, ep = job
        tally = report.trackers[str(ep)]
        try:
            result = _announce_reconnecting(client, ep, magnet.info_hash, params)
        except (TrackerClientError, wire.ProtocolError, OSError) as exc:
            log.warning("announce %s to %s failed: %s", magnet.info_hash.hex(), ep,
                        type(exc).__name__)
            with tally_lock:
                tally.failures[type(exc).__name__] += 1
            return []
        seen_at = wall_clock()
        with tally_lock:
            tally.announces += 1
            tally.peers += len(result.peers)
        return [PeerObservation(magnet.info_hash, p.ip, p.port, seen_at) for p in result.peers]

    try:
        with ThreadPoolExecutor(max_workers=max(1, schedule.concurrency)) as pool:
            for obs in pool.map(run, jobs):
                report.observations.extend(obs)
    finally:
        if own_client:
            client.close()
    return report


def _announce_reconnecting(client: TrackerClient, ep: TrackerEndpoint, info_hash: InfoHash,
                           params: AnnounceParams) -> AnnounceResult:
    addr = client.resolve(ep)
    token, cached = client._token(addr)
    try:
        return client.announce(token, info_hash, params)
    except (TokenExpired, TrackerError):
        # a cached id may have been retired by the tracker; one fresh connect, then give up
        if not cached:
            raise
        client.invalidate(token)
        token, _ = client._token(addr)
        return client.announce(token, info_hash, params)
