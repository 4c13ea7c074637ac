"""In-process UDP tracker driven by swarm fixtures, with injectable faults.

Fixture files are JSON Lines, one swarm per line::

    {"info_hash": "<40 hex>", "peers": ["1.2.3.4:6881", ...],
     "seeders": 4, "leechers": 10, "completed": 2}

``seeders``/``leechers``/``completed`` default to 0 and are reported verbatim;
they need not agree with the peer list.
"""

from __future__ import annotations

import json
import logging
import secrets
import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import protocol as wire
from .magnet import InfoHash
from .protocol import PeerEndpoint

log = logging.getLogger(__name__)

DEFAULT_NUM_WANT = 50


class BindFailure(OSError):
    pass


@dataclass
class SwarmFixture:
    info_hash: InfoHash
    peers: list[PeerEndpoint] = field(default_factory=list)
    seeders: int = 0
    leechers: int = 0
    completed: int = 0
    interval: int = 1800

    def to_json(self) -> dict:
        return {"info_hash": self.info_hash.hex(), "peers": [str(p) for p in self.peers],
                "seeders": self.seeders, "leechers": self.leechers,
                "completed": self.completed}

    @classmethod
    def from_json(cls, rec: dict) -> SwarmFixture:
        return cls(
            info_hash=InfoHash.from_text(rec["info_hash"]),
            peers=[PeerEndpoint.parse(p) for p in rec.get("peers", [])],
            seeders=int(rec.get("seeders", 0)),
            leechers=int(rec.get("leechers", 0)),
            completed=int(rec.get("completed", 0)),
            interval=int(rec.get("interval", 1800)),
        )


def load_fixtures(path: str | Path) -> list[SwarmFixture]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            out.append(SwarmFixture.from_json(json.loads(line)))
    return out


def dump_fixtures(path: str | Path, fixtures: Iterable[SwarmFixture]) -> None:
    Path(path).write_text("".join(json.dumps(f.to_json()) + "\n" for f in fixtures))


@dataclass
class FaultProfile:
    drop_first_n: int = 0
    corrupt_transaction_id: bool = False
    error_message: str | None = None
    stale_token_rejection: bool = False
    response_peer_cap: int | None = None


@dataclass(frozen=True)
class CapturedDatagram:
    at: float
    size: int
    action: int | None
    dropped: bool


@dataclass
class TrackerStats:
    requests_by_action: dict[int, int]
    dropped: int
    errors_sent: int


class MockTracker:
    """Single-socket, single-threaded tracker. Use :func:`serve` or ``with MockTracker(...)``."""

    def __init__(self, fixtures: Iterable[SwarmFixture] = (), faults: FaultProfile | None = None,
                 host: str = "127.0.0.1", port: int = 0, *,
                 clock: Callable[[], float] = time.monotonic, token_lifetime: float = 60.0):
        self.swarms = {bytes(f.info_hash): f for f in fixtures}
        self.faults = faults or FaultProfile()
        self.clock = clock
        self.token_lifetime = token_lifetime
        self.traffic: list[CapturedDatagram] = []
        self.requests_by_action: Counter[int] = Counter()
        self.dropped = 0
        self.errors_sent = 0
        self._issued: dict[int, float] = {}
        self._received = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.sock.settimeout(0.05)
        self.address: tuple[str, int] = self.sock.getsockname()[:2]

    @property
    def url(self) -> str:
        return f"udp://{self.address[0]}:{self.address[1]}/announce"

    def start(self) -> MockTracker:
        self._thread = threading.Thread(target=self._loop, name="mock-tracker", daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> TrackerStats:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.sock.close()
        return self.stats()

    def stats(self) -> TrackerStats:
        return TrackerStats(dict(self.requests_by_action), self.dropped, self.errors_sent)

    def __enter__(self) -> MockTracker:
        return self.start() if self._thread is None else self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def serve_forever(self) -> None:
        self._loop()

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    break
                continue
            reply = self.handle(data)
            if reply is not None:
                try:
                    self.sock.sendto(reply, addr)
                except OSError as exc:
                    log.debug("mock tracker send to %s failed: %s", addr, exc)

    def handle(self, data: bytes) -> bytes | None:
        """Process one request datagram and return the reply (None = no reply)."""
        now = self.clock()
        try:
            cid, action, tid = wire.unpack_request_header(data)
        except wire.Truncated:
            self.traffic.append(CapturedDatagram(now, len(data), None, True))
            self.dropped += 1
            return None
        self._received += 1
        if self._received <= self.faults.drop_first_n:
            self.traffic.append(CapturedDatagram(now, len(data), action, True))
            self.dropped += 1
            return None
        self.traffic.append(CapturedDatagram(now, len(data), action, False))
        self.requests_by_action[action] += 1
        reply_tid = tid ^ 0xFFFFFFFF if self.faults.corrupt_transaction_id else tid

        if self.faults.error_message is not None:
            return self._error(reply_tid, self.faults.error_message)
        if action == wire.ACTION_CONNECT:
            if cid != wire.PROTOCOL_ID:
                return self._error(reply_tid, "bad protocol id")
            new_cid = secrets.randbits(64)
            self._issued[new_cid] = now
            return wire.pack_connect_reply(reply_tid, new_cid)

        issued = self._issued.get(cid)
        if issued is None:
            return self._error(reply_tid, "invalid connection id")
        if self.faults.stale_token_rejection and now - issued >= self.token_lifetime:
            return self._error(reply_tid, "connection id expired")

        if action == wire.ACTION_ANNOUNCE:
            try:
                req = wire.unpack_announce_request(data)
            except wire.ProtocolError as exc:
                return self._error(reply_tid, str(exc))
            swarm = self.swarms.get(req.info_hash)
            if swarm is None:
                return self._error(reply_tid, "unknown torrent")
            limit = req.num_want if req.num_want >= 0 else DEFAULT_NUM_WANT
            if self.faults.response_peer_cap is not None:
                limit = min(limit, self.faults.response_peer_cap)
            return wire.pack_announce_reply(reply_tid, swarm.interval, swarm.leechers,
                                            swarm.seeders, swarm.peers[:limit])
        if action == wire.ACTION_SCRAPE:
            try:
                _, _, hashes = wire.unpack_scrape_request(data)
            except wire.ProtocolError as exc:
                return self._error(reply_tid, str(exc))
            entries = []
            for h in hashes:
                swarm = self.swarms.get(h)
                entries.append(wire.ScrapeCounts(swarm.seeders, swarm.completed, swarm.leechers)
                               if swarm else wire.ScrapeCounts(0, 0, 0))
            return wire.pack_scrape_reply(reply_tid, entries)
        return self._error(reply_tid, f"unsupported action {action}")

    def _error(self, tid: int, message: str) -> bytes:
        self.errors_sent += 1
        return wire.pack_error(tid, message)


def serve(fixtures: Iterable[SwarmFixture], faults: FaultProfile | None = None,
          bind: tuple[str, int] = ("127.0.0.1", 0), **kwargs) -> MockTracker:
    """Start a mock tracker on a background thread and return its handle."""
    return MockTracker(fixtures, faults, bind[0], bind[1], **kwargs).start()


def shutdown(handle: MockTracker) -> TrackerStats:
    return handle.shutdown()
