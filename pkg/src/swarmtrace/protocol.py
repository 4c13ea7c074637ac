"""UDP tracker wire format (BEP 15): packet builders and parsers.

All integers are big-endian. Both the client and the mock tracker go through
these functions, so the layouts live in exactly one place.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple

PROTOCOL_ID = 0x41727101980

ACTION_CONNECT = 0
ACTION_ANNOUNCE = 1
ACTION_SCRAPE = 2
ACTION_ERROR = 3

EVENTS = {"none": 0, "completed": 1, "started": 2, "stopped": 3}

CONNECT_REQUEST_SIZE = 16
CONNECT_RESPONSE_SIZE = 16
ANNOUNCE_REQUEST_SIZE = 98
ANNOUNCE_RESPONSE_HEADER = 20
SCRAPE_REQUEST_HEADER = 16
SCRAPE_ENTRY_SIZE = 12
MAX_SCRAPE_HASHES = 74
COMPACT_PEER_SIZE = 6

_HEADER = struct.Struct("!QII")  # connection_id / protocol id, action, transaction id
_REPLY = struct.Struct("!II")  # action, transaction id
_ANNOUNCE = struct.Struct("!QII20s20sQQQIIIiH")
_ANNOUNCE_REPLY = struct.Struct("!IIIII")
_SCRAPE_ENTRY = struct.Struct("!III")
_PEER = struct.Struct("!4sH")

assert _ANNOUNCE.size == ANNOUNCE_REQUEST_SIZE


class ProtocolError(Exception):
    """A datagram does not have the expected layout."""


class Truncated(ProtocolError):
    pass


class RaggedPayload(ProtocolError):
    pass


class PeerEndpoint(NamedTuple):
    ip: str
    port: int

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> PeerEndpoint:
        host, _, port = text.rpartition(":")
        return cls(str(ipaddress.IPv4Address(host)), int(port))


@dataclass(frozen=True)
class AnnounceRequest:
    connection_id: int
    transaction_id: int
    info_hash: bytes
    peer_id: bytes
    downloaded: int = 0
    left: int = 0
    uploaded: int = 0
    event: int = 0
    ip: int = 0
    key: int = 0
    num_want: int = -1
    port: int = 0


@dataclass(frozen=True)
class AnnounceReply:
    transaction_id: int
    interval: int
    leechers: int
    seeders: int
    peers: list[PeerEndpoint]
    dropped_zero_port: int = 0


@dataclass(frozen=True)
class ScrapeCounts:
    seeders: int
    completed: int
    leechers: int


def encode_compact_peers(peers: Iterable[tuple[str, int]]) -> bytes:
    out = bytearray()
    for ip, port in peers:
        out += _PEER.pack(ipaddress.IPv4Address(ip).packed, port)
    return bytes(out)


def _decode_peers(payload: bytes) -> tuple[list[PeerEndpoint], int]:
    if len(payload) % COMPACT_PEER_SIZE:
        raise RaggedPayload(f"compact peer payload of {len(payload)} bytes is not a multiple of 6")
    peers = []
    dropped = 0
    for raw_ip, port in _PEER.iter_unpack(payload):
        if port == 0:
            dropped += 1
            continue
        peers.append(PeerEndpoint(str(ipaddress.IPv4Address(raw_ip)), port))
    return peers, dropped


def decode_compact_peers(payload: bytes) -> list[PeerEndpoint]:
    """Decode 6-byte (IPv4, port) groups; entries with port 0 are dropped."""
    return _decode_peers(payload)[0]


def peek(data: bytes) -> tuple[int, int]:
    """Return (action, transaction_id) from the first 8 bytes of a tracker reply."""
    if len(data) < _REPLY.size:
        raise Truncated(f"reply of {len(data)} bytes is shorter than the 8-byte header")
    return _REPLY.unpack_from(data)


# -- requests ---------------------------------------------------------------


def pack_connect_request(transaction_id: int) -> bytes:
    return _HEADER.pack(PROTOCOL_ID, ACTION_CONNECT, transaction_id)


def unpack_request_header(data: bytes) -> tuple[int, int, int]:
    """Return (connection_id, action, transaction_id) of any client request."""
    if len(data) < _HEADER.size:
        raise Truncated(f"request of {len(data)} bytes is shorter than 16")
    return _HEADER.unpack_from(data)


def pack_announce_request(req: AnnounceRequest) -> bytes:
    return _ANNOUNCE.pack(
        req.connection_id,
        ACTION_ANNOUNCE,
        req.transaction_id,
        bytes(req.info_hash),
        req.peer_id,
        req.downloaded,
        req.left,
        req.uploaded,
        req.event,
        req.ip,
        req.key,
        req.num_want,
        req.port,
    )


def unpack_announce_request(data: bytes) -> AnnounceRequest:
    if len(data) < ANNOUNCE_REQUEST_SIZE:
        raise Truncated(f"announce request of {len(data)} bytes, need 98")
    (cid, action, tid, info_hash, peer_id, downloaded, left, uploaded, event, ip, key, num_want,
     port) = _ANNOUNCE.unpack_from(data)
    if action != ACTION_ANNOUNCE:
        raise ProtocolError(f"expected announce action, got {action}")
    return AnnounceRequest(cid, tid, info_hash, peer_id, downloaded, left, uploaded, event, ip,
                           key, num_want, port)


def pack_scrape_request(connection_id: int, transaction_id: int, hashes: list[bytes]) -> bytes:
    return _HEADER.pack(connection_id, ACTION_SCRAPE, transaction_id) + b"".join(
        bytes(h) for h in hashes
    )


def unpack_scrape_request(data: bytes) -> tuple[int, int, list[bytes]]:
    cid, action, tid = unpack_request_header(data)
    body = data[SCRAPE_REQUEST_HEADER:]
    if action != ACTION_SCRAPE or len(body) % 20:
        raise ProtocolError("malformed scrape request")
    return cid, tid, [body[i:i + 20] for i in range(0, len(body), 20)]


# -- replies ----------------------------------------------------------------


def pack_connect_reply(transaction_id: int, connection_id: int) -> bytes:
    return struct.pack("!IIQ", ACTION_CONNECT, transaction_id, connection_id)


def unpack_connect_reply(data: bytes) -> tuple[int, int]:
    """Return (transaction_id, connection_id)."""
    if len(data) < CONNECT_RESPONSE_SIZE:
        raise Truncated(f"connect reply of {len(data)} bytes, need 16")
    action, tid, cid = struct.unpack_from("!IIQ", data)
    if action != ACTION_CONNECT:
        raise ProtocolError(f"expected connect action, got {action}")
    return tid, cid


def pack_announce_reply(transaction_id: int, interval: int, leechers: int, seeders: int,
                        peers: Iterable[tuple[str, int]]) -> bytes:
    return _ANNOUNCE_REPLY.pack(ACTION_ANNOUNCE, transaction_id, interval, leechers,
                                seeders) + encode_compact_peers(peers)


def unpack_announce_reply(data: bytes) -> AnnounceReply:
    if len(data) < ANNOUNCE_RESPONSE_HEADER:
        raise Truncated(f"announce reply of {len(data)} bytes, need at least 20")
    action, tid, interval, leechers, seeders = _ANNOUNCE_REPLY.unpack_from(data)
    if action != ACTION_ANNOUNCE:
        raise ProtocolError(f"expected announce action, got {action}")
    body = data[ANNOUNCE_RESPONSE_HEADER:]
    # a trailing partial peer is tolerated here: floor((len - 20) / 6) peers
    body = body[: len(body) - len(body) % COMPACT_PEER_SIZE]
    peers, dropped = _decode_peers(body)
    return AnnounceReply(tid, interval, leechers, seeders, peers, dropped)


def pack_scrape_reply(transaction_id: int, entries: Iterable[ScrapeCounts]) -> bytes:
    return _REPLY.pack(ACTION_SCRAPE, transaction_id) + b"".join(
        _SCRAPE_ENTRY.pack(e.seeders, e.completed, e.leechers) for e in entries
    )


def unpack_scrape_reply(data: bytes, expected: int) -> tuple[int, list[ScrapeCounts]]:
    need = _REPLY.size + SCRAPE_ENTRY_SIZE * expected
    if len(data) < need:
        raise Truncated(f"scrape reply of {len(data)} bytes, need {need}")
    action, tid = _REPLY.unpack_from(data)
    if action != ACTION_SCRAPE:
        raise ProtocolError(f"expected scrape action, got {action}")
    entries = [
        ScrapeCounts(*_SCRAPE_ENTRY.unpack_from(data, _REPLY.size + i * SCRAPE_ENTRY_SIZE))
        for i in range(expected)
    ]
    return tid, entries


def pack_error(transaction_id: int, message: str) -> bytes:
    return _REPLY.pack(ACTION_ERROR, transaction_id) + message.encode("utf-8", "replace")


def unpack_error(data: bytes) -> tuple[int, str]:
    action, tid = peek(data)
    if action != ACTION_ERROR:
        raise ProtocolError(f"expected error action, got {action}")
    return tid, data[_REPLY.size:].decode("utf-8", "replace")
