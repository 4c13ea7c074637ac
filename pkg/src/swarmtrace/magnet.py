"""Magnet URI parsing.

Only the ``urn:btih`` (BitTorrent v1) hash family is understood. Everything
else in the URI that is not ``xt``, ``dn`` or ``tr`` is ignored.
"""

from __future__ import annotations

import base64
import binascii
import logging
import re
import urllib.parse
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_HEX_RE = re.compile(r"^[0-9a-fA-F]{40}$")
_B32_RE = re.compile(r"^[A-Za-z2-7]{32}$")
_TRACKER_KEY_RE = re.compile(r"^tr(\.\d+)?$")


class MagnetError(ValueError):
    """Base class for magnet parsing failures."""


class MalformedUri(MagnetError):
    pass


class MissingHash(MagnetError):
    pass


class MalformedHash(MagnetError):
    pass


class InfoHash(bytes):
    """A 20-byte torrent info-hash. ``str()`` gives the canonical lowercase hex."""

    __slots__ = ()

    def __new__(cls, value: bytes) -> InfoHash:
        value = bytes(value)
        if len(value) != 20:
            raise MalformedHash(f"info-hash must be 20 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_text(cls, text: str) -> InfoHash:
        """Decode a 40-char hex or 32-char base32 info-hash, any case."""
        text = text.strip()
        if _HEX_RE.match(text):
            return cls(bytes.fromhex(text))
        if _B32_RE.match(text):
            try:
                return cls(base64.b32decode(text.upper()))
            except binascii.Error as exc:
                raise MalformedHash(f"bad base32 info-hash {text!r}") from exc
        raise MalformedHash(f"info-hash must be 40 hex or 32 base32 chars: {text!r}")

    def __str__(self) -> str:
        return self.hex()

    def __repr__(self) -> str:
        return f"InfoHash('{self.hex()}')"


def canonical_hex(info_hash: bytes) -> str:
    return InfoHash(info_hash).hex()


@dataclass(frozen=True)
class TrackerEndpoint:
    host: str
    port: int

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


def tracker_endpoint(url: str) -> TrackerEndpoint | None:
    """Return the host/port of a ``udp://`` tracker URL, or None if not announceable."""
    try:
        parts = urllib.parse.urlsplit(url)
        port = parts.port
    except ValueError:
        return None
    if parts.scheme.lower() != "udp" or not parts.hostname or not port:
        return None
    return TrackerEndpoint(parts.hostname, port)


@dataclass(frozen=True)
class MagnetLink:
    info_hash: InfoHash
    display_name: str | None = None
    trackers: tuple[str, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def udp_trackers(self) -> list[TrackerEndpoint]:
        out = []
        for url in self.trackers:
            ep = tracker_endpoint(url)
            if ep is not None and ep not in out:
                out.append(ep)
        return out

    def to_uri(self) -> str:
        parts = [f"xt=urn:btih:{self.info_hash.hex()}"]
        if self.display_name:
            parts.append("dn=" + urllib.parse.quote(self.display_name, safe=""))
        parts.extend("tr=" + urllib.parse.quote(t, safe="") for t in self.trackers)
        return "magnet:?" + "&".join(parts)


def parse_magnet(uri: str) -> MagnetLink:
    """Parse a magnet URI.

    The first valid ``urn:btih`` component wins; later or invalid ones are
    kept as warnings. Tracker order is preserved exactly.

    Raises:
        MalformedUri: not a magnet URI at all.
        MissingHash: no btih component is present.
        MalformedHash: btih components exist but none decodes to 20 bytes.
    """
    if not isinstance(uri, str):
        raise MalformedUri("magnet URI must be text")
    try:
        parts = urllib.parse.urlsplit(uri.strip())
    except ValueError as exc:
        raise MalformedUri(str(exc)) from exc
    if parts.scheme.lower() != "magnet":
        raise MalformedUri(f"not a magnet URI: {uri[:60]!r}")
    # urlsplit leaves "magnet:?a=b" with an empty path and the query in .query
    query = parts.query or parts.path.lstrip("?")
    try:
        params = urllib.parse.parse_qsl(query, keep_blank_values=True, strict_parsing=False)
    except ValueError as exc:
        raise MalformedUri(str(exc)) from exc

    info_hash: InfoHash | None = None
    bad_hash: MalformedHash | None = None
    display_name = None
    trackers: list[str] = []
    warnings: list[str] = []
    for key, value in params:
        key = key.lower()
        if key == "xt" or key.startswith("xt."):
            if not value.lower().startswith("urn:btih:"):
                warnings.append(f"ignored xt {value!r}")
                continue
            try:
                candidate = InfoHash.from_text(value[len("urn:btih:"):])
            except MalformedHash as exc:
                bad_hash = bad_hash or exc
                warnings.append(f"invalid btih {value!r}")
                continue
            if info_hash is None:
                info_hash = candidate
            elif candidate != info_hash:
                warnings.append(f"extra btih {candidate.hex()} ignored")
        elif key == "dn" and display_name is None:
            display_name = value
        elif _TRACKER_KEY_RE.match(key):
            trackers.append(value)

    if info_hash is None:
        if bad_hash is not None:
            raise bad_hash
        raise MissingHash("magnet URI has no xt=urn:btih component")
    for w in warnings:
        log.warning("magnet %s: %s", info_hash.hex(), w)
    return MagnetLink(info_hash, display_name or None, tuple(trackers), tuple(warnings))
