"""Torrent swarm monitoring: UDP tracker harvesting, IP enrichment, co-download networks."""

from __future__ import annotations

__version__ = "0.1.0"

from .magnet import InfoHash, MagnetLink, parse_magnet
from .store import Store

__all__ = ["InfoHash", "MagnetLink", "Store", "parse_magnet", "__version__"]
