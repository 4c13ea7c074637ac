"""Pipeline configuration: a flat TOML key set, defaults, and CLI overrides.

Recognised keys (all optional)::

    store = "swarm.db"            # dataset file; lock file and run log sit beside it
    run_log = "swarm.db.runlog"
    trackers = ["udp://host:port/announce"]   # added to every magnet's own list
    tracker_timeout = 15.0        # first-attempt wait, doubled on each retry
    tracker_retries = 3
    timeout_scale = 1.0           # multiplies every wait (tests compress it)
    tracker_concurrency = 8
    tracker_rate = 0.0            # requests/s per tracker, 0 = unlimited
    num_want = 200
    providers = ["offline"]       # in precedence order: offline, ip-api, ipinfo
    offline_provider = "profiles.csv"
    provider_rate = 1.0
    provider_timeout = 10.0
    ipinfo_token_env = "IPINFO_TOKEN"   # name of the env var holding the secret
    flag_lists = ["cem.txt"]
    min_links = 7
    top_fraction = 0.0001
    top_k = 10
    flag_label = "cem"
    flag_categories = []          # torrent categories for the IP studies, [] = all
    content_uploader = ""         # scope of the content-network study
    content_categories = []
    distance = "hops"             # or "inverse_weight"
    pseudonymize = true
    coord_decimals = 4
    places = ""                   # custom place table, "" = bundled one
    interest_rules = ""           # custom interest rules, "" = bundled one

Secrets are never read from the file; only environment variables named by
``*_env`` keys supply them.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    store: str = "swarm.db"
    run_log: str = ""
    trackers: tuple[str, ...] = ()
    tracker_timeout: float = 15.0
    tracker_retries: int = 3
    timeout_scale: float = 1.0
    tracker_concurrency: int = 8
    tracker_rate: float = 0.0
    num_want: int = 200
    providers: tuple[str, ...] = ("offline",)
    offline_provider: str = ""
    provider_rate: float = 1.0
    provider_timeout: float = 10.0
    ipinfo_token_env: str = "IPINFO_TOKEN"
    flag_lists: tuple[str, ...] = ()
    min_links: int = 7
    top_fraction: float = 0.0001
    top_k: int = 10
    flag_label: str = "cem"
    flag_categories: tuple[str, ...] = ()
    content_uploader: str = ""
    content_categories: tuple[str, ...] = ()
    distance: str = "hops"
    pseudonymize: bool = True
    coord_decimals: int = 4
    places: str = ""
    interest_rules: str = ""
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def store_path(self) -> Path:
        return self.resolve(self.store)

    @property
    def run_log_path(self) -> Path:
        return self.resolve(self.run_log) if self.run_log else Path(f"{self.store_path}.runlog")

    @property
    def lock_path(self) -> Path:
        return Path(f"{self.store_path}.lock")

    def resolve(self, path: str) -> Path:
        p = Path(path).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    def override(self, **values: Any) -> PipelineConfig:
        """Apply non-None overrides (e.g. from CLI flags) with the same validation."""
        merged = {k: v for k, v in values.items() if v is not None}
        return validate(replace(self, **_coerce(merged)))


_FIELDS = {f.name: f for f in fields(PipelineConfig) if f.name != "base_dir"}


def _coerce(raw: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in raw.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(PipelineConfig, key)
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
                out[key] = value
            elif isinstance(default, tuple):
                if isinstance(value, str) or not isinstance(value, (list, tuple)):
                    raise TypeError
                out[key] = tuple(str(v) for v in value)
            elif isinstance(default, int):
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                out[key] = int(value)
            elif isinstance(default, float):
                if isinstance(value, bool):
                    raise TypeError
                out[key] = float(value)
            else:
                if not isinstance(value, str):
                    raise TypeError
                out[key] = value
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} has the wrong type: {value!r}") from None
    return out


def validate(cfg: PipelineConfig) -> PipelineConfig:
    if not 0 < cfg.top_fraction <= 1:
        raise ConfigError(f"top_fraction must be in (0, 1], got {cfg.top_fraction}")
    if cfg.min_links < 0 or cfg.top_k < 0 or cfg.tracker_retries < 0:
        raise ConfigError("min_links, top_k and tracker_retries must be non-negative")
    if cfg.tracker_concurrency < 1:
        raise ConfigError("tracker_concurrency must be at least 1")
    if cfg.timeout_scale <= 0 or cfg.tracker_timeout <= 0:
        raise ConfigError("tracker_timeout and timeout_scale must be positive")
    if cfg.distance not in ("hops", "inverse_weight"):
        raise ConfigError(f"distance must be 'hops' or 'inverse_weight', got {cfg.distance!r}")
    for name in cfg.providers:
        if name not in ("offline", "ip-api", "ipinfo"):
            raise ConfigError(f"unknown provider {name!r}")
    return cfg


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Read a TOML file (or return defaults). Relative paths resolve against its directory."""
    if path is None:
        return validate(PipelineConfig())
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not supported, keys must be flat: {nested}")
    return validate(replace(PipelineConfig(base_dir=path.parent.resolve()), **_coerce(raw)))
