"""Server configuration: one TOML file, secrets only via environment."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # Python 3.10
    import tomli as tomllib

from ..errors import ConfigurationError
from ..gateway import AuthRef, BackendConfig, Pricing, RetryPolicy

__all__ = ["ServerConfig", "load_config", "backend_from_mapping"]


@dataclass
class ServerConfig:
    store_path: str = "labelforge.db"
    host: str = "127.0.0.1"
    port: int = 8000
    static_dir: str | None = None
    operator_token: str | None = None
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    defaults: dict = field(default_factory=dict)


def backend_from_mapping(data: dict) -> BackendConfig:
    try:
        name = data["name"]
        base_url = data["base_url"]
        model = data["model"]
    except KeyError as exc:
        raise ConfigurationError(f"backend config missing {exc.args[0]!r}") from None
    auth = None
    if "auth" in data:
        a = data["auth"]
        auth = AuthRef(
            header=a.get("header", "Authorization"),
            env_var=a.get("env_var", "LABELFORGE_API_KEY"),
            scheme=a.get("scheme", "Bearer"),
        )
    retry = RetryPolicy(
        max_attempts=int(data.get("retry", {}).get("max_attempts", 3)),
        backoff_base=float(data.get("retry", {}).get("backoff_base", 0.5)),
        backoff_cap=float(data.get("retry", {}).get("backoff_cap", 30.0)),
    )
    price = None
    if "price" in data:
        price = Pricing(
            per_input_token=float(data["price"]["per_input_token"]),
            per_output_token=float(data["price"]["per_output_token"]),
        )
    return BackendConfig(
        name=name,
        base_url=base_url,
        model=model,
        auth=auth,
        max_concurrency=int(data.get("max_concurrency", 1)),
        timeout=float(data.get("timeout", 60.0)),
        retry=retry,
        price=price,
        temperature=float(data.get("temperature", 0.0)),
        path=data.get("path", "/v1/chat/completions"),
    )


def load_config(path: str | Path) -> ServerConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no such config file: {path}")
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    backends = {}
    for entry in data.get("backends", []):
        cfg = backend_from_mapping(entry)
        if cfg.name in backends:
            raise ConfigurationError(f"duplicate backend name {cfg.name!r}")
        backends[cfg.name] = cfg
    bind = data.get("bind", "127.0.0.1:8000")
    if ":" not in bind:
        raise ConfigurationError(f"bind must be host:port, got {bind!r}")
    host, _, port_s = bind.rpartition(":")
    try:
        port = int(port_s)
    except ValueError:
        raise ConfigurationError(f"bind port must be an integer, got {port_s!r}") from None
    return ServerConfig(
        store_path=data.get("store", "labelforge.db"),
        host=host,
        port=port,
        static_dir=data.get("static_dir"),
        operator_token=data.get("operator_token"),
        backends=backends,
        defaults=data.get("defaults", {}),
    )
