"""Service and CLI configuration: JSON config file with environment overrides.

Every value has a default, so both the config file and the environment are
optional. Environment variables (VIDMOMENT_*) take precedence over the
config file, which takes precedence over defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .backends import GroundTruthSidecar, MockEmbedder, MockVerifier, RemoteEmbedder, RemoteVerifier

DEFAULT_DATA_DIR = "vidmoment-data"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RemoteSettings:
    embed_url: str = "http://127.0.0.1:9000/embed"
    verify_url: str = "http://127.0.0.1:9000/verify"
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.25
    concurrency_cap: int = 8


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: str = DEFAULT_DATA_DIR
    host: str = "127.0.0.1"
    port: int = 8099
    backend: str = "mock"  # "mock" | "remote"
    embed_dimension: int = 64
    seed: int = 0
    engine_workers: int = 1
    job_workers: int = 2
    remote: RemoteSettings = field(default_factory=RemoteSettings)

    def __post_init__(self):
        if self.backend not in ("mock", "remote"):
            raise ConfigError(f"backend must be 'mock' or 'remote', got {self.backend!r}")
        if self.engine_workers < 1 or self.job_workers < 1:
            raise ConfigError("worker counts must be >= 1")


_ENV_FIELDS = {
    "VIDMOMENT_DATA_DIR": ("data_dir", str),
    "VIDMOMENT_HOST": ("host", str),
    "VIDMOMENT_PORT": ("port", int),
    "VIDMOMENT_BACKEND": ("backend", str),
    "VIDMOMENT_EMBED_DIM": ("embed_dimension", int),
    "VIDMOMENT_SEED": ("seed", int),
    "VIDMOMENT_WORKERS": ("engine_workers", int),
    "VIDMOMENT_JOB_WORKERS": ("job_workers", int),
}

_ENV_REMOTE_FIELDS = {
    "VIDMOMENT_EMBED_URL": ("embed_url", str),
    "VIDMOMENT_VERIFY_URL": ("verify_url", str),
    "VIDMOMENT_TIMEOUT_S": ("timeout_s", float),
    "VIDMOMENT_MAX_RETRIES": ("max_retries", int),
    "VIDMOMENT_BACKOFF_S": ("backoff_s", float),
    "VIDMOMENT_CONCURRENCY_CAP": ("concurrency_cap", int),
}


def load_config(
    path: str | Path | None = None, env: Mapping[str, str] | None = None
) -> ServiceConfig:
    env = os.environ if env is None else env
    file_values: dict = {}
    if path is not None:
        try:
            file_values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}")
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")

    remote_values = dict(file_values.pop("remote", {}) or {})
    known = {f for f, _ in _ENV_FIELDS.values()}
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    for var, (name, cast) in _ENV_FIELDS.items():
        if var in env:
            try:
                file_values[name] = cast(env[var])
            except ValueError as exc:
                raise ConfigError(f"{var}: {exc}")
    for var, (name, cast) in _ENV_REMOTE_FIELDS.items():
        if var in env:
            try:
                remote_values[name] = cast(env[var])
            except ValueError as exc:
                raise ConfigError(f"{var}: {exc}")

    try:
        remote = RemoteSettings(**remote_values)
        return ServiceConfig(remote=remote, **file_values)
    except TypeError as exc:
        raise ConfigError(str(exc))


def build_backends(config: ServiceConfig, sidecar: GroundTruthSidecar):
    """Construct the (embedder, verifier) pair the configuration selects."""
    if config.backend == "mock":
        return (
            MockEmbedder(config.embed_dimension, config.seed, sidecar),
            MockVerifier(sidecar),
        )
    remote = config.remote
    embedder = RemoteEmbedder(
        remote.embed_url,
        config.embed_dimension,
        timeout_s=remote.timeout_s,
        max_retries=remote.max_retries,
        backoff_s=remote.backoff_s,
        concurrency_cap=remote.concurrency_cap,
    )
    verifier = RemoteVerifier(
        remote.verify_url,
        timeout_s=remote.timeout_s,
        max_retries=remote.max_retries,
        backoff_s=remote.backoff_s,
        concurrency_cap=remote.concurrency_cap,
    )
    return embedder, verifier
