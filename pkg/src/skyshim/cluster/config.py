"""Cluster configuration and its key/value file format.

One ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored; unknown keys are an error. Example::

    node_count = 4
    replication = 3
    pg_count = 128
    io_depth = 2
    stripe_unit = 4194304
    transport = sim        # or tcp
    seed = 7

The ``SKYSHIM_SEED`` environment variable, when set, overrides ``seed``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from skyshim.errors import ErrorCode, SkyshimError

SEED_ENV = "SKYSHIM_SEED"


@dataclass(frozen=True)
class ClusterConfig:
    node_count: int = 4
    replication: int = 3
    pg_count: int = 128
    io_depth: int = 2
    stripe_unit: int = 64 * 1024 * 1024
    transport: str = "sim"
    seed: int = 0
    codec: int = 0
    data_dir: str = ""
    # tcp
    host: str = "127.0.0.1"
    base_port: int = 0
    # simulator cost model
    bandwidth: float = 1.25e9
    latency: float = 50e-6
    latency_jitter: float = 0.0
    disk_bandwidth: float = 2e9
    node_unit_cost: float = 2e-8
    client_unit_cost: float = 2e-8
    client_cores: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "transport", str(self.transport).lower())
        problems = []
        if self.node_count < 1:
            problems.append("node_count must be >= 1")
        if not 1 <= self.replication <= self.node_count:
            problems.append(f"replication {self.replication} must be in [1, node_count={self.node_count}]")
        if self.pg_count < 1 or self.pg_count & (self.pg_count - 1):
            problems.append(f"pg_count {self.pg_count} is not a power of two")
        if self.io_depth < 1:
            problems.append("io_depth must be >= 1")
        if self.stripe_unit < 1:
            problems.append("stripe_unit must be positive")
        if self.transport not in ("sim", "tcp"):
            problems.append(f"transport must be sim or tcp, got {self.transport!r}")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must fit in 64 bits")
        if not 0 <= self.base_port < 65536:
            problems.append("base_port out of range")
        if min(self.bandwidth, self.disk_bandwidth) <= 0 or self.client_cores < 1:
            problems.append("bandwidths and client_cores must be positive")
        if min(self.latency, self.latency_jitter, self.node_unit_cost, self.client_unit_cost) < 0:
            problems.append("latencies and unit costs must be non-negative")
        if problems:
            raise SkyshimError(ErrorCode.INVALID_CONFIG, "; ".join(problems))

    def replace(self, **changes) -> "ClusterConfig":
        return dataclasses.replace(self, **changes)

    def with_env(self, environ: Mapping[str, str] | None = None) -> "ClusterConfig":
        environ = os.environ if environ is None else environ
        raw = environ.get(SEED_ENV)
        if raw is None or raw == "":
            return self
        try:
            return self.replace(seed=int(raw, 0))
        except ValueError:
            raise SkyshimError(ErrorCode.INVALID_CONFIG, f"{SEED_ENV}={raw!r} is not an integer") from None

    @classmethod
    def parse(cls, text: str, base: "ClusterConfig | None" = None) -> "ClusterConfig":
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or not key:
                raise SkyshimError(ErrorCode.INVALID_CONFIG, f"line {lineno}: expected key = value")
            if key not in types:
                raise SkyshimError(ErrorCode.INVALID_CONFIG, f"line {lineno}: unknown key {key!r}")
            changes[key] = _coerce(types[key], value, lineno)
        return (base or cls()).replace(**changes)

    @classmethod
    def from_file(cls, path: str | os.PathLike, base: "ClusterConfig | None" = None) -> "ClusterConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise SkyshimError(ErrorCode.INVALID_CONFIG, f"cannot read {path}: {exc}") from None
        return cls.parse(text, base)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce(kind: str, value: str, lineno: int):
    try:
        if kind == "int":
            return int(value, 0)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise SkyshimError(ErrorCode.INVALID_CONFIG, f"line {lineno}: bad {kind} {value!r}") from None
