from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..agent.link import AgentLink
from ..emulator import MigrationPolicy
from ..middleboxes import (
    Conntrack,
    DefaultNat,
    DefaultRateLimiter,
    Forwarder,
    LoadBalancer,
    Middlebox,
    Mode,
    PublicPool,
    QuicConntrack,
    QuicLoadBalancer,
    QuicNat,
    QuicRateLimiter,
    TrackingResolver,
)
from ..middleboxes.nat import DEFAULT_BINDING_TIMEOUT
from ..tracking import Endpoint

KINDS = ("nat", "rl", "lb", "conntrack", "forwarder")
MAX_CHAIN = 5


class ConfigError(ValueError):
    pass


@dataclass
class MiddleboxSpec:
    kind: str
    mode: Mode = Mode.DEFAULT
    pool_size: int = 1024
    public_ip: str | None = None
    port_start: int = 19450
    binding_timeout: float | None = DEFAULT_BINDING_TIMEOUT
    rate_limit: float = 5.0
    bucket_capacity: float | None = None
    backends: int = 2
    conntrack_cap: int = 1000

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown middlebox kind {self.kind!r}")
        if self.kind == "forwarder" and self.mode is not Mode.DEFAULT:
            raise ConfigError("a forwarder has no QUIC-aware mode")
        if self.kind == "nat" and not 1 <= self.pool_size <= 0xFFFF - self.port_start + 1:
            raise ConfigError("pool size must fit in the port range")
        if self.kind == "rl" and self.rate_limit <= 0:
            raise ConfigError("rate limit must be positive")
        if self.kind == "lb" and self.backends < 1:
            raise ConfigError("load balancer needs at least one backend")
        if self.kind == "conntrack" and self.conntrack_cap < 0:
            raise ConfigError("conntrack capacity must be >= 0")


@dataclass
class ScenarioConfig:
    name: str = "custom"
    middleboxes: list[MiddleboxSpec] = field(default_factory=list)
    connections: int = 1
    packet_rate: float = 100.0
    packets: int | None = 100
    duration: float | None = None
    payload_len: int = 64
    migration: MigrationPolicy | None = None
    dcid_len: int = 8
    o_dcid: bytes | None = None
    seed: int = 0
    echo: bool = True
    server: Endpoint = Endpoint("93.184.216.34", 443)
    client_start: Endpoint = Endpoint("10.0.0.45", 10001)
    address_mode: str = "port"
    addresses: list[Endpoint] | None = None
    link_delay: float = 100e-6
    proc_delay: float = 10e-6
    control_delay: float = 20e-6
    push_delay: float = 20e-6
    query_rtt: float = 100e-6
    update_lead: float = 50e-6
    control_loss: float = 0.0
    sample_interval: float = 1.0

    @property
    def packets_per_connection(self) -> int:
        if self.packets is not None:
            return self.packets
        return int(round(self.duration * self.packet_rate))

    @property
    def active_time(self) -> float:
        """How long each connection runs (used to bound time-based migrations)."""
        if self.duration is not None:
            return self.duration
        return self.packets_per_connection / self.packet_rate

    def validate(self) -> None:
        if len(self.middleboxes) > MAX_CHAIN:
            raise ConfigError(f"at most {MAX_CHAIN} middleboxes in a chain")
        for spec in self.middleboxes:
            spec.validate()
        if self.connections < 1:
            raise ConfigError("need at least one connection")
        if self.packet_rate <= 0:
            raise ConfigError("packet rate must be positive")
        if self.packets is None and self.duration is None:
            raise ConfigError("set a packet count or a duration")
        if self.packets is not None and self.packets < 1:
            raise ConfigError("packet count must be >= 1")
        if self.duration is not None and self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.payload_len < 8:
            raise ConfigError("payload must be at least 8 bytes (packet tag)")
        if not 1 <= self.dcid_len <= 20:
            raise ConfigError("dcid length must be in [1, 20]")
        if self.o_dcid is not None and (self.connections != 1 or len(self.o_dcid) != self.dcid_len):
            raise ConfigError("a fixed O-DCID needs one connection and a matching dcid length")
        if self.address_mode not in ("port", "ip", "random"):
            raise ConfigError("address mode must be port, ip or random")
        if not 0.0 <= self.control_loss < 1.0:
            raise ConfigError("control loss must be in [0, 1)")
        for name in ("link_delay", "proc_delay", "control_delay", "push_delay", "query_rtt", "update_lead"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


def default_public_ip(index: int) -> str:
    return f"65.12.81.{14 + index}"


def lb_backends(server: Endpoint, count: int) -> list[Endpoint]:
    return [Endpoint(f"10.1.0.{i + 1}", server.port) for i in range(count)]


def build_middlebox(
    spec: MiddleboxSpec,
    index: int,
    clock: Callable[[], float],
    server: Endpoint,
    link: AgentLink | None = None,
    push_endpoint: Endpoint | None = None,
    default_dcid_len: int = 8,
) -> Middlebox:
    name = f"{spec.kind}{index}"
    resolver = None
    if spec.mode is not Mode.DEFAULT:
        resolver = TrackingResolver(
            spec.mode,
            link,
            clock=clock,
            default_dcid_len=default_dcid_len,
            push_endpoint=push_endpoint,
            quic_ports={server.port},
        )
    if spec.kind == "nat":
        pool = PublicPool.sized(spec.public_ip or default_public_ip(index), spec.port_start, spec.pool_size)
        if resolver is None:
            return DefaultNat(pool, spec.binding_timeout, name, clock)
        return QuicNat(pool, resolver, spec.binding_timeout, name, clock)
    if spec.kind == "rl":
        if resolver is None:
            return DefaultRateLimiter(spec.rate_limit, spec.bucket_capacity, name, clock)
        return QuicRateLimiter(spec.rate_limit, resolver, spec.bucket_capacity, name, clock)
    if spec.kind == "lb":
        backends = lb_backends(server, spec.backends)
        if resolver is None:
            return LoadBalancer(backends, server, name, clock)
        return QuicLoadBalancer(backends, resolver, server, name, clock)
    if spec.kind == "conntrack":
        if resolver is None:
            return Conntrack(spec.conntrack_cap, name, clock)
        return QuicConntrack(spec.conntrack_cap, resolver, name, clock)
    if spec.kind == "forwarder":
        return Forwarder(name, clock)
    raise ConfigError(f"unknown middlebox kind {spec.kind!r}")
