"""NAPT: the 5-tuple-keyed default and the O-DCID-keyed QUIC-aware variant.

Both share one public-endpoint index, so the public side is handled the
same way for both: look up the binding owning the destination endpoint and
rewrite to its active (most recent) private endpoint.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..packet import Packet
from ..tracking import Endpoint, Protocol
from ..wire import ConnectionId
from .base import Case, Direction, Drop, Middlebox
from .resolver import TrackingResolver

DEFAULT_BINDING_TIMEOUT = 300.0
SUPPORTED = frozenset((Protocol.UDP, Protocol.TCP))


@dataclass
class NatBinding:
    o_dcid: ConnectionId | None
    protocol: int
    # private endpoints in order of last use; the last one is active
    history: dict[Endpoint, None]
    public: Endpoint
    last_used: float = 0.0
    key: object = field(default=None, repr=False)
    active: Endpoint = field(init=False)

    def __post_init__(self) -> None:
        self.active = next(reversed(self.history))

    @property
    def private_endpoints(self) -> list[Endpoint]:
        return list(self.history)

    def touch_private(self, ep: Endpoint) -> bool:
        """Make ``ep`` the active private endpoint; True if that changed anything."""
        if self.active == ep:
            return False
        self.history.pop(ep, None)
        self.history[ep] = None
        self.active = ep
        return True


class PublicPool:
    """Public (ip, port) pairs handed out in order: every port of the first IP,
    then the next IP. Released pairs are reused oldest-first once the fresh
    range runs out."""

    def __init__(self, ips: Sequence[str], port_start: int = 1024, port_end: int = 65535) -> None:
        if not ips:
            raise ValueError("public pool needs at least one IP")
        if not 0 <= port_start <= port_end <= 0xFFFF:
            raise ValueError("bad public port range")
        self.ips = list(ips)
        self.port_start = port_start
        self.port_end = port_end
        self._ports_per_ip = port_end - port_start + 1
        self._next = 0
        self._released: deque[Endpoint] = deque()
        self._allocated: set[Endpoint] = set()

    @classmethod
    def sized(cls, ip: str, port_start: int, size: int) -> PublicPool:
        if size < 1:
            raise ValueError("pool size must be >= 1")
        return cls([ip], port_start, port_start + size - 1)

    @property
    def capacity(self) -> int:
        return len(self.ips) * self._ports_per_ip

    @property
    def in_use(self) -> int:
        return len(self._allocated)

    @property
    def free(self) -> int:
        return self.capacity - self.in_use

    def allocate(self) -> Endpoint | None:
        if self._next < self.capacity:
            ip_idx, offset = divmod(self._next, self._ports_per_ip)
            self._next += 1
            ep = Endpoint(self.ips[ip_idx], self.port_start + offset)
        elif self._released:
            ep = self._released.popleft()
        else:
            return None
        self._allocated.add(ep)
        return ep

    def release(self, ep: Endpoint) -> None:
        if ep in self._allocated:
            self._allocated.remove(ep)
            self._released.append(ep)

    def __contains__(self, ep: Endpoint) -> bool:
        return ep in self._allocated


class DefaultNat(Middlebox):
    kind = "nat"

    def __init__(
        self,
        pool: PublicPool,
        timeout: float | None = DEFAULT_BINDING_TIMEOUT,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(name, clock)
        self.pool = pool
        self.timeout = timeout
        self.bindings: dict[object, NatBinding] = {}
        self.by_public: dict[Endpoint, NatBinding] = {}
        self.allocations = 0
        self._next_sweep = float("-inf")

    def table_size(self) -> int:
        return len(self.bindings)

    def handle(self, pkt: Packet, direction: Direction) -> Packet | Drop:
        if pkt.protocol not in SUPPORTED:
            return Drop("unsupported_protocol")
        if direction is Direction.OUTBOUND:
            return self.outbound(pkt)
        return self.inbound(pkt)

    def outbound(self, pkt: Packet) -> Packet | Drop:
        key = pkt.five_tuple
        binding = self.bindings.get(key)
        now = self.clock()
        if binding is None:
            binding = self._create(key, None, pkt, now)
            if binding is None:
                return Drop("pool_exhausted")
            self.case = Case.CREATE
        binding.last_used = now
        return pkt.with_src(binding.public)

    def inbound(self, pkt: Packet) -> Packet | Drop:
        binding = self.by_public.get(pkt.dst)
        if binding is None or binding.protocol != pkt.protocol:
            return Drop("no_binding")
        binding.last_used = self.clock()
        return pkt.with_dst(binding.active)

    def _create(self, key: object, o_dcid: ConnectionId | None, pkt: Packet, now: float) -> NatBinding | None:
        public = self.pool.allocate()
        if public is None and self.expire_idle(now):
            public = self.pool.allocate()
        if public is None:
            return None
        binding = NatBinding(o_dcid, pkt.protocol, {pkt.src: None}, public, now, key)
        self.bindings[key] = binding
        self.by_public[public] = binding
        self.allocations += 1
        return binding

    def expire_idle(self, now: float | None = None) -> int:
        """Free bindings idle past the timeout. Cheap to call often: it only
        scans once the oldest binding could actually have expired."""
        if self.timeout is None:
            return 0
        now = self.clock() if now is None else now
        if now < self._next_sweep:
            return 0
        stale = [b for b in self.bindings.values() if now - b.last_used > self.timeout]
        for binding in stale:
            del self.bindings[binding.key]
            del self.by_public[binding.public]
            self.pool.release(binding.public)
        oldest = min((b.last_used for b in self.bindings.values()), default=now)
        self._next_sweep = oldest + self.timeout
        return len(stale)


class QuicNat(DefaultNat):
    """QUIC packets are keyed by O-DCID: a migrating connection keeps one
    public endpoint and its private endpoint history grows instead."""

    kind = "quic-nat"

    def __init__(
        self,
        pool: PublicPool,
        resolver: TrackingResolver,
        timeout: float | None = DEFAULT_BINDING_TIMEOUT,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(pool, timeout, name, clock)
        self.resolver = resolver

    def outbound(self, pkt: Packet) -> Packet | Drop:
        if not self.resolver.is_quic(pkt):
            return super().outbound(pkt)
        dcid, o_dcid = self.resolver.resolve_outbound(pkt)
        if dcid is None:
            return super().outbound(pkt)
        if o_dcid is None:
            o_dcid = ConnectionId(dcid)
        key = ("quic", o_dcid)
        now = self.clock()
        binding = self.bindings.get(key)
        if binding is None:
            binding = self._create(key, o_dcid, pkt, now)
            if binding is None:
                return Drop("pool_exhausted")
            self.case = Case.CREATE
        elif binding.touch_private(pkt.src):
            self.case = Case.UPDATE
        binding.last_used = now
        return pkt.with_src(binding.public)

    def quic_bindings(self) -> list[NatBinding]:
        return [b for b in self.bindings.values() if b.o_dcid is not None]
