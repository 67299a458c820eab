from __future__ import annotations

import socket
import time
import zlib
from typing import Callable, Sequence

from ..packet import Packet
from ..tracking import Endpoint
from .base import Direction, Drop, Middlebox
from .resolver import TrackingResolver


def select_by_ip(ip: str, n_backends: int) -> int:
    """IP-hash selection: CRC-32 of the packed source address."""
    if n_backends < 1:
        raise ValueError("no backends")
    return zlib.crc32(socket.inet_aton(ip)) % n_backends


def select_by_odcid(o_dcid: bytes, n_backends: int) -> int:
    if n_backends < 1:
        raise ValueError("no backends")
    return zlib.crc32(o_dcid) % n_backends


class LoadBalancer(Middlebox):
    """Stateless L4 balancer in front of ``backends``. Outbound (client->VIP)
    packets get their destination rewritten to the chosen backend; replies
    get their source rewritten back to the VIP when one is configured."""

    kind = "lb"

    def __init__(
        self,
        backends: Sequence[Endpoint],
        vip: Endpoint | None = None,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(name, clock)
        if not backends:
            raise ValueError("load balancer needs at least one backend")
        self.backends = list(backends)
        self.vip = vip
        self.last_choice: int | None = None

    def select(self, pkt: Packet) -> int:
        return select_by_ip(pkt.src.ip, len(self.backends))

    def handle(self, pkt: Packet, direction: Direction) -> Packet | Drop:
        if direction is Direction.INBOUND:
            return pkt.with_src(self.vip) if self.vip is not None else pkt
        self.last_choice = idx = self.select(pkt)
        return pkt.with_dst(self.backends[idx])


class QuicLoadBalancer(LoadBalancer):
    kind = "quic-lb"

    def __init__(
        self,
        backends: Sequence[Endpoint],
        resolver: TrackingResolver,
        vip: Endpoint | None = None,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(backends, vip, name, clock)
        self.resolver = resolver

    def select(self, pkt: Packet) -> int:
        if self.resolver.is_quic(pkt):
            _, o_dcid = self.resolver.resolve_outbound(pkt)
            if o_dcid is not None:
                return select_by_odcid(o_dcid, len(self.backends))
        return super().select(pkt)
