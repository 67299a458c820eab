from __future__ import annotations

import time
from typing import Callable

from ..packet import Packet
from .base import Case, Direction, Drop, Middlebox
from .resolver import TrackingResolver


def canonical_key(pkt: Packet) -> tuple:
    """Direction-independent 5-tuple, so a reply lands on its original entry."""
    a = (pkt.src.ip, pkt.src.port)
    b = (pkt.dst.ip, pkt.dst.port)
    return (pkt.protocol, a, b) if a <= b else (pkt.protocol, b, a)


class Conntrack(Middlebox):
    """Flow table with a hard entry cap: unknown flows are dropped once full."""

    kind = "conntrack"

    def __init__(
        self,
        capacity: int,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(name, clock)
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.entries: dict[object, float] = {}
        self.rejected_new = 0

    def table_size(self) -> int:
        return len(self.entries)

    def key_for(self, pkt: Packet, direction: Direction) -> object:
        return canonical_key(pkt)

    def handle(self, pkt: Packet, direction: Direction) -> Packet | Drop:
        key = self.key_for(pkt, direction)
        if key not in self.entries:
            if len(self.entries) >= self.capacity:
                self.rejected_new += 1
                return Drop("table_full")
            self.case = Case.CREATE
        self.entries[key] = self.clock()
        return pkt


class QuicConntrack(Conntrack):
    """Keys QUIC packets by O-DCID instead of the 5-tuple."""

    kind = "quic-conntrack"

    def __init__(
        self,
        capacity: int,
        resolver: TrackingResolver,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(capacity, name, clock)
        self.resolver = resolver

    def key_for(self, pkt: Packet, direction: Direction) -> object:
        if not self.resolver.is_quic(pkt):
            return canonical_key(pkt)
        if direction is Direction.OUTBOUND:
            dcid, o_dcid = self.resolver.resolve_outbound(pkt)
            if dcid is None:
                return canonical_key(pkt)
            return ("quic", o_dcid if o_dcid is not None else dcid)
        o_dcid = self.resolver.resolve_inbound(pkt)
        return ("quic", o_dcid) if o_dcid is not None else canonical_key(pkt)
