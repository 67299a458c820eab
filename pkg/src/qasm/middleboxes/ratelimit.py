from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

from ..packet import Packet
from .base import Case, Direction, Drop, Middlebox
from .resolver import TrackingResolver


@dataclass
class TokenBucket:
    capacity: float
    refill_rate: float
    tokens: float
    last_refill: float

    @classmethod
    def full(cls, capacity: float, refill_rate: float, now: float) -> TokenBucket:
        return cls(capacity, refill_rate, capacity, now)

    def refill(self, now: float) -> None:
        if now > self.last_refill:
            self.tokens = min(self.capacity, self.tokens + self.refill_rate * (now - self.last_refill))
            self.last_refill = now

    def take(self, now: float) -> bool:
        self.refill(now)
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False


class DefaultRateLimiter(Middlebox):
    """One token bucket per 5-tuple. Buckets start full."""

    kind = "rl"

    def __init__(
        self,
        rate: float,
        capacity: float | None = None,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(name, clock)
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = rate * 1.0 if capacity is None else capacity
        if self.capacity < 1:
            raise ValueError("bucket capacity below one token would drop everything")
        self.buckets: dict[object, TokenBucket] = {}

    def table_size(self) -> int:
        return len(self.buckets)

    def flow_key(self, pkt: Packet, direction: Direction) -> object:
        return pkt.five_tuple

    def handle(self, pkt: Packet, direction: Direction) -> Packet | Drop:
        key = self.flow_key(pkt, direction)
        now = self.clock()
        bucket = self.buckets.get(key)
        if bucket is None:
            bucket = self.buckets[key] = TokenBucket.full(self.capacity, self.rate, now)
            self.case = Case.CREATE
        if bucket.take(now):
            return pkt
        return Drop("rate_limited")


class QuicRateLimiter(DefaultRateLimiter):
    """QUIC flows share a bucket per (O-DCID, direction); everything else is per 5-tuple."""

    kind = "quic-rl"

    def __init__(
        self,
        rate: float,
        resolver: TrackingResolver,
        capacity: float | None = None,
        name: str | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        super().__init__(rate, capacity, name, clock)
        self.resolver = resolver

    def flow_key(self, pkt: Packet, direction: Direction) -> object:
        if not self.resolver.is_quic(pkt):
            return pkt.five_tuple
        if direction is Direction.OUTBOUND:
            dcid, o_dcid = self.resolver.resolve_outbound(pkt)
            if dcid is None:
                return pkt.five_tuple
            return ("quic", o_dcid if o_dcid is not None else dcid, direction)
        o_dcid = self.resolver.resolve_inbound(pkt)
        if o_dcid is None:
            return pkt.five_tuple
        return ("quic", o_dcid, direction)
