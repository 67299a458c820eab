from __future__ import annotations

import enum
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Union

from ..packet import Packet, PacketError


class Direction(enum.Enum):
    OUTBOUND = "private->public"
    INBOUND = "public->private"

    @property
    def reverse(self) -> Direction:
        return Direction.INBOUND if self is Direction.OUTBOUND else Direction.OUTBOUND


class Case(enum.Enum):
    """Which kind of table work a packet needed (the processing-time breakdown)."""

    LOOKUP = "lookup"
    CREATE = "create"
    UPDATE = "update"


@dataclass(frozen=True, slots=True)
class Forward:
    data: bytes
    egress: Direction


@dataclass(frozen=True, slots=True)
class Drop:
    reason: str


Action = Union[Forward, Drop]


class Middlebox:
    """Uniform ``process(bytes, direction) -> Forward | Drop`` wrapper.

    Subclasses implement :meth:`handle` on a parsed :class:`Packet` and return
    either the rewritten packet or a :class:`Drop`, setting ``self.case``.
    """

    kind = "middlebox"

    def __init__(self, name: str | None = None, clock: Callable[[], float] = time.monotonic) -> None:
        self.name = name or self.kind
        self.clock = clock
        self.offered = 0
        self.forwarded = 0
        self.drops: Counter[str] = Counter()
        self.case = Case.LOOKUP

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def process(self, data: bytes, direction: Direction) -> Action:
        self.offered += 1
        self.case = Case.LOOKUP
        try:
            pkt = Packet.from_bytes(data)
        except PacketError:
            self.drops["malformed"] += 1
            return Drop("malformed")
        out = self.handle(pkt, direction)
        if isinstance(out, Drop):
            self.drops[out.reason] += 1
            return out
        self.forwarded += 1
        return Forward(out.to_bytes(), direction)

    def handle(self, pkt: Packet, direction: Direction) -> Packet | Drop:
        raise NotImplementedError

    def table_size(self) -> int:
        return 0


class Forwarder(Middlebox):
    """Pass-through; the zero-middlebox baseline."""

    kind = "forwarder"

    def handle(self, pkt: Packet, direction: Direction) -> Packet | Drop:
        return pkt
