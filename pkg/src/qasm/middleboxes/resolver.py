"""Middlebox-side view of the tracking agent: a local DCID cache plus the
reactive (query) and proactive (subscribe + push) ways of filling it."""

from __future__ import annotations

import enum
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable

from ..agent.link import AgentLink
from ..agent.protocol import PushUpdate, Query, RecordBody, Subscribe
from ..packet import Packet
from ..tracking import Endpoint, Protocol
from ..wire import FIXED_BIT, LONG_HEADER_BIT, MAX_CID_LENGTH, ConnectionId, peek_dcid

DEFAULT_NEGATIVE_TTL = 0.05
QUIC_PORTS = frozenset({443})
_UDP = int(Protocol.UDP)


class Mode(enum.Enum):
    DEFAULT = "default"
    REACTIVE = "reactive"
    PROACTIVE = "proactive"


@dataclass(frozen=True, slots=True)
class CacheEntry:
    o_dcid: ConnectionId
    dcid_len: int


class LocalDcidCache:
    """dcid -> (o_dcid, dcid_len) and client addr -> (o_dcid, active dcid_len).

    Entries only come from query responses and pushes. Lookups are single
    dict reads and never block; writers serialize on a lock.
    """

    def __init__(self) -> None:
        self._dcids: dict[bytes, CacheEntry] = {}
        self._addrs: dict[Endpoint, CacheEntry] = {}
        self._last_seq: dict[bytes, int] = {}
        self._write = threading.Lock()
        self.lengths: tuple[int, ...] = ()

    def get(self, dcid: bytes) -> CacheEntry | None:
        return self._dcids.get(dcid)

    def by_addr(self, addr: Endpoint) -> CacheEntry | None:
        return self._addrs.get(addr)

    def learn(self, body: RecordBody, seq: int | None = None) -> bool:
        """Merge a record body; pushes older than one already applied are ignored."""
        with self._write:
            if seq is not None:
                last = self._last_seq.get(body.o_dcid)
                if last is not None and seq <= last:
                    return False
                self._last_seq[body.o_dcid] = seq
            for dcid in body.dcids:
                self._dcids[dcid] = CacheEntry(body.o_dcid, len(dcid))
            active = CacheEntry(body.o_dcid, body.dcid_len)
            for addr in body.client_addrs:
                self._addrs[addr] = active
            lengths = set(self.lengths)
            lengths.update(len(d) for d in body.dcids)
            if len(lengths) != len(self.lengths):
                self.lengths = tuple(sorted(lengths))
            return True

    def __len__(self) -> int:
        return len(self._dcids)

    def __contains__(self, dcid: bytes) -> bool:
        return dcid in self._dcids


class TrackingResolver:
    """Maps a QUIC packet to its connection's O-DCID.

    ``resolve_outbound`` returns ``(dcid, o_dcid)``; ``o_dcid`` is None when the
    connection is unknown, in which case callers treat the DCID as a new flow.
    """

    def __init__(
        self,
        mode: Mode,
        link: AgentLink | None = None,
        clock: Callable[[], float] = time.monotonic,
        default_dcid_len: int = 8,
        push_endpoint: Endpoint | None = None,
        negative_ttl: float = DEFAULT_NEGATIVE_TTL,
        quic_ports: Iterable[int] = QUIC_PORTS,
    ) -> None:
        if mode is Mode.DEFAULT:
            raise ValueError("a resolver needs reactive or proactive mode")
        if link is None:
            raise ValueError("a resolver needs an agent link")
        if mode is Mode.PROACTIVE and push_endpoint is None:
            raise ValueError("proactive mode needs a push endpoint")
        if not 0 <= default_dcid_len <= MAX_CID_LENGTH:
            raise ValueError("default_dcid_len out of range")
        self.mode = mode
        self.link = link
        self.clock = clock
        self.default_dcid_len = default_dcid_len
        self.push_endpoint = push_endpoint
        self.negative_ttl = negative_ttl
        self.quic_ports = frozenset(quic_ports)
        self.cache = LocalDcidCache()
        self.stats: Counter[str] = Counter()
        self._negative: dict[object, float] = {}
        self._subscribed: set[bytes] = set()
        # dcid length seen from a source address that is not a client address
        # (e.g. the public side of an upstream NAT)
        self._len_hints: dict[Endpoint, int] = {}

    def is_quic(self, pkt: Packet) -> bool:
        payload = pkt.payload
        return (
            pkt.protocol == _UDP
            and bool(payload)
            and bool(payload[0] & FIXED_BIT)
            and (pkt.dst.port in self.quic_ports or pkt.src.port in self.quic_ports)
        )

    def _guess_len(self, pkt: Packet) -> int:
        entry = self.cache.by_addr(pkt.src)
        if entry is not None:
            return entry.dcid_len
        hint = self._len_hints.get(pkt.src)
        if hint is not None:
            return hint
        payload = pkt.payload
        for length in self.cache.lengths:
            if payload[1 : 1 + length] in self.cache:
                return length
        return self.default_dcid_len

    def extract_dcid(self, pkt: Packet) -> bytes | None:
        payload = pkt.payload
        if payload[0] & LONG_HEADER_BIT:
            return peek_dcid(payload, 0)
        return peek_dcid(payload, self._guess_len(pkt))

    def resolve_outbound(self, pkt: Packet) -> tuple[bytes | None, ConnectionId | None]:
        payload = pkt.payload
        if not payload[0] & LONG_HEADER_BIT:
            # hot path: the DCID is one we already know, at one of the known lengths
            known = self.cache._dcids
            for length in self.cache.lengths:
                dcid = payload[1 : 1 + length]
                entry = known.get(dcid)
                if entry is not None:
                    self.stats["cache_hits"] += 1
                    return dcid, entry.o_dcid
        dcid = self.extract_dcid(pkt)
        if dcid is None:
            return None, None
        entry = self.cache.get(dcid)
        if entry is not None:
            self.stats["cache_hits"] += 1
            return dcid, entry.o_dcid
        if self.mode is Mode.REACTIVE:
            dcid, o_dcid = self._query(pkt, dcid)
        else:
            o_dcid = self._subscribe(dcid)
        if o_dcid is None and pkt.payload[0] & LONG_HEADER_BIT:
            # the DCID of a client's Initial is by definition its O-DCID
            o_dcid = ConnectionId(dcid)
        if o_dcid is not None:
            self._len_hints[pkt.src] = len(dcid)
        return dcid, o_dcid

    def _negative_hit(self, key: object) -> bool:
        expiry = self._negative.get(key)
        if expiry is None:
            return False
        if self.clock() < expiry:
            self.stats["negative_hits"] += 1
            return True
        del self._negative[key]
        return False

    def _query(self, pkt: Packet, dcid: bytes) -> tuple[bytes, ConnectionId | None]:
        if self._negative_hit(dcid):
            return dcid, None
        self.stats["queries"] += 1
        resp = self.link.query(Query(ConnectionId(dcid), pkt.src, pkt.dst))
        if resp is None or resp.record is None:
            self._negative[dcid] = self.clock() + self.negative_ttl
            return dcid, None
        body = resp.record
        self.cache.learn(body)
        entry = self.cache.get(dcid)
        if entry is None and not pkt.payload[0] & LONG_HEADER_BIT:
            # matched on the source address; our DCID length guess may have been off
            reparsed = peek_dcid(pkt.payload, body.dcid_len)
            if reparsed is not None:
                dcid = reparsed
                entry = self.cache.get(dcid)
        return dcid, body.o_dcid if entry is None else entry.o_dcid

    def _subscribe(self, dcid: bytes) -> ConnectionId | None:
        if dcid not in self._subscribed:
            self._subscribed.add(dcid)
            self.stats["subscribes"] += 1
            self.link.subscribe(Subscribe(ConnectionId(dcid), self.push_endpoint))
            # an in-process agent may have pushed synchronously
            entry = self.cache.get(dcid)
            if entry is not None:
                return entry.o_dcid
        return None

    def resolve_inbound(self, pkt: Packet) -> ConnectionId | None:
        """Server->client packets are matched on the destination (client) address."""
        entry = self.cache.by_addr(pkt.dst)
        if entry is not None:
            return entry.o_dcid
        if self.mode is not Mode.REACTIVE or self._negative_hit(pkt.dst):
            return None
        self.stats["queries"] += 1
        resp = self.link.query(Query(ConnectionId(), pkt.dst, pkt.src))
        if resp is None or resp.record is None:
            self._negative[pkt.dst] = self.clock() + self.negative_ttl
            return None
        self.cache.learn(resp.record)
        return resp.record.o_dcid

    def on_push(self, msg: PushUpdate) -> None:
        if self.cache.learn(msg.record, msg.seq):
            self.stats["pushes"] += 1
        else:
            self.stats["stale_pushes"] += 1
