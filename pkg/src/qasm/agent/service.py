from __future__ import annotations

import itertools
import logging
import threading
from collections import Counter
from typing import Callable

from ..tracking import DcidCollision, Endpoint, TrackingRecord, TrackingTable
from . import protocol as proto
from .protocol import (
    ClientUpdate,
    ConnClose,
    PushUpdate,
    Query,
    QueryResponse,
    RecordBody,
    Subscribe,
    WireError,
)

log = logging.getLogger(__name__)

Outbox = Callable[[Endpoint, bytes], None]


def _discard(dest: Endpoint, data: bytes) -> None:
    pass


class SubscriptionRegistry:
    """o_dcid -> ordered set of middlebox endpoints, plus subscriptions parked
    on DCIDs the agent has not seen yet."""

    def __init__(self) -> None:
        self._by_odcid: dict[bytes, dict[Endpoint, None]] = {}
        self._parked: dict[bytes, dict[Endpoint, None]] = {}

    def add(self, o_dcid: bytes, mbox: Endpoint) -> bool:
        subs = self._by_odcid.setdefault(o_dcid, {})
        if mbox in subs:
            return False
        subs[mbox] = None
        return True

    def park(self, dcid: bytes, mbox: Endpoint) -> bool:
        subs = self._parked.setdefault(dcid, {})
        if mbox in subs:
            return False
        subs[mbox] = None
        return True

    def promote(self, dcid: bytes, o_dcid: bytes) -> int:
        parked = self._parked.pop(dcid, None)
        if not parked:
            return 0
        return sum(self.add(o_dcid, mbox) for mbox in parked)

    def subscribers(self, o_dcid: bytes) -> list[Endpoint]:
        return list(self._by_odcid.get(o_dcid, ()))

    def parked(self, dcid: bytes) -> list[Endpoint]:
        return list(self._parked.get(dcid, ()))

    def drop(self, o_dcid: bytes, dcids: list[bytes] = ()) -> None:
        self._by_odcid.pop(o_dcid, None)
        for dcid in dcids:
            self._parked.pop(dcid, None)

    def __contains__(self, o_dcid: bytes) -> bool:
        return o_dcid in self._by_odcid


class TrackingAgent:
    """Client-facing and middlebox-facing APIs over a shared tracking table.

    Transport is left to the caller: datagrams go in through
    :meth:`dispatch_client` / :meth:`dispatch_middlebox`, and anything the
    agent sends unprompted (pushes) goes out through ``outbox``.
    """

    def __init__(
        self,
        table: TrackingTable | None = None,
        outbox: Outbox = _discard,
        proactive: bool = True,
    ) -> None:
        self.table = table if table is not None else TrackingTable()
        self.outbox = outbox
        self.proactive = proactive
        self.registry = SubscriptionRegistry()
        self.drops: Counter[str] = Counter()
        self.stats: Counter[str] = Counter()
        self._seq = itertools.count(1)
        self._registry_lock = threading.Lock()

    def _next_seq(self) -> int:
        return next(self._seq) & 0xFFFFFFFF

    def _push(self, record: TrackingRecord, targets: list[Endpoint]) -> int:
        if not targets:
            return 0
        body = RecordBody.from_record(record)
        for mbox in targets:
            data = proto.encode(PushUpdate(self._next_seq(), body))
            self.outbox(mbox, data)
            self.stats["pushes"] += 1
        return len(targets)

    # client-facing

    def handle_client_update(self, msg: ClientUpdate) -> TrackingRecord | None:
        try:
            record = self.table.upsert(msg.dcid, msg.o_dcid, msg.tuple)
        except DcidCollision as exc:
            log.warning("%s", exc)
            self.drops["dcid_collision"] += 1
            return None
        except ValueError:
            self.drops["invalid_update"] += 1
            return None
        self.stats["client_updates"] += 1
        if self.proactive:
            with self._registry_lock:
                self.registry.promote(msg.o_dcid, record.o_dcid)
                self.registry.promote(msg.dcid, record.o_dcid)
                targets = self.registry.subscribers(record.o_dcid)
            self._push(record, targets)
        return record

    def handle_conn_close(self, msg: ConnClose) -> bool:
        record = self.table.get(msg.o_dcid)
        closed = self.table.close(msg.o_dcid)
        with self._registry_lock:
            self.registry.drop(msg.o_dcid, record.dcids if record is not None else [])
        self.stats["closes"] += 1
        return closed

    # middlebox-facing

    def handle_query(self, msg: Query) -> QueryResponse:
        self.stats["queries"] += 1
        record = self.table.lookup_by_dcid(msg.dcid)
        if record is None:
            record = self.table.lookup_by_client_addr(msg.src)
        if record is None:
            self.stats["query_misses"] += 1
            return QueryResponse(None)
        return QueryResponse(RecordBody.from_record(record))

    def handle_subscribe(self, msg: Subscribe) -> bool:
        """Register ``msg.mbox``. A fresh subscription to a known connection is
        answered with one push of the current record."""
        record = self.table.lookup_by_dcid(msg.dcid)
        with self._registry_lock:
            if record is None:
                added = self.registry.park(msg.dcid, msg.mbox)
            else:
                added = self.registry.add(record.o_dcid, msg.mbox)
        if added:
            self.stats["subscriptions"] += 1
            if record is not None:
                self._push(record, [msg.mbox])
        return added

    # datagram entry points

    def dispatch_client(self, data: bytes) -> None:
        try:
            msg = proto.decode(data)
        except WireError:
            self.drops["malformed"] += 1
            return
        if isinstance(msg, ClientUpdate):
            self.handle_client_update(msg)
        elif isinstance(msg, ConnClose):
            self.handle_conn_close(msg)
        else:
            self.drops["wrong_api"] += 1

    def dispatch_middlebox(self, data: bytes) -> bytes | None:
        """Handle one middlebox datagram; returns the reply datagram, if any."""
        try:
            msg = proto.decode(data)
        except WireError:
            self.drops["malformed"] += 1
            return None
        if isinstance(msg, Query):
            return proto.encode(self.handle_query(msg))
        if isinstance(msg, Subscribe):
            self.handle_subscribe(msg)
            return None
        self.drops["wrong_api"] += 1
        return None
