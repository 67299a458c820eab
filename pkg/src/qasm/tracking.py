"""Connection tracking data model shared by the agent and the middleboxes.

A connection is keyed by its O-DCID (the DCID the client put in its very
first packet). Every later DCID and every client address the connection has
used is folded into the same record, so a lookup by any of them lands on it.
"""

from __future__ import annotations

import enum
import socket
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

from ._rwlock import RWLock
from .wire import ConnectionId

DEFAULT_IDLE_TIMEOUT = 300.0


class Protocol(enum.IntEnum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True, slots=True)
class Endpoint:
    ip: str
    port: int

    def __post_init__(self) -> None:
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError(f"port out of range: {self.port}")
        if self.ip.count(".") != 3:
            raise ValueError(f"not a dotted-quad IPv4 address: {self.ip!r}")
        try:
            socket.inet_aton(self.ip)
        except OSError:
            raise ValueError(f"invalid IPv4 address: {self.ip!r}") from None

    @classmethod
    def parse(cls, text: str) -> Endpoint:
        ip, _, port = text.rpartition(":")
        return cls(ip, int(port))

    def packed_ip(self) -> bytes:
        return socket.inet_aton(self.ip)

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"


@dataclass(frozen=True, slots=True)
class FiveTuple:
    protocol: int
    src: Endpoint
    dst: Endpoint

    def reversed(self) -> FiveTuple:
        return FiveTuple(self.protocol, self.dst, self.src)


@dataclass(frozen=True, slots=True)
class SixTuple:
    dcid: ConnectionId
    five_tuple: FiveTuple

    def __post_init__(self) -> None:
        if self.five_tuple.protocol != Protocol.UDP:
            raise ValueError("a DCID-extended tuple must be UDP")


class DcidCollision(Exception):
    """The DCID is already bound to a different connection."""

    def __init__(self, dcid: bytes, existing: bytes, requested: bytes) -> None:
        super().__init__(
            f"dcid {dcid.hex()} belongs to {existing.hex()}, refusing to bind it to {requested.hex()}"
        )
        self.dcid = dcid
        self.existing = existing
        self.requested = requested


@dataclass
class TrackingRecord:
    o_dcid: ConnectionId
    server: Endpoint
    dcids: list[ConnectionId] = field(default_factory=list)
    client_addrs: list[Endpoint] = field(default_factory=list)
    dcid_len: int = 0
    closed: bool = False
    last_update: float = 0.0

    def copy(self) -> TrackingRecord:
        return TrackingRecord(
            self.o_dcid,
            self.server,
            list(self.dcids),
            list(self.client_addrs),
            self.dcid_len,
            self.closed,
            self.last_update,
        )

    def same_state(self, other: TrackingRecord) -> bool:
        """Field-by-field comparison of the tracked attributes (timestamps excluded)."""
        return (
            self.o_dcid == other.o_dcid
            and self.dcids == other.dcids
            and self.client_addrs == other.client_addrs
            and self.server == other.server
            and self.dcid_len == other.dcid_len
        )


def shard_for(dcid: bytes, shard_count: int) -> int:
    """CRC-32 (zlib polynomial) of the DCID bytes, modulo ``shard_count``."""
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    return zlib.crc32(dcid) % shard_count


class _Shard:
    __slots__ = ("lock", "dcids")

    def __init__(self) -> None:
        self.lock = RWLock()
        self.dcids: dict[bytes, ConnectionId] = {}


class TrackingTable:
    """Records keyed by O-DCID with a DCID index and a client-address index.

    The DCID index is split into shards by :func:`shard_for`, each with its own
    lock. Records and the address index sit behind a table-level lock. Writers
    always take the table lock before any shard lock.
    """

    def __init__(
        self,
        shard_count: int = 1,
        idle_timeout: float | None = DEFAULT_IDLE_TIMEOUT,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        if shard_count < 1:
            raise ValueError("shard_count must be >= 1")
        self.shard_count = shard_count
        self.idle_timeout = idle_timeout
        self.clock = clock
        self._lock = RWLock()
        self._records: dict[bytes, TrackingRecord] = {}
        # addr -> ordered set of o_dcids; the last one is the most recent writer
        self._by_addr: dict[Endpoint, dict[bytes, None]] = {}
        self._shards = [_Shard() for _ in range(shard_count)]

    def _shard(self, dcid: bytes) -> _Shard:
        if self.shard_count == 1:
            return self._shards[0]
        return self._shards[shard_for(dcid, self.shard_count)]

    def upsert(self, dcid: bytes, o_dcid: bytes, tuple_: FiveTuple) -> TrackingRecord:
        if tuple_.protocol != Protocol.UDP:
            raise ValueError("tracked connections must be UDP")
        dcid = ConnectionId(dcid)
        o_dcid = ConnectionId(o_dcid)
        now = self.clock()
        with self._lock.write():
            for candidate in (o_dcid, dcid):
                shard = self._shard(candidate)
                with shard.lock.read():
                    owner = shard.dcids.get(candidate)
                if owner is not None and owner != o_dcid:
                    raise DcidCollision(candidate, owner, o_dcid)

            record = self._records.get(o_dcid)
            if record is None:
                record = TrackingRecord(o_dcid, tuple_.dst)
                self._records[o_dcid] = record
            for candidate in (o_dcid, dcid):
                if candidate not in record.dcids:
                    record.dcids.append(candidate)
                    shard = self._shard(candidate)
                    with shard.lock.write():
                        shard.dcids[candidate] = o_dcid
            src = tuple_.src
            if src not in record.client_addrs:
                record.client_addrs.append(src)
            owners = self._by_addr.setdefault(src, {})
            owners.pop(o_dcid, None)
            owners[o_dcid] = None
            record.server = tuple_.dst
            record.dcid_len = len(dcid)
            record.last_update = now
            return record.copy()

    def lookup_by_dcid(self, dcid: bytes) -> TrackingRecord | None:
        shard = self._shard(dcid)
        with shard.lock.read():
            o_dcid = shard.dcids.get(dcid)
        if o_dcid is None:
            return None
        with self._lock.read():
            record = self._records.get(o_dcid)
            return record.copy() if record is not None else None

    def lookup_by_client_addr(self, addr: Endpoint) -> TrackingRecord | None:
        with self._lock.read():
            owners = self._by_addr.get(addr)
            if not owners:
                return None
            record = self._records.get(next(reversed(owners)))
            return record.copy() if record is not None else None

    def get(self, o_dcid: bytes) -> TrackingRecord | None:
        with self._lock.read():
            record = self._records.get(o_dcid)
            return record.copy() if record is not None else None

    def close(self, o_dcid: bytes) -> bool:
        with self._lock.write():
            record = self._records.pop(o_dcid, None)
            if record is None:
                return False
            self._unindex(record)
            record.closed = True
            return True

    def _unindex(self, record: TrackingRecord) -> None:
        for dcid in record.dcids:
            shard = self._shard(dcid)
            with shard.lock.write():
                if shard.dcids.get(dcid) == record.o_dcid:
                    del shard.dcids[dcid]
        for addr in record.client_addrs:
            owners = self._by_addr.get(addr)
            if owners is not None:
                owners.pop(record.o_dcid, None)
                if not owners:
                    del self._by_addr[addr]

    def expire_idle(self, now: float | None = None) -> list[ConnectionId]:
        """Close every record idle for longer than the idle timeout."""
        if self.idle_timeout is None:
            return []
        now = self.clock() if now is None else now
        with self._lock.write():
            stale = [r for r in self._records.values() if now - r.last_update > self.idle_timeout]
            for record in stale:
                del self._records[record.o_dcid]
                self._unindex(record)
                record.closed = True
        return [r.o_dcid for r in stale]

    def records(self) -> list[TrackingRecord]:
        with self._lock.read():
            return [r.copy() for r in self._records.values()]

    def dcid_index(self) -> dict[bytes, bytes]:
        merged: dict[bytes, bytes] = {}
        for shard in self._shards:
            with shard.lock.read():
                merged.update(shard.dcids)
        return merged

    def addr_index(self) -> dict[Endpoint, set[bytes]]:
        with self._lock.read():
            return {addr: set(owners) for addr, owners in self._by_addr.items()}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[TrackingRecord]:
        return iter(self.records())

    def __contains__(self, o_dcid: bytes) -> bool:
        return o_dcid in self._records
