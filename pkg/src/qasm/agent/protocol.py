"""Datagram encoding for the tracking agent's four APIs.

One message per datagram, big-endian throughout::

    ClientUpdate  01 | dlen dcid | olen odcid | proto | src ip,port | dst ip,port
    ConnClose     02 | olen odcid
    Query         03 | dlen dcid | src ip,port | dst ip,port
    QueryResponse 04 | found [| record]
    Subscribe     05 | dlen dcid | mbox ip,port
    PushUpdate    06 | seq(4) | record

    record = olen odcid | n {len dcid}*n | n {ip port}*n | server ip,port | active dcid len
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass
from typing import Union

from ..tracking import Endpoint, FiveTuple, Protocol, TrackingRecord
from ..wire import MAX_CID_LENGTH, ConnectionId

_ADDR = struct.Struct("!4sH")
_SEQ = struct.Struct("!I")
MAX_LIST = 0xFF


class WireError(ValueError):
    pass


class MessageKind(enum.IntEnum):
    CLIENT_UPDATE = 0x01
    CONN_CLOSE = 0x02
    QUERY = 0x03
    QUERY_RESPONSE = 0x04
    SUBSCRIBE = 0x05
    PUSH_UPDATE = 0x06


@dataclass(frozen=True)
class RecordBody:
    o_dcid: ConnectionId
    dcids: tuple[ConnectionId, ...]
    client_addrs: tuple[Endpoint, ...]
    server: Endpoint
    dcid_len: int

    @classmethod
    def from_record(cls, record: TrackingRecord) -> RecordBody:
        # The wire list counts are one byte; long-lived connections keep
        # only their most recent 255 DCIDs / addresses on the wire.
        return cls(
            record.o_dcid,
            tuple(record.dcids[-MAX_LIST:]),
            tuple(record.client_addrs[-MAX_LIST:]),
            record.server,
            record.dcid_len,
        )


@dataclass(frozen=True)
class ClientUpdate:
    dcid: ConnectionId
    o_dcid: ConnectionId
    tuple: FiveTuple


@dataclass(frozen=True)
class ConnClose:
    o_dcid: ConnectionId


@dataclass(frozen=True)
class Query:
    dcid: ConnectionId
    src: Endpoint
    dst: Endpoint


@dataclass(frozen=True)
class QueryResponse:
    record: RecordBody | None

    @property
    def found(self) -> bool:
        return self.record is not None


@dataclass(frozen=True)
class Subscribe:
    dcid: ConnectionId
    mbox: Endpoint


@dataclass(frozen=True)
class PushUpdate:
    seq: int
    record: RecordBody


Message = Union[ClientUpdate, ConnClose, Query, QueryResponse, Subscribe, PushUpdate]


def _cid(value: bytes) -> bytes:
    if len(value) > MAX_CID_LENGTH:
        raise WireError(f"connection id longer than {MAX_CID_LENGTH} bytes")
    return bytes((len(value),)) + value


def _addr(ep: Endpoint) -> bytes:
    return _ADDR.pack(socket.inet_aton(ep.ip), ep.port)


def _record(body: RecordBody) -> bytes:
    if len(body.dcids) > MAX_LIST or len(body.client_addrs) > MAX_LIST:
        raise WireError("record lists are limited to 255 entries")
    if not 0 <= body.dcid_len <= MAX_CID_LENGTH:
        raise WireError("active dcid length out of range")
    parts = [_cid(body.o_dcid), bytes((len(body.dcids),))]
    parts.extend(_cid(d) for d in body.dcids)
    parts.append(bytes((len(body.client_addrs),)))
    parts.extend(_addr(a) for a in body.client_addrs)
    parts.append(_addr(body.server))
    parts.append(bytes((body.dcid_len,)))
    return b"".join(parts)


def encode(msg: Message) -> bytes:
    if isinstance(msg, ClientUpdate):
        return b"".join(
            (
                bytes((MessageKind.CLIENT_UPDATE,)),
                _cid(msg.dcid),
                _cid(msg.o_dcid),
                bytes((msg.tuple.protocol,)),
                _addr(msg.tuple.src),
                _addr(msg.tuple.dst),
            )
        )
    if isinstance(msg, ConnClose):
        return bytes((MessageKind.CONN_CLOSE,)) + _cid(msg.o_dcid)
    if isinstance(msg, Query):
        return bytes((MessageKind.QUERY,)) + _cid(msg.dcid) + _addr(msg.src) + _addr(msg.dst)
    if isinstance(msg, QueryResponse):
        if msg.record is None:
            return bytes((MessageKind.QUERY_RESPONSE, 0))
        return bytes((MessageKind.QUERY_RESPONSE, 1)) + _record(msg.record)
    if isinstance(msg, Subscribe):
        return bytes((MessageKind.SUBSCRIBE,)) + _cid(msg.dcid) + _addr(msg.mbox)
    if isinstance(msg, PushUpdate):
        if not 0 <= msg.seq <= 0xFFFFFFFF:
            raise WireError("sequence number out of range")
        return bytes((MessageKind.PUSH_UPDATE,)) + _SEQ.pack(msg.seq) + _record(msg.record)
    raise TypeError(f"not a wire message: {msg!r}")


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise WireError("truncated message")
        chunk = self.data[self.pos : end]
        self.pos = end
        return bytes(chunk)

    def u8(self) -> int:
        return self.take(1)[0]

    def cid(self) -> ConnectionId:
        n = self.u8()
        if n > MAX_CID_LENGTH:
            raise WireError(f"connection id length {n} exceeds {MAX_CID_LENGTH}")
        return ConnectionId(self.take(n))

    def addr(self) -> Endpoint:
        ip, port = _ADDR.unpack(self.take(_ADDR.size))
        return Endpoint(socket.inet_ntoa(ip), port)

    def record(self) -> RecordBody:
        o_dcid = self.cid()
        dcids = tuple(self.cid() for _ in range(self.u8()))
        addrs = tuple(self.addr() for _ in range(self.u8()))
        server = self.addr()
        dcid_len = self.u8()
        if dcid_len > MAX_CID_LENGTH:
            raise WireError("active dcid length out of range")
        return RecordBody(o_dcid, dcids, addrs, server, dcid_len)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise WireError(f"{len(self.data) - self.pos} trailing bytes")


def decode(data: bytes) -> Message:
    if not data:
        raise WireError("empty datagram")
    try:
        kind = MessageKind(data[0])
    except ValueError:
        raise WireError(f"unknown message kind {data[0]:#04x}") from None
    r = _Reader(data)
    r.pos = 1
    msg: Message
    if kind is MessageKind.CLIENT_UPDATE:
        dcid, o_dcid = r.cid(), r.cid()
        proto = r.u8()
        if proto != Protocol.UDP:
            raise WireError(f"client update for non-UDP protocol {proto}")
        src, dst = r.addr(), r.addr()
        msg = ClientUpdate(dcid, o_dcid, FiveTuple(Protocol.UDP, src, dst))
    elif kind is MessageKind.CONN_CLOSE:
        msg = ConnClose(r.cid())
    elif kind is MessageKind.QUERY:
        msg = Query(r.cid(), r.addr(), r.addr())
    elif kind is MessageKind.QUERY_RESPONSE:
        found = r.u8()
        if found not in (0, 1):
            raise WireError(f"bad found flag {found}")
        msg = QueryResponse(r.record() if found else None)
    elif kind is MessageKind.SUBSCRIBE:
        msg = Subscribe(r.cid(), r.addr())
    else:
        (seq,) = _SEQ.unpack(r.take(_SEQ.size))
        msg = PushUpdate(seq, r.record())
    r.done()
    return msg
