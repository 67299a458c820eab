"""Minimal QUIC header framing: enough to read and write connection IDs.

Long headers are self-describing (both CID lengths are on the wire). Short
headers carry no length byte for the DCID, so the caller has to know it.
Everything past the CID fields is treated as opaque payload.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAX_CID_LENGTH = 20
QUIC_VERSION_1 = 0x00000001

LONG_HEADER_BIT = 0x80
FIXED_BIT = 0x40
LONG_HEADER_BYTE0 = LONG_HEADER_BIT | FIXED_BIT
SHORT_HEADER_BYTE0 = FIXED_BIT

_VERSION = struct.Struct("!I")


class QuicParseError(ValueError):
    pass


class TruncatedPacket(QuicParseError):
    pass


class InvalidCidLength(QuicParseError):
    pass


class NotLongHeader(QuicParseError):
    pass


class NotShortHeader(QuicParseError):
    pass


class ConnectionId(bytes):
    """Opaque connection identifier, at most 20 bytes."""

    def __new__(cls, value: bytes = b"") -> ConnectionId:
        if len(value) > MAX_CID_LENGTH:
            raise InvalidCidLength(f"connection id length {len(value)} exceeds {MAX_CID_LENGTH}")
        return super().__new__(cls, value)

    @classmethod
    def from_hex(cls, text: str) -> ConnectionId:
        return cls(bytes.fromhex(text))

    def __repr__(self) -> str:
        return f"ConnectionId({self.hex()!r})"

    def __str__(self) -> str:
        return self.hex()


class HeaderForm(enum.Enum):
    LONG = "long"
    SHORT = "short"


@dataclass(frozen=True)
class QuicHeader:
    form: HeaderForm
    dcid: ConnectionId
    scid: ConnectionId = ConnectionId()
    version: int = 0
    payload: bytes = b""


def is_long_header(first_byte: int) -> bool:
    return bool(first_byte & LONG_HEADER_BIT)


def encode_long_header(version: int, dcid: bytes, scid: bytes, payload: bytes = b"") -> bytes:
    dcid = ConnectionId(dcid)
    scid = ConnectionId(scid)
    return b"".join(
        (
            bytes((LONG_HEADER_BYTE0,)),
            _VERSION.pack(version),
            bytes((len(dcid),)),
            dcid,
            bytes((len(scid),)),
            scid,
            payload,
        )
    )


def encode_short_header(dcid: bytes, payload: bytes = b"") -> bytes:
    dcid = ConnectionId(dcid)
    return bytes((SHORT_HEADER_BYTE0,)) + dcid + payload


def encode_header(header: QuicHeader) -> bytes:
    if header.form is HeaderForm.LONG:
        return encode_long_header(header.version, header.dcid, header.scid, header.payload)
    return encode_short_header(header.dcid, header.payload)


def _read_cid(packet: bytes, offset: int) -> tuple[ConnectionId, int]:
    if offset >= len(packet):
        raise TruncatedPacket("missing connection id length byte")
    length = packet[offset]
    if length > MAX_CID_LENGTH:
        raise InvalidCidLength(f"connection id length {length} exceeds {MAX_CID_LENGTH}")
    end = offset + 1 + length
    if end > len(packet):
        raise TruncatedPacket(f"connection id length {length} exceeds remaining bytes")
    return ConnectionId(packet[offset + 1 : end]), end


def decode_long_header(packet: bytes) -> QuicHeader:
    if not packet:
        raise TruncatedPacket("empty packet")
    if not is_long_header(packet[0]):
        raise NotLongHeader(f"first byte {packet[0]:#04x} has the long-header bit clear")
    if len(packet) < 1 + _VERSION.size:
        raise TruncatedPacket("missing version field")
    (version,) = _VERSION.unpack_from(packet, 1)
    dcid, offset = _read_cid(packet, 1 + _VERSION.size)
    scid, offset = _read_cid(packet, offset)
    return QuicHeader(HeaderForm.LONG, dcid, scid, version, bytes(packet[offset:]))


def decode_short_header(packet: bytes, dcid_len: int) -> QuicHeader:
    if not packet:
        raise TruncatedPacket("empty packet")
    first = packet[0]
    if is_long_header(first) or not first & FIXED_BIT:
        raise NotShortHeader(f"first byte {first:#04x} is not a short header")
    if dcid_len > MAX_CID_LENGTH:
        raise InvalidCidLength(f"connection id length {dcid_len} exceeds {MAX_CID_LENGTH}")
    end = 1 + dcid_len
    if end > len(packet):
        raise TruncatedPacket(f"short header needs {end} bytes, packet has {len(packet)}")
    return QuicHeader(HeaderForm.SHORT, ConnectionId(packet[1:end]), payload=bytes(packet[end:]))


def decode_header(packet: bytes, dcid_len: int) -> QuicHeader:
    """Decode either form; ``dcid_len`` is only consulted for short headers."""
    if packet and is_long_header(packet[0]):
        return decode_long_header(packet)
    return decode_short_header(packet, dcid_len)


def peek_dcid(packet: bytes, dcid_len: int) -> bytes | None:
    """Fast DCID extraction for the middlebox hot path. Returns None on any framing error."""
    if not packet:
        return None
    first = packet[0]
    if first & LONG_HEADER_BIT:
        if len(packet) < 6:
            return None
        length = packet[5]
        if length > MAX_CID_LENGTH or 6 + length > len(packet):
            return None
        return packet[6 : 6 + length]
    if not first & FIXED_BIT or dcid_len > MAX_CID_LENGTH or 1 + dcid_len > len(packet):
        return None
    return packet[1 : 1 + dcid_len]
