"""IPv4 + UDP/TCP framing for the packets that flow through the middleboxes.

Checksums are written as zero and never verified. TCP segments get the same
8-byte port header as UDP; nothing here looks past the ports.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, replace

from .tracking import Endpoint, FiveTuple, Protocol

_IPV4 = struct.Struct("!BBHHHBBH4s4s")
_L4 = struct.Struct("!HHHH")
_PORTED = frozenset((Protocol.UDP, Protocol.TCP))


class PacketError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Packet:
    protocol: int
    src: Endpoint
    dst: Endpoint
    payload: bytes = b""
    ttl: int = 64
    ident: int = 0

    @property
    def five_tuple(self) -> FiveTuple:
        return FiveTuple(self.protocol, self.src, self.dst)

    def with_src(self, src: Endpoint) -> Packet:
        return replace(self, src=src)

    def with_dst(self, dst: Endpoint) -> Packet:
        return replace(self, dst=dst)

    def to_bytes(self) -> bytes:
        ported = self.protocol in _PORTED
        l4_len = _L4.size + len(self.payload) if ported else len(self.payload)
        total = _IPV4.size + l4_len
        if total > 0xFFFF:
            raise PacketError("packet too large for IPv4")
        ip = _IPV4.pack(
            0x45,
            0,
            total,
            self.ident & 0xFFFF,
            0,
            self.ttl,
            self.protocol,
            0,
            socket.inet_aton(self.src.ip),
            socket.inet_aton(self.dst.ip),
        )
        if not ported:
            return ip + self.payload
        return ip + _L4.pack(self.src.port, self.dst.port, l4_len, 0) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> Packet:
        if len(data) < _IPV4.size:
            raise PacketError("shorter than an IPv4 header")
        vihl, _, total, ident, _, ttl, proto, _, src_ip, dst_ip = _IPV4.unpack_from(data)
        if vihl >> 4 != 4:
            raise PacketError("not IPv4")
        ihl = (vihl & 0x0F) * 4
        if ihl < _IPV4.size or total > len(data) or total < ihl:
            raise PacketError("bad IPv4 lengths")
        src = socket.inet_ntoa(src_ip)
        dst = socket.inet_ntoa(dst_ip)
        if proto in _PORTED:
            if total < ihl + _L4.size:
                raise PacketError("truncated transport header")
            sport, dport, _, _ = _L4.unpack_from(data, ihl)
            payload = bytes(data[ihl + _L4.size : total])
        else:
            sport = dport = 0
            payload = bytes(data[ihl:total])
        return cls(proto, Endpoint(src, sport), Endpoint(dst, dport), payload, ttl, ident)
