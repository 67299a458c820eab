"""Synthetic migrating QUIC client, its Client Agent, and an echo server.

Migration here means the client starts stamping a different source endpoint
on its packets (and, by default, switching to a fresh DCID). The Client Agent
reports the new (dcid, o_dcid, tuple) before the first packet that uses it.
"""

from __future__ import annotations

import enum
import ipaddress
import random
import socket
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .agent import protocol as proto
from .agent.protocol import ClientUpdate, ConnClose
from .packet import Packet
from .tracking import Endpoint, FiveTuple, Protocol
from .wire import (
    MAX_CID_LENGTH,
    QUIC_VERSION_1,
    ConnectionId,
    QuicParseError,
    decode_long_header,
    decode_short_header,
    encode_long_header,
    encode_short_header,
    is_long_header,
)

TAG = struct.Struct("!II")
DEFAULT_DCID_LEN = 8


class AddressPoolExhausted(RuntimeError):
    pass


class ConnectionClosed(RuntimeError):
    pass


# -- address sources ---------------------------------------------------------


class SequentialAddresses:
    """Walks ports upward from ``start`` (``vary="port"``) or IPs upward
    keeping the port fixed (``vary="ip"``)."""

    def __init__(self, start: Endpoint, vary: str = "port", limit: int | None = None) -> None:
        if vary not in ("port", "ip"):
            raise ValueError("vary must be 'port' or 'ip'")
        self._ip = int(ipaddress.IPv4Address(start.ip))
        self._port = start.port
        self.vary = vary
        self.limit = limit
        self.issued = 0

    def __iter__(self) -> Iterator[Endpoint]:
        return self

    def __next__(self) -> Endpoint:
        if self.limit is not None and self.issued >= self.limit:
            raise AddressPoolExhausted("address source exhausted")
        if self.vary == "port":
            port = self._port + self.issued
            if port > 0xFFFF:
                raise AddressPoolExhausted("ran out of ports")
            ip = self._ip
        else:
            port = self._port
            ip = self._ip + self.issued
            if ip > 0xFFFFFFFF:
                raise AddressPoolExhausted("ran out of addresses")
        self.issued += 1
        return Endpoint(str(ipaddress.IPv4Address(ip)), port)


class ExplicitAddresses:
    def __init__(self, endpoints: Iterable[Endpoint]) -> None:
        self._it = iter(list(endpoints))

    def __iter__(self) -> Iterator[Endpoint]:
        return self

    def __next__(self) -> Endpoint:
        try:
            return next(self._it)
        except StopIteration:
            raise AddressPoolExhausted("explicit address list exhausted") from None


class RandomAddresses:
    """Distinct random endpoints inside ``network``; ``vary="ip"`` keeps the port fixed."""

    def __init__(
        self,
        rng: random.Random,
        network: str = "10.0.0.0/16",
        vary: str = "both",
        port: int = 40000,
        port_range: tuple[int, int] = (1024, 65535),
    ) -> None:
        net = ipaddress.IPv4Network(network)
        self._base = int(net.network_address)
        self._hosts = max(net.num_addresses - 2, 1)
        self.rng = rng
        self.vary = vary
        self.port = port
        self.port_range = port_range
        self._seen: set[Endpoint] = set()

    def __iter__(self) -> Iterator[Endpoint]:
        return self

    def __next__(self) -> Endpoint:
        for _ in range(1000):
            ip = str(ipaddress.IPv4Address(self._base + 1 + self.rng.randrange(self._hosts)))
            port = self.port if self.vary == "ip" else self.rng.randint(*self.port_range)
            ep = Endpoint(ip, port)
            if ep not in self._seen:
                self._seen.add(ep)
                return ep
        raise AddressPoolExhausted("could not draw a fresh random endpoint")


# -- client agent ------------------------------------------------------------


def udp_transport(agent_addr: tuple[str, int]) -> Callable[[bytes], None]:
    """One socket per message: open, send, close."""

    def send(data: bytes) -> None:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.sendto(data, agent_addr)

    return send


class ClientAgent:
    def __init__(self, transport: Callable[[bytes], None]) -> None:
        self.transport = transport
        self.sent: list[bytes] = []
        self.keep_log = False

    def _send(self, data: bytes) -> None:
        if self.keep_log:
            self.sent.append(data)
        self.transport(data)

    def report(self, dcid: bytes, o_dcid: bytes, tuple_: FiveTuple) -> None:
        self._send(proto.encode(ClientUpdate(ConnectionId(dcid), ConnectionId(o_dcid), tuple_)))

    def report_close(self, o_dcid: bytes) -> None:
        self._send(proto.encode(ConnClose(ConnectionId(o_dcid))))


# -- emulator ----------------------------------------------------------------


class Trigger(enum.Enum):
    EVERY_N_PACKETS = "every_n_packets"
    EVERY_T_SECONDS = "every_t_seconds"
    RATE_HZ = "rate_hz"


@dataclass(frozen=True)
class MigrationPolicy:
    trigger: Trigger
    value: float
    rotate_dcid: bool = True

    def __post_init__(self) -> None:
        if self.trigger is Trigger.EVERY_N_PACKETS:
            if self.value < 1 or int(self.value) != self.value:
                raise ValueError("packet interval must be an integer >= 1")
        elif self.value <= 0:
            raise ValueError("migration interval/rate must be positive")

    @classmethod
    def every_n_packets(cls, n: int, rotate_dcid: bool = True) -> MigrationPolicy:
        return cls(Trigger.EVERY_N_PACKETS, n, rotate_dcid)

    @classmethod
    def every_t_seconds(cls, t: float, rotate_dcid: bool = True) -> MigrationPolicy:
        return cls(Trigger.EVERY_T_SECONDS, t, rotate_dcid)

    @classmethod
    def rate_hz(cls, f: float, rotate_dcid: bool = True) -> MigrationPolicy:
        return cls(Trigger.RATE_HZ, f, rotate_dcid)

    @property
    def interval(self) -> float | None:
        """Seconds between migrations for the time-based triggers."""
        if self.trigger is Trigger.EVERY_T_SECONDS:
            return self.value
        if self.trigger is Trigger.RATE_HZ:
            return 1.0 / self.value
        return None

    def due(self, packets_emitted: int) -> bool:
        """Packet-count trigger: migrate before packet number ``packets_emitted``."""
        n = int(self.value)
        return (
            self.trigger is Trigger.EVERY_N_PACKETS
            and packets_emitted > 0
            and packets_emitted % n == 0
        )


@dataclass
class EmulatedConnection:
    serial: int
    o_dcid: ConnectionId
    scid: ConnectionId
    current_dcid: ConnectionId
    current_src: Endpoint
    server: Endpoint
    dcid_history: list[ConnectionId] = field(default_factory=list)
    addr_history: list[Endpoint] = field(default_factory=list)
    packets_sent: int = 0
    emitted: int = 0
    migrations_done: int = 0
    closed: bool = False

    @property
    def tuple(self) -> FiveTuple:
        return FiveTuple(Protocol.UDP, self.current_src, self.server)


class ClientEmulator:
    def __init__(
        self,
        agent: ClientAgent | None,
        addresses: Iterator[Endpoint],
        rng: random.Random | None = None,
        emit: Callable[[Packet], None] | None = None,
    ) -> None:
        self.agent = agent
        self.addresses = addresses
        self.rng = rng or random.Random()
        self.emit = emit
        self.connections: list[EmulatedConnection] = []
        self._by_dcid: dict[bytes, EmulatedConnection] = {}
        self._by_scid: dict[bytes, EmulatedConnection] = {}
        self.dcid_lengths: set[int] = set()

    def _fresh_cid(self, length: int) -> ConnectionId:
        while True:
            cid = ConnectionId(self.rng.randbytes(length))
            if cid not in self._by_dcid and cid not in self._by_scid:
                return cid

    def _next_address(self) -> Endpoint:
        try:
            return next(self.addresses)
        except StopIteration:
            raise AddressPoolExhausted("address source exhausted") from None

    def _emit(self, pkt: Packet) -> Packet:
        if self.emit is not None:
            self.emit(pkt)
        return pkt

    def open(
        self,
        server: Endpoint,
        o_dcid_len: int = DEFAULT_DCID_LEN,
        payload_len: int = 0,
        o_dcid: bytes | None = None,
    ) -> tuple[EmulatedConnection, Packet]:
        """Open a connection; returns it together with its long-header initial packet."""
        if not 1 <= o_dcid_len <= MAX_CID_LENGTH:
            raise ValueError(f"o_dcid_len must be in [1, {MAX_CID_LENGTH}]")
        src = self._next_address()
        o = ConnectionId(o_dcid) if o_dcid is not None else self._fresh_cid(o_dcid_len)
        scid = self._fresh_cid(o_dcid_len)
        conn = EmulatedConnection(len(self.connections), o, scid, o, src, server, [o], [src])
        self.connections.append(conn)
        self._by_dcid[o] = conn
        self._by_scid[scid] = conn
        self.dcid_lengths.add(len(o))
        if self.agent is not None:
            self.agent.report(o, o, conn.tuple)
        payload = self._payload(conn, payload_len)
        data = encode_long_header(QUIC_VERSION_1, o, scid, payload)
        return conn, self._emit(Packet(Protocol.UDP, src, server, data))

    def _payload(self, conn: EmulatedConnection, payload_len: int) -> bytes:
        seq = conn.emitted
        conn.emitted += 1
        if payload_len >= TAG.size:
            return TAG.pack(conn.serial, seq) + bytes(payload_len - TAG.size)
        return bytes(payload_len)

    def send_data(self, conn: EmulatedConnection, payload_len: int = 0) -> Packet:
        if conn.closed:
            raise ConnectionClosed(f"connection {conn.o_dcid.hex()} is closed")
        data = encode_short_header(conn.current_dcid, self._payload(conn, payload_len))
        conn.packets_sent += 1
        return self._emit(Packet(Protocol.UDP, conn.current_src, conn.server, data))

    def migrate(self, conn: EmulatedConnection, rotate_dcid: bool = True) -> None:
        if conn.closed:
            raise ConnectionClosed(f"connection {conn.o_dcid.hex()} is closed")
        conn.current_src = self._next_address()
        conn.addr_history.append(conn.current_src)
        if rotate_dcid:
            dcid = self._fresh_cid(len(conn.current_dcid))
            conn.current_dcid = dcid
            conn.dcid_history.append(dcid)
            self._by_dcid[dcid] = conn
        if self.agent is not None:
            self.agent.report(conn.current_dcid, conn.o_dcid, conn.tuple)
        conn.migrations_done += 1

    def close(self, conn: EmulatedConnection) -> None:
        if conn.closed:
            return
        conn.closed = True
        if self.agent is not None:
            self.agent.report_close(conn.o_dcid)

    def connection_for_dcid(self, dcid: bytes) -> EmulatedConnection | None:
        return self._by_dcid.get(dcid)

    def connection_for_scid(self, scid: bytes) -> EmulatedConnection | None:
        return self._by_scid.get(scid)


def packet_tag(payload: bytes) -> tuple[int, int] | None:
    """(connection serial, packet seq) stamped by the emulator, if present."""
    if len(payload) < TAG.size:
        return None
    return TAG.unpack_from(payload)


class EchoServer:
    """Answers every data packet with a same-size reply addressed with the
    client's SCID, sent back to whatever source address the packet showed."""

    def __init__(self, emulator: ClientEmulator) -> None:
        self.emulator = emulator
        self.received = 0

    def identify(self, pkt: Packet) -> tuple[EmulatedConnection | None, bytes]:
        """Find the connection a client->server packet belongs to, and its QUIC payload."""
        data = pkt.payload
        if not data:
            return None, b""
        try:
            if is_long_header(data[0]):
                header = decode_long_header(data)
                return self.emulator.connection_for_dcid(header.dcid), header.payload
            for length in sorted(self.emulator.dcid_lengths):
                header = decode_short_header(data, length)
                conn = self.emulator.connection_for_dcid(header.dcid)
                if conn is not None:
                    return conn, header.payload
        except QuicParseError:
            pass
        return None, b""

    def respond(self, pkt: Packet) -> Packet | None:
        self.received += 1
        conn, payload = self.identify(pkt)
        if conn is None:
            return None
        data = encode_short_header(conn.scid, payload)
        return Packet(Protocol.UDP, pkt.dst, pkt.src, data)
