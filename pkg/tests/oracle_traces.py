"""Seeded random traces and a driver that feeds them to both the package
middleboxes and the reference in tests/reference_sim.py."""

from __future__ import annotations

import random
import struct

import reference_sim as ref

from qasm.agent import InProcessAgentLink, TrackingAgent
from qasm.agent import protocol as proto
from qasm.agent.protocol import ClientUpdate
from qasm.middleboxes import (
    Conntrack,
    DefaultNat,
    DefaultRateLimiter,
    Direction,
    Drop,
    LoadBalancer,
    Mode,
    PublicPool,
    QuicConntrack,
    QuicLoadBalancer,
    QuicNat,
    QuicRateLimiter,
    TrackingResolver,
)
from qasm.packet import Packet
from qasm.tracking import Endpoint, FiveTuple, Protocol, TrackingTable

SERVER = ("93.184.216.34", 443)
PUBLIC_IP = "65.12.81.14"
BACKENDS = [("10.1.0.1", 443), ("10.1.0.2", 443), ("10.1.0.3", 443)]
KINDS = ("nat", "rl", "lb", "conntrack")
PORTED = (ref.UDP, ref.TCP)


def long_header(dcid: bytes, scid: bytes, body: bytes) -> bytes:
    return bytes([0xC0]) + struct.pack("!I", 1) + bytes([len(dcid)]) + dcid + bytes([len(scid)]) + scid + body


def short_header(dcid: bytes, body: bytes) -> bytes:
    return bytes([0x40]) + dcid + body


def make_trace(seed: int, max_packets: int = 1000) -> list[tuple]:
    """Events: ("update", dcid, o_dcid, addr) and ("pkt", outbound, packet, conn) and ("tick", dt).

    Inbound packets toward a NAT'd client carry ``conn`` so the driver can
    address them to whatever public endpoint the NAT handed out."""
    rng = random.Random(seed)
    n_packets = rng.randint(20, max_packets)
    conns: list[dict] = []
    events: list[tuple] = []
    used_addrs: set[tuple] = set()

    def fresh_addr() -> tuple:
        while True:
            addr = (f"10.0.{rng.randrange(4)}.{rng.randrange(1, 250)}", rng.randrange(1024, 65535))
            if addr not in used_addrs:
                used_addrs.add(addr)
                return addr

    def report(conn: dict) -> None:
        if rng.random() >= 0.1:  # 10% of ClientUpdates are lost
            events.append(("update", conn["dcid"], conn["o"], conn["addr"]))

    def body() -> bytes:
        return rng.randbytes(rng.randrange(0, 24))

    packets = 0
    while packets < n_packets:
        r = rng.random()
        if not conns or r < 0.04:
            o = rng.randbytes(ref.DCID_LEN)
            conn = {"o": o, "dcid": o, "scid": rng.randbytes(ref.DCID_LEN), "addr": fresh_addr()}
            conns.append(conn)
            report(conn)
            pkt = (ref.UDP, *conn["addr"], *SERVER, long_header(o, conn["scid"], body()))
            events.append(("pkt", True, pkt, conn))
        elif r < 0.12:
            conn = rng.choice(conns)
            conn["addr"] = fresh_addr()
            if rng.random() < 0.8:
                conn["dcid"] = rng.randbytes(ref.DCID_LEN)
            report(conn)
            continue
        elif r < 0.15:
            conn = rng.choice(conns)  # new CID without moving
            conn["dcid"] = rng.randbytes(ref.DCID_LEN)
            report(conn)
            continue
        elif r < 0.55:
            conn = rng.choice(conns)
            pkt = (ref.UDP, *conn["addr"], *SERVER, short_header(conn["dcid"], body()))
            events.append(("pkt", True, pkt, conn))
        elif r < 0.80:
            conn = rng.choice(conns)
            pkt = (ref.UDP, *SERVER, *conn["addr"], short_header(conn["scid"], body()))
            events.append(("pkt", False, pkt, conn))
        elif r < 0.84:
            src = fresh_addr() if rng.random() < 0.5 else rng.choice(conns)["addr"]
            pkt = (ref.UDP, *src, "8.8.8.8", 53, rng.randbytes(rng.randrange(1, 12)))
            events.append(("pkt", True, pkt, None))
        elif r < 0.87:
            conn = rng.choice(conns)
            first = rng.choice([0x00, 0x3F, 0x80])  # fixed bit clear: not QUIC
            pkt = (ref.UDP, *conn["addr"], *SERVER, bytes([first]) + rng.randbytes(12))
            events.append(("pkt", True, pkt, None))
        elif r < 0.89:
            conn = rng.choice(conns)
            pkt = (ref.UDP, *conn["addr"], *SERVER, bytes([0x40]) + rng.randbytes(rng.randrange(0, ref.DCID_LEN)))
            events.append(("pkt", True, pkt, None))
        elif r < 0.92:
            conn = rng.choice(conns)
            pkt = (ref.TCP, *conn["addr"], *SERVER, rng.randbytes(rng.randrange(0, 16)))
            events.append(("pkt", True, pkt, None))
        elif r < 0.93:
            pkt = (1, *fresh_addr(), "8.8.8.8", 0, rng.randbytes(8))
            events.append(("pkt", True, pkt, None))
        elif r < 0.95:
            pkt = (ref.UDP, *SERVER, PUBLIC_IP, rng.randrange(19450, 19470), short_header(rng.randbytes(8), b""))
            events.append(("pkt", False, pkt, "stray"))
        else:
            dt = rng.choice([0.001, 0.01, 0.03, 0.2, 1.0, 5.0, 40.0])
            events.append(("tick", dt))
            continue
        packets += 1
    return events


def _normalize(pkt: tuple) -> tuple:
    if pkt[0] not in PORTED:
        return (pkt[0], pkt[1], 0, pkt[3], 0, pkt[5])
    return pkt


def _to_packet(t: tuple) -> Packet:
    return Packet(t[0], Endpoint(t[1], t[2]), Endpoint(t[3], t[4]), t[5])


def _from_packet(p: Packet) -> tuple:
    return (p.protocol, p.src.ip, p.src.port, p.dst.ip, p.dst.port, p.payload)


class _Clock:
    def __init__(self) -> None:
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def _build_real(kind: str, mode: Mode, clock: _Clock, agent: TrackingAgent, params: dict):
    resolver = None
    if mode is not Mode.DEFAULT:
        push_ep = Endpoint("10.255.0.1", 7000)
        resolver = TrackingResolver(mode, InProcessAgentLink(agent), clock=clock, push_endpoint=push_ep)
        agent.outbox = lambda dest, data: resolver.on_push(proto.decode(data))
    if kind == "nat":
        pool = PublicPool.sized(PUBLIC_IP, 19450, params["pool"])
        if resolver is None:
            return DefaultNat(pool, params["timeout"], clock=clock)
        return QuicNat(pool, resolver, params["timeout"], clock=clock)
    if kind == "rl":
        if resolver is None:
            return DefaultRateLimiter(params["rate"], clock=clock)
        return QuicRateLimiter(params["rate"], resolver, clock=clock)
    if kind == "lb":
        backends = [Endpoint(*b) for b in BACKENDS[: params["backends"]]]
        if resolver is None:
            return LoadBalancer(backends, Endpoint(*SERVER), clock=clock)
        return QuicLoadBalancer(backends, resolver, Endpoint(*SERVER), clock=clock)
    if resolver is None:
        return Conntrack(params["capacity"], clock=clock)
    return QuicConntrack(params["capacity"], resolver, clock=clock)


def _build_ref(kind: str, mode: Mode, clock: _Clock, agent: ref.RefAgent, params: dict):
    resolver = None if mode is Mode.DEFAULT else ref.RefResolver(mode.value, agent, clock)
    if kind == "nat":
        return ref.RefNat(PUBLIC_IP, 19450, params["pool"], params["timeout"], resolver, clock)
    if kind == "rl":
        return ref.RefRateLimiter(params["rate"], resolver, clock)
    if kind == "lb":
        return ref.RefLoadBalancer(BACKENDS[: params["backends"]], SERVER, resolver)
    return ref.RefConntrack(params["capacity"], resolver, clock)


def trace_params(seed: int) -> dict:
    rng = random.Random(f"params:{seed}")
    return {
        "pool": rng.choice([2, 4, 8, 32, 1024]),
        "timeout": rng.choice([2.0, 30.0, 300.0]),
        "rate": rng.choice([2.0, 5.0, 50.0]),
        "backends": rng.randint(1, 3),
        "capacity": rng.choice([0, 3, 10, 100]),
    }


def run_both(events: list[tuple], kind: str, mode: Mode, params: dict) -> tuple[list, list]:
    """Decision sequences (package, reference) for one middlebox over one trace."""
    clock = _Clock()
    agent = TrackingAgent(TrackingTable(clock=clock))
    real = _build_real(kind, mode, clock, agent, params)
    ref_agent = ref.RefAgent()
    model = _build_ref(kind, mode, clock, ref_agent, params)
    real_out: list = []
    ref_out: list = []
    # NAT only: public endpoint each side handed to each connection's current address
    public_of: list[dict] = [{}, {}]
    for event in events:
        if event[0] == "tick":
            clock.now += event[1]
            continue
        if event[0] == "update":
            _, dcid, o, addr = event
            tuple_ = FiveTuple(Protocol.UDP, Endpoint(*addr), Endpoint(*SERVER))
            agent.dispatch_client(proto.encode(ClientUpdate(dcid, o, tuple_)))
            ref_agent.update(dcid, o, addr)
            continue
        _, outbound, pkt, conn = event
        pkts = [pkt, pkt]
        if kind == "nat" and not outbound and isinstance(conn, dict):
            for side in (0, 1):
                pub = public_of[side].get(id(conn))
                if pub is None:
                    pkts[side] = (pkt[0], pkt[1], pkt[2], PUBLIC_IP, 1, pkt[5])
                else:
                    pkts[side] = (pkt[0], pkt[1], pkt[2], *pub, pkt[5])
        direction = Direction.OUTBOUND if outbound else Direction.INBOUND
        action = real.process(_to_packet(pkts[0]).to_bytes(), direction)
        if isinstance(action, Drop):
            got = ("drop", action.reason)
        else:
            got = ("fwd", _from_packet(Packet.from_bytes(action.data)))
        if kind == "nat":
            want = model.private_side(pkts[1]) if outbound else model.public_side(pkts[1])
        else:
            want = model.process(pkts[1], outbound)
        if want[0] == "fwd":
            want = ("fwd", _normalize(want[1]))
        real_out.append(got)
        ref_out.append(want)
        if kind == "nat" and outbound and isinstance(conn, dict):
            for side, result in ((0, got), (1, want)):
                if result[0] == "fwd":
                    public_of[side][id(conn)] = (result[1][1], result[1][2])
    return real_out, ref_out
