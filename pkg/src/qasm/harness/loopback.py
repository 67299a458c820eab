"""Wall-clock overhead benchmark over UDP loopback.

Topology::

    client --udp--> middlebox node --udp--> sink --ack--> client
       \\--ClientUpdate--> AgentServer <--query/subscribe-- node
                                     \\--push--> PushListener (per proactive NAT)

The node hosts one NAT per mode and the client alternates between them packet
by packet, so machine drift hits every mode alike. Sending is lock-step (the
next packet leaves only after the sink acked the last), so no queueing leaks
into the measurement. Processing time is what the node spends on a received
datagram: decode, O-DCID resolution (including any blocking agent query),
translation and re-encode. The following ``sendto`` is timed separately; it
is identical work in every mode but picks up scheduler noise on small machines.
"""

from __future__ import annotations

import gc
import random
import socket
import statistics
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

from ..agent import AgentConfig, AgentServer, PushListener, UdpAgentLink
from ..emulator import ClientAgent, ClientEmulator, MigrationPolicy, SequentialAddresses, udp_transport
from ..middleboxes import DefaultNat, Direction, Drop, Middlebox, Mode, PublicPool, QuicNat, TrackingResolver
from ..packet import Packet
from ..tracking import Endpoint

SERVER = Endpoint("93.184.216.34", 443)
CDF_POINTS = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)


@dataclass
class OverheadStats:
    mode: str
    samples_ns: list[int] = field(default_factory=list)
    cases: list[str] = field(default_factory=list)
    send_ns: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.samples_ns)

    @property
    def median_us(self) -> float:
        return statistics.median(self.samples_ns) / 1000.0

    def cdf_us(self) -> list[tuple[float, float]]:
        ordered = sorted(self.samples_ns)
        n = len(ordered)
        return [(q, ordered[min(n - 1, int(q * n))] / 1000.0) for q in CDF_POINTS]

    def by_case(self) -> dict[str, dict[str, float]]:
        groups: dict[str, list[int]] = defaultdict(list)
        for ns, case in zip(self.samples_ns, self.cases):
            groups[case].append(ns)
        return {
            case: {"count": len(v), "median_us": statistics.median(v) / 1000.0, "mean_us": statistics.fmean(v) / 1000.0}
            for case, v in sorted(groups.items())
        }

    def summary(self) -> dict[str, float]:
        out: dict[str, float] = {"packets": self.count, "median_us": self.median_us}
        if self.send_ns:
            out["send_median_us"] = statistics.median(self.send_ns) / 1000.0
        for q, v in self.cdf_us():
            out[f"p{int(q * 100)}_us"] = v
        for case, stats in self.by_case().items():
            out[f"{case}.count"] = stats["count"]
            out[f"{case}.median_us"] = stats["median_us"]
        return out


class _Udp:
    @staticmethod
    def bound(timeout: float | None = 0.2) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(("127.0.0.1", 0))
        sock.settimeout(timeout)
        return sock


class MiddleboxNode:
    """One thread and one UDP socket serving several middleboxes ("lanes").

    Every datagram starts with a one-byte lane number that picks the
    middlebox; the rest is the packet. Sharing the thread, socket and next
    hop keeps everything but the middlebox itself identical across lanes.
    """

    def __init__(self, lanes: list[Middlebox], next_hop: tuple[str, int]) -> None:
        self.lanes = lanes
        self.next_hop = next_hop
        self.sock = _Udp.bound()
        self.samples: list[list[int]] = [[] for _ in lanes]
        self.cases: list[list[str]] = [[] for _ in lanes]
        self.send: list[list[int]] = [[] for _ in lanes]
        self.record = True
        self._stopping = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="middlebox-node", daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def _loop(self) -> None:
        sock = self.sock
        sendto = sock.sendto
        perf = time.perf_counter_ns
        outbound = Direction.OUTBOUND
        while not self._stopping.is_set():
            try:
                data = sock.recv(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            # read the flag before replying: the client may flip it as soon as it sees the ack
            record = self.record
            lane = data[0]
            mbox = self.lanes[lane]
            data = data[1:]
            t0 = perf()
            action = mbox.process(data, outbound)
            t1 = perf()
            # an empty datagram keeps the client's lock-step going after a drop
            sendto(b"" if isinstance(action, Drop) else action.data, self.next_hop)
            t2 = perf()
            if record:
                self.samples[lane].append(t1 - t0)
                self.send[lane].append(t2 - t1)
                self.cases[lane].append(mbox.case.name.lower())

    def start(self) -> MiddleboxNode:
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        self._thread.join(timeout=2)
        self.sock.close()


class _Sink:
    """Acknowledges every datagram to the client."""

    def __init__(self, client: tuple[str, int]) -> None:
        self.client = client
        self.sock = _Udp.bound()
        self.received = 0
        self._stopping = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="sink", daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def _loop(self) -> None:
        while not self._stopping.is_set():
            try:
                self.sock.recv(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            self.received += 1
            self.sock.sendto(b"k", self.client)

    def start(self) -> _Sink:
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        self._thread.join(timeout=2)
        self.sock.close()


class _Lane:
    """One mode's NAT plus the emulated client connection feeding it."""

    def __init__(self, mode: Mode, index: int, agent: AgentServer, cfg: LoopbackConfig) -> None:
        self.mode = mode
        self.index = index
        self.cfg = cfg
        self.link: UdpAgentLink | None = None
        self.listener: PushListener | None = None
        pool = PublicPool.sized(f"65.12.{81 + index}.14", 19450, 4096)
        if mode is Mode.DEFAULT:
            self.mbox: Middlebox = DefaultNat(pool, name=f"nat-{mode.value}")
        else:
            self.link = UdpAgentLink(agent.middlebox_address, timeout=cfg.query_timeout)
            push_ep = None
            if mode is Mode.PROACTIVE:
                self.listener = PushListener(lambda msg: resolver.on_push(msg))
                push_ep = self.listener.endpoint
            resolver = TrackingResolver(mode, self.link, default_dcid_len=cfg.dcid_len, push_endpoint=push_ep)
            if self.listener is not None:
                self.listener.start()
            self.mbox = QuicNat(pool, resolver, name=f"nat-{mode.value}")
        addresses = SequentialAddresses(Endpoint(f"10.{index}.0.45", 10001), "port")
        client_agent = ClientAgent(udp_transport(agent.client_address))
        self.emulator = ClientEmulator(client_agent, addresses, random.Random(f"{cfg.seed}:{index}:{mode.value}"))
        self.conn = None

    def next_packet(self) -> bytes:
        """The lane's next datagram; sleeps ``update_lead`` after reporting a migration."""
        cfg = self.cfg
        if self.conn is None:
            self.conn, pkt = self.emulator.open(SERVER, cfg.dcid_len, cfg.payload_len)
            time.sleep(cfg.update_lead)
        else:
            policy = cfg.migration
            if policy is not None and policy.due(self.conn.emitted):
                self.emulator.migrate(self.conn)
                time.sleep(cfg.update_lead)
            pkt = self.emulator.send_data(self.conn, cfg.payload_len)
        return bytes((self.index,)) + pkt.to_bytes()

    def stop(self) -> None:
        if self.listener is not None:
            self.listener.stop()
        if self.link is not None:
            self.link.close()


@dataclass
class LoopbackConfig:
    packets: int = 10_000
    warmup: int = 200
    migration: MigrationPolicy | None = field(default_factory=lambda: MigrationPolicy.every_n_packets(10))
    payload_len: int = 1200
    dcid_len: int = 8
    update_lead: float = 0.001
    query_timeout: float = 0.05
    seed: int = 0


def bench_all(
    modes: tuple[Mode, ...] = (Mode.DEFAULT, Mode.REACTIVE, Mode.PROACTIVE),
    cfg: LoopbackConfig | None = None,
) -> list[OverheadStats]:
    """Run every mode's lane on one node, alternating packet by packet.

    Returns one :class:`OverheadStats` per entry of ``modes`` (the same mode
    may appear more than once, e.g. for an A/A noise check).
    """
    cfg = cfg or LoopbackConfig()
    if len(modes) > 255:
        raise ValueError("too many lanes")
    agent = AgentServer(AgentConfig()).start()
    client = _Udp.bound(timeout=1.0)
    sink = _Sink(client.getsockname()).start()
    lanes = [_Lane(mode, i, agent, cfg) for i, mode in enumerate(modes)]
    node = MiddleboxNode([lane.mbox for lane in lanes], sink.address).start()
    target = node.address

    def send(lane: _Lane) -> None:
        client.sendto(lane.next_packet(), target)
        client.recv(16)

    gc_was_enabled = gc.isenabled()
    try:
        node.record = False
        for _ in range(cfg.warmup):
            for lane in lanes:
                send(lane)
        node.record = True
        gc.disable()
        n = len(lanes)
        for i in range(cfg.packets):
            # rotate the order so no lane always goes first
            for k in range(n):
                send(lanes[(i + k) % n])
            if i % 1000 == 999:
                gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
        node.stop()
        sink.stop()
        for lane in lanes:
            lane.stop()
        client.close()
        agent.stop()
    return [
        OverheadStats(lane.mode.value, node.samples[i], node.cases[i], node.send[i]) for i, lane in enumerate(lanes)
    ]


def bench_overhead(mode: Mode = Mode.PROACTIVE, cfg: LoopbackConfig | None = None) -> OverheadStats:
    """Processing-time stats for one mode, benchmarked on its own."""
    return bench_all((mode,), cfg)[0]


def overhead_ratios(results: list[OverheadStats]) -> dict[str, float]:
    """Median processing time of each mode relative to the default NAT."""
    base = next(r for r in results if r.mode == Mode.DEFAULT.value).median_us
    return {r.mode: r.median_us / base for r in results}
