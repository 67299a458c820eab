"""Virtual-clock run of client -> middlebox chain -> echo server.

Every component talks through scheduled events on one :class:`EventLoop`, so
a seed fully determines the run. Middlebox processing costs ``proc_delay``
plus ``query_rtt`` for each blocking agent query it made; that cost is what
shows up in the per-packet phase columns.
"""

from __future__ import annotations

import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..agent import protocol as proto
from ..agent.protocol import ClientUpdate, PushUpdate, Query, QueryResponse, Subscribe
from ..agent.service import TrackingAgent
from ..emulator import (
    ClientAgent,
    ClientEmulator,
    EchoServer,
    EmulatedConnection,
    ExplicitAddresses,
    RandomAddresses,
    SequentialAddresses,
    Trigger,
    packet_tag,
)
from ..middleboxes import Case, Direction, Drop, Middlebox, Mode
from ..packet import Packet, PacketError
from ..tracking import Endpoint, TrackingTable
from .config import ScenarioConfig, build_middlebox
from .report import LatencyRow, MetricsReport, MiddleboxStats
from .sim import EventLoop

_CASE_COLUMN = {Case.LOOKUP: 0, Case.CREATE: 1, Case.UPDATE: 2}


@dataclass
class _Meta:
    packet_id: int
    conn: int
    t_in: float
    request: bool = True
    phases: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])


class _SimAgentLink:
    """Queries are answered immediately but charged ``query_rtt`` of processing
    time; subscriptions travel to the agent after ``control_delay``."""

    def __init__(self, agent: TrackingAgent, loop: EventLoop, cfg: ScenarioConfig) -> None:
        self.agent = agent
        self.loop = loop
        self.cfg = cfg
        self.pending = 0.0
        self.queries = 0

    def query(self, msg: Query) -> QueryResponse | None:
        self.queries += 1
        self.pending += self.cfg.query_rtt
        reply = self.agent.dispatch_middlebox(proto.encode(msg))
        if reply is None:
            return None
        decoded = proto.decode(reply)
        return decoded if isinstance(decoded, QueryResponse) else None

    def subscribe(self, msg: Subscribe) -> None:
        self.loop.after(self.cfg.control_delay, self.agent.dispatch_middlebox, proto.encode(msg))


class Simulation:
    def __init__(self, cfg: ScenarioConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        self.loop = EventLoop()
        self.traffic_rng = random.Random(f"{cfg.seed}:traffic")
        self.loss_rng = random.Random(f"{cfg.seed}:control-loss")

        self.agent = TrackingAgent(TrackingTable(clock=self.loop.clock), outbox=self._push_out)
        self.client_agent = ClientAgent(self._control_out)
        self.emulator = ClientEmulator(self.client_agent, self._addresses(), self.traffic_rng)
        self.server = EchoServer(self.emulator)

        self.nodes: list[Middlebox] = []
        self.links: list[_SimAgentLink | None] = []
        self._push_targets: dict[Endpoint, object] = {}
        for i, spec in enumerate(cfg.middleboxes):
            link = None
            push_ep = None
            if spec.mode is not Mode.DEFAULT:
                link = _SimAgentLink(self.agent, self.loop, cfg)
                push_ep = Endpoint("10.255.0.1", 7000 + i)
            mbox = build_middlebox(spec, i, self.loop.clock, cfg.server, link, push_ep, cfg.dcid_len)
            if push_ep is not None:
                self._push_targets[push_ep] = mbox.resolver
            self.nodes.append(mbox)
            self.links.append(link)

        self.conns: dict[int, EmulatedConnection] = {}
        self._conn_addrs: dict[int, set[Endpoint]] = defaultdict(set)
        self._quiet_until: dict[int, float] = defaultdict(float)
        self._packet_ids = 0
        self.sent = 0
        self.replies_sent = 0
        self.replies_delivered = 0
        self.misroutes: Counter[str] = Counter()
        self.control_sent = 0
        self.lost_updates: list[ClientUpdate] = []
        self.control_lost = 0
        self.latency: list[LatencyRow] = []
        self.throughput: dict[int, list[int]] = defaultdict(lambda: [0, 0])
        self.tables: list[tuple[float, str, int]] = []
        self.backend_seen: dict[int, list[Endpoint]] = defaultdict(list)
        self.drops_at: Counter[str] = Counter()
        # per middlebox: (time, connection serial) of every forwarded request packet
        self.forward_log: list[list[tuple[float, int]]] = [[] for _ in self.nodes]

    # -- wiring ---------------------------------------------------------------

    def _addresses(self):
        cfg = self.cfg
        if cfg.addresses is not None:
            return ExplicitAddresses(cfg.addresses)
        if cfg.address_mode == "random":
            return RandomAddresses(random.Random(f"{cfg.seed}:addresses"), vary="ip")
        return SequentialAddresses(cfg.client_start, cfg.address_mode)

    def _control_out(self, data: bytes) -> None:
        self.control_sent += 1
        if self.cfg.control_loss and self.loss_rng.random() < self.cfg.control_loss:
            self.control_lost += 1
            msg = proto.decode(data)
            if isinstance(msg, ClientUpdate):
                self.lost_updates.append(msg)
            return
        self.loop.after(self.cfg.control_delay, self.agent.dispatch_client, data)

    def _push_out(self, dest: Endpoint, data: bytes) -> None:
        self.loop.after(self.cfg.push_delay, self._deliver_push, dest, data)

    def _deliver_push(self, dest: Endpoint, data: bytes) -> None:
        resolver = self._push_targets.get(dest)
        msg = proto.decode(data)
        if resolver is not None and isinstance(msg, PushUpdate):
            resolver.on_push(msg)

    # -- traffic --------------------------------------------------------------

    def _schedule_connections(self) -> None:
        cfg = self.cfg
        spacing = 1.0 / cfg.packet_rate
        for k in range(cfg.connections):
            t0 = k * spacing / cfg.connections
            self.loop.at(t0, self._nominal, k, 0, t0)
            policy = cfg.migration
            if policy is not None and policy.interval is not None:
                count = int(cfg.active_time / policy.interval + 1e-9)
                for m in range(1, count + 1):
                    self.loop.at(t0 + m * policy.interval, self._timed_migration, k)

    def _nominal(self, k: int, i: int, t0: float) -> None:
        n = self.cfg.packets_per_connection
        if i + 1 < n:
            self.loop.at(t0 + (i + 1) / self.cfg.packet_rate, self._nominal, k, i + 1, t0)
        self._emit(k, i)

    def _emit(self, k: int, i: int) -> None:
        cfg = self.cfg
        if i == 0:
            conn, pkt = self.emulator.open(cfg.server, cfg.dcid_len, cfg.payload_len, cfg.o_dcid)
            self.conns[k] = conn
            self._conn_addrs[k].add(conn.current_src)
            self._send(pkt, conn)
            return
        conn = self.conns[k]
        quiet = self._quiet_until[k]
        if self.loop.now < quiet:
            self.loop.at(quiet, self._emit_data, k)
            return
        policy = cfg.migration
        if policy is not None and policy.due(i):
            self._migrate(k)
            self.loop.after(cfg.update_lead, self._emit_data, k)
            return
        self._emit_data(k)

    def _emit_data(self, k: int) -> None:
        conn = self.conns[k]
        self._send(self.emulator.send_data(conn, self.cfg.payload_len), conn)

    def _migrate(self, k: int) -> None:
        conn = self.conns[k]
        self.emulator.migrate(conn, self.cfg.migration.rotate_dcid)
        self._conn_addrs[k].add(conn.current_src)
        self._quiet_until[k] = self.loop.now + self.cfg.update_lead

    def _timed_migration(self, k: int) -> None:
        if k in self.conns and not self.conns[k].closed:
            self._migrate(k)

    def _send(self, pkt: Packet, conn: EmulatedConnection) -> None:
        self.sent += 1
        meta = _Meta(self._packet_ids, conn.serial, self.loop.now)
        self._packet_ids += 1
        self._hop(0, pkt.to_bytes(), Direction.OUTBOUND, meta)

    def _hop(self, idx: int, data: bytes, direction: Direction, meta: _Meta, delay: float = 0.0) -> None:
        delay += self.cfg.link_delay
        if 0 <= idx < len(self.nodes):
            self.loop.after(delay, self._arrive, idx, data, direction, meta)
        elif direction is Direction.OUTBOUND:
            self.loop.after(delay, self._at_server, data, meta)
        else:
            self.loop.after(delay, self._at_client, data, meta)

    def _arrive(self, idx: int, data: bytes, direction: Direction, meta: _Meta) -> None:
        mbox = self.nodes[idx]
        link = self.links[idx]
        if link is not None:
            link.pending = 0.0
        action = mbox.process(data, direction)
        cost = self.cfg.proc_delay + (link.pending if link is not None else 0.0)
        if meta.request:
            meta.phases[_CASE_COLUMN[mbox.case]] += cost
        if isinstance(action, Drop):
            self.drops_at[f"{mbox.name}:{action.reason}"] += 1
            return
        if meta.request:
            self.forward_log[idx].append((self.loop.now, meta.conn))
        nxt = idx + 1 if direction is Direction.OUTBOUND else idx - 1
        self._hop(nxt, action.data, direction, meta, cost)

    def _at_server(self, data: bytes, meta: _Meta) -> None:
        try:
            pkt = Packet.from_bytes(data)
        except PacketError:
            self.misroutes["server_malformed"] += 1
            return
        conn, payload = self.server.identify(pkt)
        tag = packet_tag(payload)
        if conn is None or tag is None or tag[0] != conn.serial or conn.serial != meta.conn:
            self.misroutes["server_wrong_connection"] += 1
            return
        now = self.loop.now
        self.latency.append(
            LatencyRow(
                meta.packet_id,
                meta.t_in * 1e6,
                now * 1e6,
                meta.phases[0] * 1e6,
                meta.phases[1] * 1e6,
                meta.phases[2] * 1e6,
            )
        )
        bucket = self.throughput[int(now)]
        bucket[0] += 1
        bucket[1] += len(data)
        self.backend_seen[conn.serial].append(pkt.dst)
        if not self.cfg.echo:
            return
        reply = self.server.respond(pkt)
        if reply is None:
            return
        self.replies_sent += 1
        self._hop(len(self.nodes) - 1, reply.to_bytes(), Direction.INBOUND, _Meta(meta.packet_id, conn.serial, now, False))

    def _at_client(self, data: bytes, meta: _Meta) -> None:
        try:
            pkt = Packet.from_bytes(data)
        except PacketError:
            self.misroutes["client_malformed"] += 1
            return
        conn = self.emulator.connection_for_scid(pkt.payload[1 : 1 + self.cfg.dcid_len])
        if conn is None or conn.serial != meta.conn:
            self.misroutes["client_wrong_connection"] += 1
        elif pkt.dst not in self._conn_addrs[conn.serial]:
            self.misroutes["client_wrong_address"] += 1
        elif pkt.src != self.cfg.server:
            self.misroutes["client_wrong_source"] += 1
        else:
            self.replies_delivered += 1

    def _sample_tables(self) -> None:
        for mbox in self.nodes:
            self.tables.append((round(self.loop.now, 6), mbox.name, mbox.table_size()))

    def _sampler(self, end: float) -> None:
        self._sample_tables()
        nxt = self.loop.now + self.cfg.sample_interval
        if nxt <= end:
            self.loop.at(nxt, self._sampler, end)

    # -- run ------------------------------------------------------------------

    def run(self) -> MetricsReport:
        cfg = self.cfg
        self._schedule_connections()
        end = cfg.active_time + 1.0
        self.loop.at(0.0, self._sampler, end)
        self.loop.run()
        self._sample_tables()
        return self._report()

    def _report(self) -> MetricsReport:
        cfg = self.cfg
        report = MetricsReport(cfg.name)
        report.latency = sorted(self.latency, key=lambda r: r.packet_id)
        report.throughput = [(sec, v[0], v[1]) for sec, v in sorted(self.throughput.items())]
        report.tables = self.tables
        for spec, mbox in zip(cfg.middleboxes, self.nodes):
            report.middleboxes.append(
                MiddleboxStats(
                    mbox.name,
                    mbox.kind,
                    spec.mode.value,
                    mbox.offered,
                    mbox.forwarded,
                    dict(mbox.drops),
                    mbox.table_size(),
                )
            )
        migrations = sum(c.migrations_done for c in self.conns.values())
        s = report.summary
        s["offered"] = self.sent
        s["delivered"] = len(self.latency)
        s["replies_sent"] = self.replies_sent
        s["replies_delivered"] = self.replies_delivered
        s["misroutes"] = sum(self.misroutes.values())
        s["migrations"] = migrations
        s["control_sent"] = self.control_sent
        s["control_lost"] = self.control_lost
        s["agent_updates"] = self.agent.stats["client_updates"]
        s["agent_queries"] = self.agent.stats["queries"]
        s["agent_pushes"] = self.agent.stats["pushes"]
        median = report.median_latency_us()
        if median is not None:
            s["latency_median_us"] = median
        for st in report.middleboxes:
            s[f"{st.name}.offered"] = st.offered
            s[f"{st.name}.forwarded"] = st.forwarded
            s[f"{st.name}.dropped"] = st.dropped
            s[f"{st.name}.entries"] = st.table_size
            for reason, count in sorted(st.drops.items()):
                s[f"{st.name}.drop.{reason}"] = count
        for mbox in self.nodes:
            if hasattr(mbox, "allocations"):
                s[f"{mbox.name}.allocations"] = mbox.allocations
        report.checks["conservation"] = all(st.conserved for st in report.middleboxes)
        report.extra.update(
            simulation=self,
            connections=dict(self.conns),
            backends=dict(self.backend_seen),
            lost_updates=list(self.lost_updates),
            misroutes=dict(self.misroutes),
            forward_log=self.forward_log,
        )
        return report


def run_scenario(cfg: ScenarioConfig) -> MetricsReport:
    return Simulation(cfg).run()
