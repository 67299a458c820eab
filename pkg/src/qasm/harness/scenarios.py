"""Attack and performance scenarios.

Attack scenarios run the default middlebox and its QUIC-aware counterpart on
the same seeded trace and put both runs under ``report.variants``; the
scenario's checks compare the two.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

from ..emulator import MigrationPolicy
from ..middleboxes import Mode
from ..tracking import Endpoint
from ..wire import ConnectionId
from .config import MiddleboxSpec, ScenarioConfig, default_public_ip
from .pipeline import run_scenario
from .report import MetricsReport

WALK_ADDRESSES = [
    Endpoint("10.0.0.45", 10001),
    Endpoint("10.0.0.45", 10002),
    Endpoint("10.0.0.45", 10003),
    Endpoint("10.0.0.46", 10000),
]
WALK_ODCID = bytes.fromhex("fa12ab")


def _with_mode(cfg: ScenarioConfig, mode: Mode) -> ScenarioConfig:
    boxes = [dataclasses.replace(m, mode=mode if m.kind != "forwarder" else Mode.DEFAULT) for m in cfg.middleboxes]
    return dataclasses.replace(cfg, middleboxes=boxes, name=f"{cfg.name}:{mode.value}")


def _paired(cfg: ScenarioConfig, mode: Mode) -> MetricsReport:
    if mode is Mode.DEFAULT:
        raise ValueError("the QUIC-aware side of a paired run needs reactive or proactive mode")
    report = MetricsReport(cfg.name)
    report.variants["default"] = run_scenario(_with_mode(cfg, Mode.DEFAULT))
    report.variants["quic"] = run_scenario(_with_mode(cfg, mode))
    report.summary["mode"] = mode.value
    for name, variant in report.variants.items():
        report.checks[f"{name}_conservation"] = variant.checks["conservation"]
    return report


def _node(report: MetricsReport, index: int = 0):
    return report.extra["simulation"].nodes[index]


# -- NAT -----------------------------------------------------------------------


def scenario_nat_walk(mode: Mode = Mode.PROACTIVE, seed: int = 0) -> MetricsReport:
    """One connection walks through four private endpoints behind a NAT."""
    cfg = ScenarioConfig(
        name="nat_walk",
        middleboxes=[MiddleboxSpec("nat")],
        packets=len(WALK_ADDRESSES),
        migration=MigrationPolicy.every_n_packets(1),
        dcid_len=len(WALK_ODCID),
        o_dcid=WALK_ODCID,
        addresses=list(WALK_ADDRESSES),
        seed=seed,
    )
    report = _paired(cfg, mode)
    default_nat = _node(report.variants["default"])
    quic_nat = _node(report.variants["quic"])
    mapped = quic_nat.quic_bindings()
    report.summary["default_mappings"] = len(default_nat.bindings)
    report.summary["quic_mappings"] = len(quic_nat.bindings)
    first_public = Endpoint(default_public_ip(0), 19450)
    report.checks["default_four_mappings"] = len(default_nat.bindings) == 4 and default_nat.allocations == 4
    report.checks["quic_one_mapping"] = (
        len(quic_nat.bindings) == 1
        and quic_nat.allocations == 1
        and len(mapped) == 1
        and mapped[0].o_dcid == ConnectionId(WALK_ODCID)
        and mapped[0].public == first_public
        and mapped[0].private_endpoints == WALK_ADDRESSES
    )
    report.extra["table"] = [(b.o_dcid, list(b.private_endpoints), b.public) for b in mapped]
    return report


def scenario_nat_dos(
    pool_size: int = 8,
    migrations: int | None = None,
    mode: Mode = Mode.PROACTIVE,
    seed: int = 0,
    migration: MigrationPolicy | None = None,
) -> MetricsReport:
    """Migrate on every packet until the default NAT's pool is gone."""
    migrations = 2 * pool_size if migrations is None else migrations
    packets = migrations + 1
    cfg = ScenarioConfig(
        name="nat_dos",
        middleboxes=[MiddleboxSpec("nat", pool_size=pool_size)],
        packets=packets,
        migration=migration or MigrationPolicy.every_n_packets(1),
        seed=seed,
    )
    report = _paired(cfg, mode)
    default, quic = report.variants["default"], report.variants["quic"]
    d_nat, q_nat = _node(default), _node(quic)
    expected_drops = max(0, packets - pool_size) if migration is None else None
    delivered_ids = [row.packet_id for row in default.latency]
    report.summary.update(
        pool_size=pool_size,
        packets=packets,
        default_drops=d_nat.drops["pool_exhausted"],
        default_bindings=len(d_nat.bindings),
        quic_drops=q_nat.dropped,
        quic_bindings=len(q_nat.bindings),
    )
    if expected_drops is not None:
        report.summary["expected_default_drops"] = expected_drops
        report.checks["default_drops_after_pool"] = (
            d_nat.dropped == expected_drops and delivered_ids == list(range(min(packets, pool_size)))
        )
    else:
        report.checks["default_drops_after_pool"] = len(d_nat.bindings) <= pool_size
    report.checks["quic_no_drops"] = q_nat.dropped == 0 and q_nat.allocations == 1
    series = [n for _, _, n in quic.tables]
    report.checks["quic_one_binding_throughout"] = all(n <= 1 for n in series) and len(q_nat.bindings) == 1
    return report


# -- rate limiter ----------------------------------------------------------------


def window_violations(times: list[float], rate: float, capacity: float, min_window: float = 1.0) -> int:
    """Number of (i, j) pairs whose packet count exceeds rate*max(W, min_window) + capacity."""
    times = sorted(times)
    bad = 0
    for i in range(len(times)):
        for j in range(i, len(times)):
            window = max(min_window, times[j] - times[i])
            if j - i + 1 > rate * window + capacity + 1e-9:
                bad += 1
    return bad


def scenario_rl_bypass(
    rate_limit: float = 5.0,
    offered_rate: float = 20.0,
    duration: float = 30.0,
    mode: Mode = Mode.PROACTIVE,
    seed: int = 0,
    migration: MigrationPolicy | None = None,
) -> MetricsReport:
    """Per-flow rate limit against a client that migrates every 10 packets."""
    cfg = ScenarioConfig(
        name="rl_bypass",
        middleboxes=[MiddleboxSpec("rl", rate_limit=rate_limit)],
        packet_rate=offered_rate,
        packets=None,
        duration=duration,
        migration=migration or MigrationPolicy.every_n_packets(10),
        echo=False,
        seed=seed,
    )
    report = _paired(cfg, mode)
    capacity = rate_limit * 1.0
    rates = {}
    for name, variant in report.variants.items():
        times = [t for t, _ in variant.extra["forward_log"][0]]
        rates[name] = len(times) / duration
        report.summary[f"{name}_delivered"] = len(times)
        report.summary[f"{name}_rate_pps"] = rates[name]
        report.extra[f"{name}_times"] = times
    violations = window_violations(report.extra["quic_times"], rate_limit, capacity)
    report.summary["quic_window_violations"] = violations
    report.checks["default_bypassed"] = rates["default"] > rate_limit
    report.checks["quic_honours_limit"] = violations == 0
    return report


# -- load balancer ---------------------------------------------------------------


def remap_fraction(backends: list[Endpoint], migrations: int) -> float:
    if migrations == 0:
        return 0.0
    changes = sum(1 for a, b in zip(backends, backends[1:]) if a != b)
    return changes / migrations


def scenario_lb_remap(
    migrations: int = 20,
    backends: int = 2,
    mode: Mode = Mode.PROACTIVE,
    seed: int = 0,
    migration: MigrationPolicy | None = None,
) -> MetricsReport:
    """One connection hopping between random client IPs in front of an L4 balancer."""
    cfg = ScenarioConfig(
        name="lb_remap",
        middleboxes=[MiddleboxSpec("lb", backends=backends)],
        packets=migrations + 1,
        migration=migration or MigrationPolicy.every_n_packets(1),
        address_mode="random",
        seed=seed,
    )
    report = _paired(cfg, mode)
    fractions = {}
    for name, variant in report.variants.items():
        seen = variant.extra["backends"].get(0, [])
        done = variant.summary["migrations"]
        fractions[name] = remap_fraction(seen, done)
        report.summary[f"{name}_remap_fraction"] = fractions[name]
        report.summary[f"{name}_backends_used"] = len(set(seen))
        report.extra[f"{name}_backends"] = seen
    report.checks["quic_pinned"] = fractions["quic"] == 0.0 and report.variants["quic"].summary["delivered"] == migrations + 1
    return report


# -- conntrack -------------------------------------------------------------------


def scenario_conntrack_flood(
    capacity: int = 100,
    migrations: int = 150,
    mode: Mode = Mode.PROACTIVE,
    seed: int = 0,
    migration: MigrationPolicy | None = None,
) -> MetricsReport:
    packets = migrations + 1
    cfg = ScenarioConfig(
        name="conntrack_flood",
        middleboxes=[MiddleboxSpec("conntrack", conntrack_cap=capacity)],
        packets=packets,
        migration=migration or MigrationPolicy.every_n_packets(1),
        seed=seed,
    )
    report = _paired(cfg, mode)
    d_ct, q_ct = _node(report.variants["default"]), _node(report.variants["quic"])
    report.summary.update(
        capacity=capacity,
        default_entries=len(d_ct.entries),
        default_rejected=d_ct.rejected_new,
        quic_entries=len(q_ct.entries),
        quic_rejected=q_ct.rejected_new,
    )
    if migration is None:
        report.checks["default_flooded"] = d_ct.rejected_new == max(0, packets - capacity)
    report.checks["quic_single_entry"] = len(q_ct.entries) == min(1, capacity) and (
        q_ct.rejected_new == 0 or capacity == 0
    )
    return report


# -- performance -----------------------------------------------------------------


def scenario_latency(
    packets: int = 1000,
    migrate_every: int = 10,
    seed: int = 0,
    migration: MigrationPolicy | None = None,
    modes: tuple[Mode, ...] = (Mode.DEFAULT, Mode.REACTIVE, Mode.PROACTIVE),
) -> MetricsReport:
    """Per-packet latency through one NAT, once per mode, on the same trace."""
    base = ScenarioConfig(
        name="latency",
        middleboxes=[MiddleboxSpec("nat")],
        packets=packets,
        migration=migration or MigrationPolicy.every_n_packets(migrate_every),
        seed=seed,
    )
    report = MetricsReport("latency")
    for mode in modes:
        variant = run_scenario(_with_mode(base, mode))
        report.variants[mode.value] = variant
        report.summary[f"{mode.value}_median_us"] = variant.median_latency_us()
        report.checks[f"{mode.value}_conservation"] = variant.checks["conservation"]
        report.checks[f"{mode.value}_series_length"] = len(variant.latency) <= packets
    return report


def scenario_throughput(
    nats: int = 1,
    duration: float = 30.0,
    packet_rate: float = 100.0,
    migrate_sec: float = 10.0,
    payload_len: int = 1200,
    mode: Mode = Mode.PROACTIVE,
    seed: int = 0,
    migration: MigrationPolicy | None = None,
) -> MetricsReport:
    """Throughput through a chain of ``nats`` NATs with periodic migration."""
    cfg = ScenarioConfig(
        name="throughput",
        middleboxes=[MiddleboxSpec("nat") for _ in range(nats)],
        packets=None,
        duration=duration,
        packet_rate=packet_rate,
        payload_len=payload_len,
        migration=migration or MigrationPolicy.every_t_seconds(migrate_sec),
        seed=seed,
    )
    report = _paired(cfg, mode)
    means = {}
    for name, variant in report.variants.items():
        pkts = sum(p for _, p, _ in variant.throughput)
        byts = sum(b for _, _, b in variant.throughput)
        means[name] = pkts / duration
        report.summary[f"{name}_pkts_per_s"] = pkts / duration
        report.summary[f"{name}_bytes_per_s"] = byts / duration
    report.summary["nats"] = nats
    report.checks["quic_close_to_default"] = means["quic"] >= 0.95 * means["default"]
    return report


def stress_migration(
    rate_hz: float = 100.0,
    duration_s: float = 10.0,
    loss: float = 0.0,
    mode: Mode = Mode.PROACTIVE,
    connections: int = 1,
    packet_rate: float = 1000.0,
    seed: int = 0,
) -> MetricsReport:
    """High-rate migration through a QUIC-aware NAT, optionally losing ClientUpdates."""
    if not 0 <= rate_hz <= 1000:
        raise ValueError("rate_hz must be in [0, 1000]")
    if mode is Mode.DEFAULT:
        raise ValueError("stress runs the QUIC-aware NAT")
    cfg = ScenarioConfig(
        name="stress_migration",
        middleboxes=[MiddleboxSpec("nat", mode=mode)],
        connections=connections,
        packets=None,
        duration=duration_s,
        packet_rate=packet_rate,
        migration=MigrationPolicy.rate_hz(rate_hz) if rate_hz > 0 else None,
        control_loss=loss,
        sample_interval=0.1,
        seed=seed,
    )
    report = run_scenario(cfg)
    nat = _node(report)
    conns = report.extra["connections"]
    o_dcids = {c.o_dcid for c in conns.values()}
    lost_dcids = {u.dcid for u in report.extra["lost_updates"]}
    extra_keys = {key[1] for key in nat.bindings if isinstance(key, tuple) and key[0] == "quic" and key[1] not in o_dcids}
    default_keys = [key for key in nat.bindings if not (isinstance(key, tuple) and key[0] == "quic")]
    report.summary["extra_bindings"] = len(extra_keys)
    report.summary["lost_update_dcids"] = len(lost_dcids)
    report.checks["no_misroutes"] = report.summary["misroutes"] == 0
    report.checks["all_delivered"] = (
        report.summary["delivered"] == report.summary["offered"]
        and report.summary["replies_delivered"] == report.summary["replies_sent"] == report.summary["offered"]
    )
    report.checks["no_drops"] = nat.dropped == 0
    report.checks["connection_bindings_present"] = all(("quic", o) in nat.bindings for o in o_dcids)
    if loss == 0:
        report.checks["bindings_equal_connections"] = all(n == len(conns) for _, _, n in report.tables[1:])
    report.checks["extra_only_from_lost_updates"] = extra_keys <= lost_dcids and not default_keys
    return report


def scenario_forwarder(packets: int = 100, seed: int = 0) -> MetricsReport:
    """No middlebox at all; everything sent must arrive."""
    report = run_scenario(ScenarioConfig(name="forwarder", packets=packets, seed=seed))
    report.checks["all_delivered"] = report.summary["delivered"] == packets
    return report


SCENARIOS: dict[str, Callable[..., MetricsReport]] = {
    "nat_walk": scenario_nat_walk,
    "nat_dos": scenario_nat_dos,
    "rl_bypass": scenario_rl_bypass,
    "lb_remap": scenario_lb_remap,
    "conntrack_flood": scenario_conntrack_flood,
    "latency": scenario_latency,
    "throughput": scenario_throughput,
    "stress": stress_migration,
    "forwarder": scenario_forwarder,
}
