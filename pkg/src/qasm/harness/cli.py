"""``qasm`` command line: run scenarios, or serve a tracking agent over UDP."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from typing import Sequence

from ..agent import AgentConfig, AgentServer
from ..emulator import MigrationPolicy
from ..middleboxes import Mode
from .config import ConfigError
from .loopback import LoopbackConfig, bench_all, overhead_ratios
from .report import MetricsReport, emit_csv
from .scenarios import (
    scenario_conntrack_flood,
    scenario_forwarder,
    scenario_latency,
    scenario_lb_remap,
    scenario_nat_dos,
    scenario_rl_bypass,
    scenario_nat_walk,
    scenario_throughput,
    stress_migration,
)

# allowed ratio of median processing time to the default NAT's, per mode
OVERHEAD_LIMITS = {"reactive": 1.10, "proactive": 1.03}

SCENARIO_NAMES = (
    "nat_walk",
    "nat_dos",
    "rl_bypass",
    "lb_remap",
    "conntrack_flood",
    "latency",
    "throughput",
    "stress",
    "forwarder",
    "overhead",
)
PAIRED = {"nat_walk", "nat_dos", "rl_bypass", "lb_remap", "conntrack_flood", "throughput"}


def _migration(args: argparse.Namespace) -> MigrationPolicy | None:
    if args.migrate_every is not None:
        return MigrationPolicy.every_n_packets(args.migrate_every)
    if args.migrate_hz is not None:
        return MigrationPolicy.rate_hz(args.migrate_hz)
    if args.migrate_sec is not None:
        return MigrationPolicy.every_t_seconds(args.migrate_sec)
    return None


def _overhead(args: argparse.Namespace) -> MetricsReport:
    cfg = LoopbackConfig(seed=args.seed)
    if args.packets is not None:
        cfg.packets = args.packets
    policy = _migration(args)
    if policy is not None:
        cfg.migration = policy
    modes = (Mode.DEFAULT, Mode.REACTIVE, Mode.PROACTIVE)
    if args.mode is not None and args.mode != "default":
        modes = (Mode.DEFAULT, Mode(args.mode))
    results = bench_all(modes, cfg)
    report = MetricsReport("overhead")
    for stats in results:
        for key, value in stats.summary().items():
            report.summary[f"{stats.mode}.{key}"] = value
    for mode, ratio in overhead_ratios(results).items():
        if mode in OVERHEAD_LIMITS:
            report.summary[f"{mode}.ratio_to_default"] = ratio
            report.checks[f"{mode}_within_{OVERHEAD_LIMITS[mode]:.2f}x"] = ratio <= OVERHEAD_LIMITS[mode]
    return report


def run_named(args: argparse.Namespace) -> MetricsReport:
    name = args.scenario
    if name == "overhead" or (name == "latency" and args.loopback):
        return _overhead(args)
    if args.loopback:
        raise ConfigError("--loopback applies to the latency/overhead benchmark only")
    mode = Mode(args.mode) if args.mode is not None else None
    if name in PAIRED or name == "stress":
        if mode is Mode.DEFAULT:
            raise ConfigError(f"{name} always runs the default side; --mode picks the QUIC-aware one")
        mode = mode or Mode.PROACTIVE
    policy = _migration(args)
    seed = args.seed
    if name == "nat_walk":
        return scenario_nat_walk(mode, seed)
    if name == "nat_dos":
        kw = {"pool_size": args.pool_size} if args.pool_size is not None else {}
        return scenario_nat_dos(migrations=args.migrations, mode=mode, seed=seed, migration=policy, **kw)
    if name == "rl_bypass":
        kw = {"rate_limit": args.rate_limit} if args.rate_limit is not None else {}
        if args.duration is not None:
            kw["duration"] = args.duration
        return scenario_rl_bypass(mode=mode, seed=seed, migration=policy, **kw)
    if name == "lb_remap":
        kw = {"backends": args.backends} if args.backends is not None else {}
        if args.migrations is not None:
            kw["migrations"] = args.migrations
        return scenario_lb_remap(mode=mode, seed=seed, migration=policy, **kw)
    if name == "conntrack_flood":
        kw = {"capacity": args.conntrack_cap} if args.conntrack_cap is not None else {}
        if args.migrations is not None:
            kw["migrations"] = args.migrations
        return scenario_conntrack_flood(mode=mode, seed=seed, migration=policy, **kw)
    if name == "latency":
        modes = (mode,) if mode is not None else (Mode.DEFAULT, Mode.REACTIVE, Mode.PROACTIVE)
        return scenario_latency(packets=args.packets or 1000, seed=seed, migration=policy, modes=modes)
    if name == "throughput":
        kw = {"nats": args.nats} if args.nats is not None else {}
        if args.duration is not None:
            kw["duration"] = args.duration
        return scenario_throughput(mode=mode, seed=seed, migration=policy, **kw)
    if name == "stress":
        if args.migrate_every is not None or args.migrate_sec is not None:
            raise ConfigError("stress takes its migration rate from --migrate-hz")
        return stress_migration(
            rate_hz=args.migrate_hz if args.migrate_hz is not None else 100.0,
            duration_s=args.duration or 10.0,
            loss=args.loss,
            mode=mode,
            seed=seed,
        )
    if name == "forwarder":
        return scenario_forwarder(packets=args.packets or 100, seed=seed)
    raise ConfigError(f"unknown scenario {name!r}")


def _print_report(report: MetricsReport, out=None) -> None:
    out = out or sys.stdout
    print(f"scenario {report.name}", file=out)
    for key, value in sorted(report.flat_summary().items()):
        if key.startswith("check."):
            continue
        shown = f"{value:.3f}" if isinstance(value, float) else value
        print(f"  {key} = {shown}", file=out)
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=out)
    for vname, variant in report.variants.items():
        for name, ok in variant.checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {vname}.{name}", file=out)


def _serve_agent(args: argparse.Namespace) -> int:
    cfg = AgentConfig(
        host=args.host,
        client_port=args.client_port,
        middlebox_port=args.middlebox_port,
        shard_count=args.shards,
        proactive=not args.no_push,
    )
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    with AgentServer(cfg) as server:
        print(f"client API on {server.client_address[0]}:{server.client_address[1]}")
        print(f"middlebox API on {server.middlebox_address[0]}:{server.middlebox_address[1]}")
        sys.stdout.flush()
        stop.wait()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qasm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and check its invariants")
    run.add_argument("scenario", choices=SCENARIO_NAMES)
    run.add_argument("--mode", choices=[m.value for m in Mode])
    run.add_argument("--seed", type=int, default=0)
    mig = run.add_mutually_exclusive_group()
    mig.add_argument("--migrate-every", type=int, metavar="N", help="migrate every N packets")
    mig.add_argument("--migrate-hz", type=float, metavar="F", help="migrate F times per second")
    mig.add_argument("--migrate-sec", type=float, metavar="T", help="migrate every T seconds")
    run.add_argument("--nats", type=int, metavar="K", help="NAT chain length (throughput)")
    run.add_argument("--pool-size", type=int, metavar="N", help="public ports per NAT (nat_dos)")
    run.add_argument("--rate-limit", type=float, metavar="PPS", help="rate limit (rl_bypass)")
    run.add_argument("--backends", type=int, metavar="K", help="load balancer backends (lb_remap)")
    run.add_argument("--conntrack-cap", type=int, metavar="N", help="conntrack capacity (conntrack_flood)")
    run.add_argument("--migrations", type=int, metavar="N", help="migration count for count-based scenarios")
    run.add_argument("--packets", type=int, metavar="N")
    run.add_argument("--duration", type=float, metavar="S")
    run.add_argument("--loss", type=float, default=0.0, help="ClientUpdate loss probability (stress)")
    run.add_argument("--csv", metavar="PATH", help="write CSV metrics into directory PATH")
    run.add_argument("--loopback", action="store_true", help="wall-clock UDP loopback benchmark")

    agent = sub.add_parser("agent", help="serve a tracking agent over UDP")
    agent.add_argument("--host", default="127.0.0.1")
    agent.add_argument("--client-port", type=int, default=4433)
    agent.add_argument("--middlebox-port", type=int, default=4434)
    agent.add_argument("--shards", type=int, default=1)
    agent.add_argument("--no-push", action="store_true", help="disable proactive pushes")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "agent":
        return _serve_agent(args)
    try:
        report = run_named(args)
    except (ConfigError, ValueError) as exc:
        print(f"qasm: error: {exc}", file=sys.stderr)
        return 2
    _print_report(report)
    if args.csv:
        try:
            for path in emit_csv(report, args.csv):
                print(f"wrote {path}")
        except OSError as exc:
            print(f"qasm: error: cannot write CSV: {exc}", file=sys.stderr)
            return 2
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
