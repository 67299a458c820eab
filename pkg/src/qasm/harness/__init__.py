"""Scenario runner: virtual-clock pipelines, the loopback benchmark and CSV output."""

from .config import ConfigError, MiddleboxSpec, ScenarioConfig, build_middlebox
from .loopback import LoopbackConfig, OverheadStats, bench_all, bench_overhead, overhead_ratios
from .pipeline import Simulation, run_scenario
from .report import LatencyRow, MetricsReport, MiddleboxStats, emit_csv
from .scenarios import (
    SCENARIOS,
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
from .sim import EventLoop

__all__ = [
    "ConfigError",
    "EventLoop",
    "LatencyRow",
    "LoopbackConfig",
    "MetricsReport",
    "MiddleboxSpec",
    "MiddleboxStats",
    "OverheadStats",
    "SCENARIOS",
    "ScenarioConfig",
    "Simulation",
    "bench_all",
    "bench_overhead",
    "build_middlebox",
    "emit_csv",
    "overhead_ratios",
    "run_scenario",
    "scenario_conntrack_flood",
    "scenario_forwarder",
    "scenario_latency",
    "scenario_lb_remap",
    "scenario_nat_dos",
    "scenario_rl_bypass",
    "scenario_nat_walk",
    "scenario_throughput",
    "stress_migration",
]
