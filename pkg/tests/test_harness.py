import pytest

from qasm.emulator import MigrationPolicy
from qasm.harness import EventLoop
from qasm.harness.cli import main
from qasm.harness.config import ConfigError, MiddleboxSpec, ScenarioConfig
from qasm.harness.pipeline import run_scenario
from qasm.harness.report import MetricsReport, emit_csv
from qasm.harness.scenarios import (
    remap_fraction,
    scenario_forwarder,
    scenario_latency,
    scenario_throughput,
    window_violations,
)
from qasm.middleboxes import Mode
from qasm.tracking import Endpoint


def test_event_loop_orders_by_time_then_fifo():
    loop = EventLoop()
    seen = []
    loop.at(2.0, seen.append, "c")
    loop.at(1.0, seen.append, "a")
    loop.at(1.0, seen.append, "b")
    loop.after(0.5, lambda: loop.after(0.25, seen.append, "x"))
    loop.run(until=1.5)
    assert seen == ["x", "a", "b"] and loop.now == 1.5
    loop.run()
    assert seen[-1] == "c" and loop.now == 2.0
    with pytest.raises(ValueError):
        loop.at(1.0, seen.append, "late")


@pytest.mark.parametrize(
    "cfg",
    [
        ScenarioConfig(middleboxes=[MiddleboxSpec("nat")] * 6),
        ScenarioConfig(middleboxes=[MiddleboxSpec("teleporter")]),
        ScenarioConfig(middleboxes=[MiddleboxSpec("forwarder", mode=Mode.REACTIVE)]),
        ScenarioConfig(middleboxes=[MiddleboxSpec("nat", pool_size=0)]),
        ScenarioConfig(middleboxes=[MiddleboxSpec("rl", rate_limit=0)]),
        ScenarioConfig(middleboxes=[MiddleboxSpec("lb", backends=0)]),
        ScenarioConfig(middleboxes=[MiddleboxSpec("conntrack", conntrack_cap=-1)]),
        ScenarioConfig(packets=None, duration=None),
        ScenarioConfig(payload_len=4),
        ScenarioConfig(dcid_len=21),
        ScenarioConfig(control_loss=1.0),
        ScenarioConfig(address_mode="carrier-pigeon"),
        ScenarioConfig(connections=2, o_dcid=b"\x01" * 8),
    ],
)
def test_invalid_configs(cfg):
    with pytest.raises(ConfigError):
        cfg.validate()


def small(mode, **kw):
    return ScenarioConfig(
        middleboxes=[MiddleboxSpec("nat", mode=mode), MiddleboxSpec("rl", mode=mode, rate_limit=1000), MiddleboxSpec("conntrack", mode=mode)],
        packets=60,
        connections=3,
        migration=MigrationPolicy.every_n_packets(7),
        seed=5,
        **kw,
    )


@pytest.mark.parametrize("mode", list(Mode))
def test_chain_conserves_packets(mode):
    report = run_scenario(small(mode))
    assert report.checks["conservation"]
    s = report.summary
    assert s["offered"] == 180 and s["delivered"] == 180 and s["misroutes"] == 0
    assert s["replies_delivered"] == 180
    for box in ("nat0", "rl1", "conntrack2"):
        assert s[f"{box}.offered"] == s[f"{box}.forwarded"] + s[f"{box}.dropped"]


def test_same_seed_gives_identical_csv(tmp_path):
    a = emit_csv(run_scenario(small(Mode.PROACTIVE)), tmp_path / "a")
    b = emit_csv(run_scenario(small(Mode.PROACTIVE)), tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_csv_headers(tmp_path):
    files = emit_csv(MetricsReport("empty"), tmp_path)
    content = {p.name: p.read_text() for p in files}
    assert content == {
        "latency.csv": "packet_id,t_in_us,t_out_us,phase_lookup_us,phase_create_us,phase_update_us\n",
        "throughput.csv": "second,pkts,bytes\n",
        "tables.csv": "t,middlebox_id,entries\n",
        "summary.csv": "metric,value\n",
    }


def test_latency_rows_add_up(tmp_path):
    report = scenario_latency(packets=200, modes=(Mode.DEFAULT, Mode.REACTIVE))
    for variant in report.variants.values():
        for row in variant.latency:
            total = row.lookup_us + row.create_us + row.update_us
            assert row.latency_us >= total > 0
    assert report.summary["reactive_median_us"] >= report.summary["default_median_us"]


def test_control_loss_is_seeded():
    cfg = small(Mode.PROACTIVE, control_loss=0.3)
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.summary["control_lost"] == b.summary["control_lost"] > 0
    assert a.extra["lost_updates"] == b.extra["lost_updates"]


def test_forwarder_and_throughput():
    assert scenario_forwarder(packets=50).passed
    report = scenario_throughput(nats=2, duration=20)
    assert report.passed, report.failed_checks()


def test_window_violations():
    # three packets inside one second against a 1/s limit with burst 1
    assert window_violations([0.0, 0.1, 0.2], rate=1, capacity=1) == 1
    assert window_violations([0.0, 0.1, 0.2], rate=1, capacity=2) == 0
    assert window_violations([0.0, 1.0, 2.0, 3.0], rate=1, capacity=1) == 0
    assert window_violations([], rate=1, capacity=1) == 0


def test_remap_fraction():
    a, b = Endpoint("10.1.0.1", 443), Endpoint("10.1.0.2", 443)
    assert remap_fraction([a, a, b, b, a], 4) == 0.5
    assert remap_fraction([a], 0) == 0.0


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "nat_walk"]) == 0
    out = capsys.readouterr().out
    assert "PASS quic_one_mapping" in out
    assert main(["run", "nat_dos", "--pool-size", "4", "--csv", str(tmp_path)]) == 0
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "default_latency.csv").exists()
    assert main(["run", "nat_walk", "--mode", "default"]) == 2
    assert main(["run", "stress", "--migrate-every", "3"]) == 2
    assert main(["run", "nat_dos", "--pool-size", "0"]) == 2
    assert main(["run", "forwarder", "--loopback"]) == 2
    with pytest.raises(SystemExit):
        main(["run", "no-such-scenario"])
