"""Acceptance gate. Each test prints one ``PASS``/``FAIL`` line for its criterion.

Expected values come from oracles written here or in ``reference_sim`` and
never from the package under test.
"""

import bisect
import random
import time

import pytest
from oracle_traces import KINDS, make_trace, run_both, trace_params

from qasm.agent.protocol import (
    ClientUpdate,
    ConnClose,
    PushUpdate,
    Query,
    QueryResponse,
    RecordBody,
    Subscribe,
    decode,
    encode,
)
from qasm.harness.cli import OVERHEAD_LIMITS
from qasm.harness.loopback import LoopbackConfig, bench_all, overhead_ratios
from qasm.harness.scenarios import (
    WALK_ADDRESSES,
    WALK_ODCID,
    scenario_conntrack_flood,
    scenario_lb_remap,
    scenario_nat_dos,
    scenario_rl_bypass,
    scenario_nat_walk,
    stress_migration,
)
from qasm.middleboxes import Mode
from qasm.tracking import Endpoint, FiveTuple
from qasm.wire import (
    ConnectionId,
    HeaderForm,
    QuicHeader,
    decode_header,
    encode_header,
)

QUIC_MODES = (Mode.REACTIVE, Mode.PROACTIVE)


@pytest.fixture
def gate(capsys):
    """Print the criterion's verdict line (bypassing capture), then assert it."""

    def report(number, ok, elapsed, limit, detail):
        ok_time = elapsed < limit
        verdict = "PASS" if ok and ok_time else "FAIL"
        with capsys.disabled():
            print(f"\n{verdict} criterion {number}: {detail} ({elapsed:.2f}s, limit {limit:g}s)")
        assert ok, detail
        assert ok_time, f"took {elapsed:.2f}s, limit {limit}s"

    return report


def test_criterion_1_nat_walk_mappings(gate):
    t0 = time.perf_counter()
    results = {m: scenario_nat_walk(m) for m in QUIC_MODES}
    elapsed = time.perf_counter() - t0
    details, ok = [], True
    for mode, report in results.items():
        default_n = report.summary["default_mappings"]
        quic_n = report.summary["quic_mappings"]
        (o_dcid, privs, public), = report.extra["table"]
        ok &= default_n == 4 and quic_n == 1
        ok &= o_dcid == WALK_ODCID and privs == WALK_ADDRESSES and public == Endpoint("65.12.81.14", 19450)
        details.append(f"{mode.value}: default {default_n} mappings, quic {quic_n}")
    gate(1, ok, elapsed, 1.0, "; ".join(details))


def nat_counting_oracle(pool: int, packets: int) -> tuple[list[int], int]:
    """Every packet comes from a fresh source tuple: the first ``pool`` get a port."""
    free = pool
    delivered = []
    for i in range(packets):
        if free:
            free -= 1
            delivered.append(i)
    return delivered, packets - len(delivered)


def test_criterion_2_nat_exhaustion(gate):
    t0 = time.perf_counter()
    ok, details = True, []
    for pool in (1, 8, 64, 256):
        report = scenario_nat_dos(pool_size=pool, mode=Mode.PROACTIVE)
        packets = report.summary["packets"]
        want_ids, want_drops = nat_counting_oracle(pool, packets)
        default, quic = report.variants["default"], report.variants["quic"]
        got_ids = [row.packet_id for row in default.latency]
        ok &= default.summary["nat0.dropped"] == want_drops and got_ids == want_ids
        ok &= quic.summary["nat0.dropped"] == 0 and quic.summary["delivered"] == packets
        details.append(f"P={pool}: default drops {default.summary['nat0.dropped']}/{want_drops}, quic {quic.summary['nat0.dropped']}")
    elapsed = time.perf_counter() - t0
    gate(2, ok, elapsed, 5.0, "; ".join(details))


def worst_window_excess(times: list[float], rate: float, capacity: float) -> float:
    """max over windows [t, t+W], W >= 1 s, of count - (rate*W + capacity).

    A window only needs checking when it starts at a packet; for each start
    the count only changes at packet times, so those are the only ends tried
    (plus the 1 s minimum length)."""
    times = sorted(times)
    worst = float("-inf")
    for i, start in enumerate(times):
        ends = [start + 1.0] + [t for t in times[i:] if t - start >= 1.0]
        for end in ends:
            count = bisect.bisect_right(times, end + 1e-12) - i
            worst = max(worst, count - (rate * (end - start) + capacity))
    return worst


def test_criterion_3_rate_limit(gate):
    t0 = time.perf_counter()
    rate, duration = 5.0, 30.0
    reports = {m: scenario_rl_bypass(rate_limit=rate, offered_rate=20, duration=duration, mode=m) for m in QUIC_MODES}
    elapsed = time.perf_counter() - t0
    ok, details = True, []
    for mode, report in reports.items():
        quic_times = report.extra["quic_times"]
        default_rate = len(report.extra["default_times"]) / duration
        excess = worst_window_excess(quic_times, rate, capacity=rate * 1.0)
        ok &= excess <= 1e-9 and default_rate > rate
        details.append(f"{mode.value}: quic worst window excess {excess:+.2f} pkts, default {default_rate:.2f} pps")
    gate(3, ok, elapsed, 5.0, "; ".join(details))


def test_criterion_4_lb_remap(gate):
    t0 = time.perf_counter()
    default_fracs, quic_fracs = [], []
    for seed in range(10):
        report = scenario_lb_remap(migrations=20, backends=2, seed=seed, mode=Mode.PROACTIVE)
        # recount from the raw backend sequence
        for name, fracs in (("default", default_fracs), ("quic", quic_fracs)):
            seq = report.extra[f"{name}_backends"]
            assert len(seq) == 21
            fracs.append(sum(a != b for a, b in zip(seq, seq[1:])) / 20)
    elapsed = time.perf_counter() - t0
    ok = all(f == 0 for f in quic_fracs) and any(f > 0 for f in default_fracs)
    gate(4, ok, elapsed, 1.0, f"quic max remap {max(quic_fracs):.2f}, default remap {min(default_fracs):.2f}..{max(default_fracs):.2f}")


def test_criterion_5_conntrack(gate):
    t0 = time.perf_counter()
    ok, details = True, []
    for mode in QUIC_MODES:
        report = scenario_conntrack_flood(capacity=100, migrations=150, mode=mode)
        s = report.summary
        ok &= s["default_rejected"] >= 50 and s["quic_entries"] == 1
        details.append(f"{mode.value}: default rejected {s['default_rejected']}, quic entries {s['quic_entries']}")
    elapsed = time.perf_counter() - t0
    gate(5, ok, elapsed, 1.0, "; ".join(details))


def test_criterion_6_loopback_overhead(gate):
    t0 = time.perf_counter()
    results = bench_all((Mode.DEFAULT, Mode.REACTIVE, Mode.PROACTIVE), LoopbackConfig(packets=10_000))
    elapsed = time.perf_counter() - t0
    assert all(r.count == 10_000 for r in results)
    ratios = overhead_ratios(results)
    medians = {r.mode: r.median_us for r in results}
    ok = all(ratios[m] <= limit for m, limit in OVERHEAD_LIMITS.items())
    detail = ", ".join(f"{m} {medians[m]:.1f}us ({ratios[m]:.3f}x)" for m in ("default", "reactive", "proactive"))
    gate(6, ok, elapsed, 60.0, detail)


def test_criterion_7_stress(gate):
    t0 = time.perf_counter()
    clean = stress_migration(rate_hz=100, duration_s=10, loss=0.0)
    lossy = stress_migration(rate_hz=100, duration_s=10, loss=0.1)
    elapsed = time.perf_counter() - t0
    ok = True
    for report in (clean, lossy):
        ok &= report.summary["misroutes"] == 0 and report.summary["migrations"] == 1000
        ok &= report.checks["extra_only_from_lost_updates"] and report.checks["no_drops"]
    ok &= clean.summary["extra_bindings"] == 0 and clean.checks["bindings_equal_connections"]
    ok &= lossy.summary["control_lost"] > 0
    detail = (
        f"misroutes {clean.summary['misroutes']}/{lossy.summary['misroutes']}, "
        f"lossy run: {lossy.summary['extra_bindings']} extra bindings from {lossy.summary['lost_update_dcids']} lost updates"
    )
    gate(7, ok, elapsed, 15.0, detail)


def test_criterion_8_oracle_equivalence(gate):
    modes = (Mode.DEFAULT, Mode.REACTIVE, Mode.PROACTIVE)
    t0 = time.perf_counter()
    mismatches = []
    decisions = 0
    for seed in range(100):
        events = make_trace(seed, max_packets=1000)
        params = trace_params(seed)
        mode = modes[seed % 3]
        for kind in KINDS:
            got, want = run_both(events, kind, mode, params)
            decisions += len(got)
            if got != want:
                first = next((i for i, (a, b) in enumerate(zip(got, want)) if a != b), min(len(got), len(want)))
                mismatches.append((seed, kind, mode.value, first))
    elapsed = time.perf_counter() - t0
    detail = f"{decisions} decisions over 100 traces x {len(KINDS)} middleboxes, mismatches {mismatches[:3]}"
    gate(8, not mismatches, elapsed, 30.0, detail)


def random_message(rng: random.Random):
    def cid():
        return ConnectionId(rng.randbytes(rng.randrange(21)))

    def ep():
        return Endpoint(".".join(str(rng.randrange(256)) for _ in range(4)), rng.randrange(65536))

    def body():
        return RecordBody(
            cid(),
            tuple(cid() for _ in range(rng.randrange(6))),
            tuple(ep() for _ in range(rng.randrange(6))),
            ep(),
            rng.randrange(21),
        )

    kind = rng.randrange(6)
    if kind == 0:
        return ClientUpdate(cid(), cid(), FiveTuple(17, ep(), ep()))
    if kind == 1:
        return ConnClose(cid())
    if kind == 2:
        return Query(cid(), ep(), ep())
    if kind == 3:
        return QueryResponse(body() if rng.random() < 0.8 else None)
    if kind == 4:
        return Subscribe(cid(), ep())
    return PushUpdate(rng.randrange(2**32), body())


def test_criterion_9_roundtrip(gate):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        msg = random_message(rng)
        bad += decode(encode(msg)) != msg
    for _ in range(10_000):
        payload = rng.randbytes(rng.randrange(40))
        if rng.random() < 0.5:
            hdr = QuicHeader(
                HeaderForm.LONG,
                ConnectionId(rng.randbytes(rng.randrange(21))),
                ConnectionId(rng.randbytes(rng.randrange(21))),
                rng.randrange(2**32),
                payload,
            )
        else:
            hdr = QuicHeader(HeaderForm.SHORT, ConnectionId(rng.randbytes(rng.randrange(1, 21))), payload=payload)
        data = encode_header(hdr)
        bad += decode_header(data, len(hdr.dcid)) != hdr or encode_header(decode_header(data, len(hdr.dcid))) != data
    elapsed = time.perf_counter() - t0
    gate(9, bad == 0, elapsed, 5.0, f"10000 messages + 10000 headers, {bad} mismatches")
