"""Scenario metrics and their CSV form.

CSV files written by :func:`emit_csv` (one set per variant)::

    latency.csv     packet_id,t_in_us,t_out_us,phase_lookup_us,phase_create_us,phase_update_us
    throughput.csv  second,pkts,bytes
    tables.csv      t,middlebox_id,entries
    summary.csv     metric,value
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

LATENCY_COLUMNS = ("packet_id", "t_in_us", "t_out_us", "phase_lookup_us", "phase_create_us", "phase_update_us")
THROUGHPUT_COLUMNS = ("second", "pkts", "bytes")
TABLE_COLUMNS = ("t", "middlebox_id", "entries")
SUMMARY_COLUMNS = ("metric", "value")


@dataclass
class LatencyRow:
    packet_id: int
    t_in_us: float
    t_out_us: float
    lookup_us: float = 0.0
    create_us: float = 0.0
    update_us: float = 0.0

    @property
    def latency_us(self) -> float:
        return self.t_out_us - self.t_in_us


@dataclass
class MiddleboxStats:
    name: str
    kind: str
    mode: str
    offered: int = 0
    forwarded: int = 0
    drops: dict[str, int] = field(default_factory=dict)
    table_size: int = 0

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    @property
    def conserved(self) -> bool:
        return self.offered == self.forwarded + self.dropped


@dataclass
class MetricsReport:
    name: str
    latency: list[LatencyRow] = field(default_factory=list)
    throughput: list[tuple[int, int, int]] = field(default_factory=list)
    tables: list[tuple[float, str, int]] = field(default_factory=list)
    middleboxes: list[MiddleboxStats] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    variants: dict[str, MetricsReport] = field(default_factory=dict)
    # scenario-specific raw data (not written to CSV)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and all(v.passed for v in self.variants.values())

    def failed_checks(self) -> list[str]:
        failed = [name for name, ok in self.checks.items() if not ok]
        for vname, variant in self.variants.items():
            failed.extend(f"{vname}.{name}" for name in variant.failed_checks())
        return failed

    def latencies_us(self) -> list[float]:
        return [row.latency_us for row in self.latency]

    def median_latency_us(self) -> float | None:
        values = self.latencies_us()
        return statistics.median(values) if values else None

    def flat_summary(self) -> dict[str, Any]:
        out = dict(self.summary)
        for vname, variant in self.variants.items():
            for key, value in variant.flat_summary().items():
                out[f"{vname}.{key}"] = value
        for name, ok in self.checks.items():
            out[f"check.{name}"] = int(ok)
        return out


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _write(path: Path, columns: tuple[str, ...], rows: list[tuple]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_csv(report: MetricsReport, path: str | Path) -> list[Path]:
    """Write the report's CSV files into directory ``path``; returns the files written."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    parts = report.variants or {"": report}
    for vname, variant in parts.items():
        prefix = f"{vname}_" if vname else ""
        files = (
            (
                f"{prefix}latency.csv",
                LATENCY_COLUMNS,
                [
                    (r.packet_id, r.t_in_us, r.t_out_us, r.lookup_us, r.create_us, r.update_us)
                    for r in variant.latency
                ],
            ),
            (f"{prefix}throughput.csv", THROUGHPUT_COLUMNS, list(variant.throughput)),
            (f"{prefix}tables.csv", TABLE_COLUMNS, list(variant.tables)),
        )
        for fname, columns, rows in files:
            _write(out / fname, columns, rows)
            written.append(out / fname)
    summary = out / "summary.csv"
    _write(summary, SUMMARY_COLUMNS, sorted(report.flat_summary().items()))
    written.append(summary)
    return written
