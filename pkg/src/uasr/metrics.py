"""Per-tick record schema, the summary fold, and text writers."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .channel import LinkKind
from .link_protocol import LinkStatus

RECORD_SCHEMA_VERSION = 1

COLUMNS = (
    "tick",
    "time_s",
    "record",
    "id",
    "kind",
    "state",
    "peer",
    "range_m",
    "elevation_deg",
    "rssi_dbm",
    "avg_rssi_dbm",
    "sinr_db",
    "doppler_hz",
    "capacity_bps",
    "offered_bytes",
    "delivered_bytes",
    "dropped_bytes",
    "buffered_bytes",
    "delay_max_s",
    "propagation_s",
    "processing_s",
    "total_delay_s",
)
COL = {name: i for i, name in enumerate(COLUMNS)}

OUTAGE_STATES = frozenset({"interrupted", "handover"})
HANDOVER_KINDS = ("a2g", "cellular", "flight_change", "vertical")

# Enum.value goes through a descriptor; a plain lookup is cheaper per record
_VALUE = {m: m.value for e in (LinkKind, LinkStatus) for m in e}


def link_record(tick, time, sample, state, avg_rssi):
    return (
        tick, time, "link", f"{sample.tx}>{sample.rx}", _VALUE[sample.kind], _VALUE.get(state, state), sample.rx,
        sample.range_m, sample.elevation_deg, sample.rssi_dbm, avg_rssi, sample.sinr_db, sample.doppler_hz,
        sample.capacity_bps, None, None, None, None, None, None, None, None,
    )


def path_record(tick, time, train, state, chain, total_range, capacity, budget):
    if budget is None:
        return (tick, time, "path", train, "path", state, chain) + (None,) * 15
    return (
        tick, time, "path", train, "path", state, chain, total_range, None, None, None, None, None, capacity,
        None, None, None, None, None, budget.propagation, budget.uav_processing + budget.hst_processing, budget.total,
    )


def flow_record(tick, time, flow, cls, state, offered, delivered, dropped, buffered, delay_max):
    return (
        tick, time, "flow", flow, cls, state, None, None, None, None, None, None, None, None,
        offered, delivered, dropped, buffered, delay_max, None, None, None,
    )


def event_record(tick, ev):
    return (
        tick, ev.time, "event", ev.mobile, ev.kind, ev.mode, f"{ev.source or '-'}>{ev.target or '-'}",
        None, None, None, None, None, None, None, None, None, ev.dropped_bytes, ev.buffered_bytes, None, None, None, None,
    )


@dataclass
class MetricsReport:
    records: List[tuple]
    events: list
    summary: dict
    delay_samples: Dict[str, List[float]] = field(default_factory=dict)
    path_budgets: list = field(default_factory=list)


def fold_records(records: Sequence[tuple]) -> dict:
    """Counters recomputed from the per-tick records alone."""
    flows: Dict[str, dict] = {}
    handovers: Dict[str, int] = {}
    for r in records:
        kind = r[2]
        if kind == "flow":
            f = flows.get(r[3])
            if f is None:
                f = flows[r[3]] = dict(
                    offered_bytes=0, delivered_bytes=0, dropped_bytes=0, buffered_bytes=0, ticks=0, outage_ticks=0, delay_max_s=0.0
                )
            f["offered_bytes"] += r[14]
            f["delivered_bytes"] += r[15]
            f["dropped_bytes"] += r[16]
            f["buffered_bytes"] = r[17]
            f["ticks"] += 1
            if r[5] in OUTAGE_STATES:
                f["outage_ticks"] += 1
            if r[18] is not None and r[18] > f["delay_max_s"]:
                f["delay_max_s"] = r[18]
        elif kind == "event":
            handovers[r[4]] = handovers.get(r[4], 0) + 1
    return {"flows": flows, "handovers": handovers}


def _r6(x):
    if x is None:
        return None
    if isinstance(x, float):
        if math.isinf(x) or math.isnan(x):
            return str(x)
        return float(f"{x:.6f}")
    return x


def delay_stats(samples: Sequence[float]) -> dict:
    if not samples:
        return {"count": 0}
    a = np.asarray(samples, dtype=float) * 1e3
    mean = float(a.mean())
    return {
        "count": int(a.size),
        "mean_ms": mean,
        "p50_ms": float(np.percentile(a, 50)),
        "p95_ms": float(np.percentile(a, 95)),
        "p99_ms": float(np.percentile(a, 99)),
        "max_ms": float(a.max()),
        "jitter_ms": float(a.std()),
        "rtt_ms": 2.0 * mean,
    }


def rounded(obj):
    """Fixed 6-decimal rounding throughout a JSON-able structure."""
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return _r6(obj)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


def write_records(records: Sequence[tuple], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([_fmt(v) for v in r])


def records_text(records: Sequence[tuple]) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


def summary_text(summary: dict) -> str:
    return json.dumps(rounded(summary), indent=2, sort_keys=True) + "\n"
