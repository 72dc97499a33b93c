"""Per-flow loss, latency and overhead accounting.

Every application frame is tracked by id. Copies are counted as they are
spawned (replication, flooding) and retired (delivery, elimination, MAC drop,
...); a frame whose last copy retires undelivered is lost.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .engine import InvariantViolation


@dataclass
class FrameRecord:
    flow: str
    created_at: int
    live: int = 1
    delivered_at: Optional[int] = None
    dropped: bool = False


@dataclass
class FlowStats:
    flow_id: str
    src: str = ""
    dst: str = ""
    rc: str = "BE"
    deadline: Optional[int] = None
    offered: int = 0
    delivered: int = 0
    dropped: int = 0
    deadline_misses: int = 0
    duplicates_discarded: int = 0
    ytag_relays: int = 0
    misdirected: int = 0
    latencies: dict[int, int] = field(default_factory=dict)

    @property
    def lost(self) -> int:
        return self.offered - self.delivered

    @property
    def in_flight(self) -> int:
        return self.offered - self.delivered - self.dropped

    def latency_array(self) -> np.ndarray:
        return np.fromiter(self.latencies.values(), dtype=np.int64, count=len(self.latencies))


def percentile(values: np.ndarray, q: float) -> Optional[int]:
    """Nearest-rank percentile; always one of the recorded values."""
    if len(values) == 0:
        return None
    return int(np.percentile(values, q, method="inverted_cdf"))


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n else float("nan")


class Metrics:
    def __init__(self) -> None:
        self.flows: dict[str, FlowStats] = {}
        self.frames: dict[int, FrameRecord] = {}
        self.transparency_violations = 0

    def add_flow(self, flow_id: str, **kw) -> FlowStats:
        stats = self.flows[flow_id] = FlowStats(flow_id, **kw)
        return stats

    def offer(self, frame_id: int, flow: str, created_at: int) -> None:
        self.frames[frame_id] = FrameRecord(flow, created_at)
        self.flows[flow].offered += 1

    def spawn(self, frame_id: Optional[int], extra: int) -> None:
        if frame_id is None or extra == 0:
            return
        self.frames[frame_id].live += extra

    def retire(self, frame_id: Optional[int]) -> bool:
        """Retire one copy; True when that loses the frame for good."""
        if frame_id is None:
            return False
        rec = self.frames[frame_id]
        rec.live -= 1
        if rec.live < 0:
            raise InvariantViolation(f"frame {frame_id}: more copies retired than spawned")
        if rec.live == 0 and rec.delivered_at is None:
            rec.dropped = True
            self.flows[rec.flow].dropped += 1
            return True
        return False

    def record_delivery(self, flow: str, frame_id: int, created_at: int, delivered_at: int) -> int:
        stats = self.flows[flow]
        if frame_id in stats.latencies:
            raise InvariantViolation(f"frame {frame_id} of flow {flow} delivered twice")
        latency = delivered_at - created_at
        stats.latencies[frame_id] = latency
        stats.delivered += 1
        if stats.deadline is not None and latency > stats.deadline:
            stats.deadline_misses += 1
        rec = self.frames.get(frame_id)
        if rec is not None:
            rec.delivered_at = delivered_at
        return latency

    def count_discard(self, flow: Optional[str]) -> None:
        if flow is not None:
            self.flows[flow].duplicates_discarded += 1

    def count_relay(self, flow: Optional[str]) -> None:
        if flow is not None:
            self.flows[flow].ytag_relays += 1

    def count_misdirected(self, flow: Optional[str]) -> None:
        if flow is not None:
            self.flows[flow].misdirected += 1

    def flow_summary(self, stats: FlowStats) -> dict:
        lat = stats.latency_array()
        offered = stats.offered
        return {
            "src": stats.src,
            "dst": stats.dst,
            "rc": stats.rc,
            "offered": offered,
            "delivered": stats.delivered,
            "lost": stats.lost,
            "dropped": stats.dropped,
            "in_flight": stats.in_flight,
            "loss_ratio": stats.lost / offered if offered else 0.0,
            "loss_stderr": binomial_stderr(stats.lost / offered, offered) if offered else 0.0,
            "latency_p50_ns": percentile(lat, 50),
            "latency_p95_ns": percentile(lat, 95),
            "latency_p99_ns": percentile(lat, 99),
            "latency_max_ns": int(lat.max()) if len(lat) else None,
            "latency_mean_ns": float(lat.mean()) if len(lat) else None,
            "deadline_ns": stats.deadline,
            "deadline_misses": stats.deadline_misses,
            "deadline_miss_ratio": stats.deadline_misses / stats.delivered if stats.delivered else 0.0,
            "duplicates_discarded": stats.duplicates_discarded,
            "duplicate_ratio": stats.duplicates_discarded / offered if offered else 0.0,
            "ytag_relays": stats.ytag_relays,
            "relay_overhead": stats.ytag_relays / offered if offered else 0.0,
            "misdirected": stats.misdirected,
        }

    def summarize(self, *, scenario: str, seed: int, run: dict, links: dict, nodes: dict) -> dict:
        flows = {fid: self.flow_summary(st) for fid, st in sorted(self.flows.items())}
        totals = {k: sum(f[k] for f in flows.values())
                  for k in ("offered", "delivered", "lost", "dropped", "in_flight")}
        return {
            "scenario": scenario,
            "seed": seed,
            "run": run,
            "totals": totals,
            "transparency_violations": self.transparency_violations,
            "flows": flows,
            "links": links,
            "nodes": nodes,
        }

    def frame_rows(self) -> Iterable[tuple]:
        for fid in sorted(self.frames):
            rec = self.frames[fid]
            lat = None if rec.delivered_at is None else rec.delivered_at - rec.created_at
            yield (fid, rec.flow, rec.created_at, rec.delivered_at, lat, int(rec.dropped))


CSV_COLUMNS = [
    "flow", "src", "dst", "rc", "offered", "delivered", "lost", "loss_ratio", "loss_stderr",
    "latency_p50_ns", "latency_p95_ns", "latency_p99_ns", "latency_max_ns",
    "deadline_miss_ratio", "duplicate_ratio", "ytag_relays", "relay_overhead", "misdirected",
]


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def flow_csv_rows(report: dict, extra: Optional[dict] = None) -> list[dict]:
    rows = []
    for fid, f in report["flows"].items():
        row = dict(extra or {})
        row["flow"] = fid
        for col in CSV_COLUMNS[1:]:
            row[col] = f[col]
        rows.append(row)
    return rows


def write_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in columns})
    return buf.getvalue()


def report_csv(report: dict) -> str:
    return write_csv(flow_csv_rows(report), CSV_COLUMNS)


def frames_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_id", "flow", "created_ns", "delivered_ns", "latency_ns", "dropped"])
    for row in metrics.frame_rows():
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()
