"""Deterministic discrete-event core.

Time is an integer count of nanoseconds. Events fire in ``(fire_at, seqno)``
order, where ``seqno`` is an insertion counter, so simultaneous events run
FIFO. Every stochastic entity draws from its own named random stream.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


class ConfigurationError(ValueError):
    pass


class SimulationError(RuntimeError):
    """A handler failed; ``record`` describes the event that was being processed."""

    def __init__(self, message: str, record: Optional["TraceRecord"] = None):
        super().__init__(message)
        self.record = record


class InvariantViolation(RuntimeError):
    pass


class EventKind(Enum):
    FRAME_ARRIVAL = "frame-arrival"
    ACK_TIMEOUT = "ack-timeout"
    REASSOCIATION = "reassociation-trigger"
    APP_SEND = "app-send"
    DEDUP_EXPIRY = "dedup-expiry"
    MEASUREMENT = "measurement-tick"


class Event:
    __slots__ = ("fire_at", "seqno", "kind", "target", "callback", "args", "cancelled")

    def __init__(self, fire_at: int, seqno: int, kind: EventKind, target: str,
                 callback: Callable[..., Any], args: tuple):
        self.fire_at = fire_at
        self.seqno = seqno
        self.kind = kind
        self.target = target
        self.callback = callback
        self.args = args
        self.cancelled = False

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seqno) < (other.fire_at, other.seqno)

    def __repr__(self) -> str:
        return f"Event(t={self.fire_at}, #{self.seqno}, {self.kind.value}, {self.target})"


@dataclass
class RunSummary:
    events_processed: int
    final_time: int
    events_cancelled: int = 0
    pending: int = 0


class RngStream:
    """Named pseudo-random stream.

    The generator is seeded from ``(seed, sha256(stream_id))`` so the values a
    stream produces depend only on its own name and draw count. Uniforms are
    drawn in fixed-size blocks; the ``i``-th value is identical regardless of
    how the caller interleaves its draws.
    """

    BLOCK = 4096

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = stream_id
        digest = hashlib.sha256(stream_id.encode()).digest()
        key = tuple(int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4))
        seq = np.random.SeedSequence(entropy=self.seed & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(seq))
        self._buf: list[float] = []
        self._pos = 0
        self.draws = 0

    def random(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self.BLOCK).tolist()
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        self.draws += 1
        return value


class RngFactory:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, RngStream] = {}

    def stream(self, stream_id: str) -> RngStream:
        s = self._streams.get(stream_id)
        if s is None:
            s = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return s


@dataclass(frozen=True)
class TraceRecord:
    time: int
    node: str
    kind: str
    frame_id: Optional[int]
    mld_seq: Optional[int]
    port: str
    verdict: str
    info: str = ""

    def format(self) -> str:
        fid = "-" if self.frame_id is None else str(self.frame_id)
        seq = "-" if self.mld_seq is None else str(self.mld_seq)
        return "\t".join((str(self.time), self.node, self.kind, fid, seq, self.port or "-",
                          self.verdict, self.info or "-"))

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        t, node, kind, fid, seq, port, verdict, info = line.rstrip("\n").split("\t")
        return cls(int(t), node, kind, None if fid == "-" else int(fid),
                   None if seq == "-" else int(seq), "" if port == "-" else port, verdict,
                   "" if info == "-" else info)

    def info_dict(self) -> dict[str, str]:
        out = {}
        for part in self.info.split(","):
            if "=" in part:
                k, v = part.split("=", 1)
                out[k] = v
        return out


TRACE_HEADER = "#time_ns\tnode\tkind\tframe\tseq\tport\tverdict\tinfo"


class Trace:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[TraceRecord] = []

    def add(self, record: TraceRecord) -> None:
        if self.enabled:
            self.records.append(record)

    def lines(self) -> list[str]:
        return [TRACE_HEADER] + [r.format() for r in self.records]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def tail(self, n: int = 20) -> list[str]:
        return [r.format() for r in self.records[-n:]]


class Engine:
    def __init__(self) -> None:
        self._queue: list[Event] = []
        self._seqno = 0
        self.now = 0
        self.processed = 0
        self.cancelled = 0
        self.current: Optional[Event] = None

    def schedule(self, fire_at: int, callback: Callable[..., Any], *args: Any,
                 kind: EventKind = EventKind.FRAME_ARRIVAL, target: str = "") -> Event:
        if not isinstance(fire_at, (int, np.integer)):
            raise ConfigurationError(f"event time must be an integer, got {fire_at!r}")
        if fire_at < self.now:
            raise ConfigurationError(f"cannot schedule at t={fire_at} before now={self.now}")
        ev = Event(int(fire_at), self._seqno, kind, target, callback, args)
        self._seqno += 1
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay: int, callback: Callable[..., Any], *args: Any,
              kind: EventKind = EventKind.FRAME_ARRIVAL, target: str = "") -> Event:
        return self.schedule(self.now + delay, callback, *args, kind=kind, target=target)

    def cancel(self, handle: Event) -> bool:
        if handle.cancelled:
            return False
        handle.cancelled = True
        self.cancelled += 1
        return True

    def pending(self) -> list[Event]:
        return sorted(e for e in self._queue if not e.cancelled)

    def run(self, until: int) -> RunSummary:
        queue = self._queue
        while queue and queue[0].fire_at <= until:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            self.current = ev
            try:
                ev.callback(*ev.args)
            except (InvariantViolation, SimulationError):
                raise
            except Exception as exc:
                record = TraceRecord(ev.fire_at, ev.target or "-", ev.kind.value, None, None, "",
                                     "error", f"{type(exc).__name__}: {exc}")
                raise SimulationError(f"handler for {ev!r} failed: {exc}", record) from exc
            self.processed += 1
        self.current = None
        return RunSummary(self.processed, self.now, self.cancelled,
                          sum(1 for e in queue if not e.cancelled))
