"""Wireless ARQ link and wired Ethernet link models."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .engine import US, Engine, EventKind, RngStream
from .frames import Frame


@dataclass(frozen=True)
class WirelessParams:
    per_attempt_loss: float = 0.15
    retry_limit: int = 7
    attempt_airtime: int = 300 * US
    ack_timeout: int = 100 * US

    def __post_init__(self) -> None:
        if not 0.0 <= self.per_attempt_loss <= 1.0:
            raise ValueError(f"per_attempt_loss must be in [0, 1], got {self.per_attempt_loss}")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.attempt_airtime <= 0 or self.ack_timeout < 0:
            raise ValueError("airtime must be positive and ack timeout nonnegative")

    @property
    def slot(self) -> int:
        return self.attempt_airtime + self.ack_timeout

    @property
    def max_attempts(self) -> int:
        return self.retry_limit + 1


@dataclass(frozen=True)
class Outcome:
    delivered: bool
    at: int
    attempts: int
    airtime: int


def draw_outcome(params: WirelessParams, rng: RngStream, now: int) -> Outcome:
    """Run the ARQ attempts of one frame starting at ``now``.

    Attempt ``k`` (1-based) that succeeds is received at
    ``now + (k - 1) * slot + airtime``. A frame whose ``retry_limit + 1``
    attempts all fail is given up when the last ACK timeout expires.
    """
    p = params.per_attempt_loss
    for k in range(1, params.max_attempts + 1):
        if rng.random() >= p:
            return Outcome(True, now + (k - 1) * params.slot + params.attempt_airtime, k,
                           k * params.attempt_airtime)
    n = params.max_attempts
    return Outcome(False, now + n * params.slot, n, n * params.attempt_airtime)


@dataclass
class TxJob:
    frame: Frame
    on_success: Callable[[Frame], None]
    on_fail: Callable[[Frame, str], None]
    start: int = 0
    outcome: Optional[Outcome] = None
    event: object = None


class WirelessLink:
    """Transmitter side of one affiliated radio; frames are sent FIFO."""

    def __init__(self, name: str, params: WirelessParams, rng: RngStream, engine: Engine):
        self.name = name
        self.params = params
        self.rng = rng
        self.engine = engine
        self.queue: deque[TxJob] = deque()
        self.current: Optional[TxJob] = None
        self.frames = 0
        self.attempts = 0
        self.mac_drops = 0
        self.delivered = 0
        self.aborted = 0
        self.airtime = 0

    @property
    def busy(self) -> bool:
        return self.current is not None

    def transmit(self, frame: Frame, on_success: Callable[[Frame], None],
                 on_fail: Callable[[Frame, str], None]) -> None:
        self.queue.append(TxJob(frame, on_success, on_fail))
        if self.current is None:
            self._start_next()

    def _start_next(self) -> None:
        if not self.queue:
            self.current = None
            return
        job = self.queue.popleft()
        now = self.engine.now
        job.start = now
        job.outcome = draw_outcome(self.params, self.rng, now)
        job.event = self.engine.schedule(job.outcome.at, self._complete, job,
                                         kind=EventKind.FRAME_ARRIVAL if job.outcome.delivered
                                         else EventKind.ACK_TIMEOUT, target=self.name)
        self.current = job
        self.frames += 1

    def _complete(self, job: TxJob) -> None:
        out = job.outcome
        self.attempts += out.attempts
        self.airtime += out.airtime
        self.current = None
        if out.delivered:
            self.delivered += 1
            job.on_success(job.frame)
        else:
            self.mac_drops += 1
            job.on_fail(job.frame, "mac_drop")
        if self.current is None:
            self._start_next()

    def _charge_partial(self, job: TxJob) -> None:
        out = job.outcome
        elapsed = self.engine.now - job.start
        full, rem = divmod(elapsed, self.params.slot)
        if full >= out.attempts:
            self.attempts += out.attempts
            self.airtime += out.airtime
            return
        self.attempts += full + (1 if rem else 0)
        self.airtime += full * self.params.attempt_airtime + min(rem, self.params.attempt_airtime)

    def abort(self, frame_id: int) -> bool:
        """Cancel pending work for ``frame_id``; True if anything was cancelled."""
        hit = False
        job = self.current
        if job is not None and job.frame.frame_id == frame_id:
            self.engine.cancel(job.event)
            self._charge_partial(job)
            self.current = None
            self.aborted += 1
            hit = True
            job.on_fail(job.frame, "aborted")
        for queued in [j for j in self.queue if j.frame.frame_id == frame_id]:
            self.queue.remove(queued)
            self.aborted += 1
            hit = True
            queued.on_fail(queued.frame, "aborted")
        if hit and self.current is None:
            self._start_next()
        return hit

    def drop_queued(self, predicate: Callable[[Frame], bool], reason: str) -> int:
        """Drop queued (not yet started) frames matching ``predicate``."""
        doomed = [j for j in self.queue if predicate(j.frame)]
        for job in doomed:
            self.queue.remove(job)
            job.on_fail(job.frame, reason)
        return len(doomed)

    def flush(self, reason: str = "flushed") -> int:
        """Drop everything queued or in progress, e.g. when the link leaves its AP."""
        jobs = []
        if self.current is not None:
            self.engine.cancel(self.current.event)
            self._charge_partial(self.current)
            jobs.append(self.current)
            self.current = None
        jobs.extend(self.queue)
        self.queue.clear()
        for job in jobs:
            job.on_fail(job.frame, reason)
        return len(jobs)

    def counters(self) -> dict[str, int]:
        return {"frames": self.frames, "attempts": self.attempts, "delivered": self.delivered,
                "mac_drops": self.mac_drops, "aborted": self.aborted, "airtime_ns": self.airtime}


class WiredEndpoint(Protocol):
    name: str

    def on_wired_receive(self, frame: Frame, port: "WiredPort") -> None: ...


class WiredPort:
    """One end of a wired link, owned by a node or a switch."""

    def __init__(self, owner: WiredEndpoint, name: str):
        self.owner = owner
        self.name = name
        self.link: Optional[WiredLink] = None

    def send(self, frame: Frame) -> None:
        if self.link is None:
            raise RuntimeError(f"port {self.name} is not connected")
        self.link.carry(self, frame)

    def __repr__(self) -> str:
        return f"WiredPort({self.name})"


class WiredLink:
    """Full-duplex point-to-point Ethernet link: fixed latency, no loss."""

    def __init__(self, a: WiredPort, b: WiredPort, latency: int, engine: Engine):
        if latency < 0:
            raise ValueError("wired latency must be nonnegative")
        self.a, self.b = a, b
        self.latency = latency
        self.engine = engine
        self.frames = 0
        a.link = self
        b.link = self

    def peer(self, port: WiredPort) -> WiredPort:
        return self.b if port is self.a else self.a

    def carry(self, src: WiredPort, frame: Frame) -> None:
        dst = self.peer(src)
        self.frames += 1
        self.engine.after(self.latency, dst.owner.on_wired_receive, frame, dst,
                          kind=EventKind.FRAME_ARRIVAL, target=dst.owner.name)
