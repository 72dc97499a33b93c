"""Shared simulation context handed to every node."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .channel import WirelessLink, WirelessParams
from .dedup import DEFAULT_STALE_TIMEOUT, DEFAULT_WINDOW
from .engine import MS, S, Engine, InvariantViolation, RngFactory, Trace, TraceRecord
from .frames import Frame, MacAddress
from .metrics import Metrics


@dataclass(frozen=True)
class Options:
    cross_link_abort: bool = False
    dedup_window: int = DEFAULT_WINDOW
    dedup_timeout: int = DEFAULT_STALE_TIMEOUT
    reassoc_delay: int = 50 * MS
    mac_aging: int = 300 * S
    drain_timeout: int = 100 * MS


class Network:
    def __init__(self, seed: int, options: Options = Options(), trace: bool = False):
        self.engine = Engine()
        self.rngs = RngFactory(seed)
        self.trace = Trace(trace)
        self.tracing = trace
        self.metrics = Metrics()
        self.options = options
        self.nodes: dict[str, object] = {}
        self.radios: dict[str, WirelessLink] = {}
        self.flow_src: dict[str, str] = {}
        self._next_frame_id = 0

    @property
    def now(self) -> int:
        return self.engine.now

    def add_node(self, node) -> None:
        if node.name in self.nodes:
            raise ValueError(f"duplicate node id {node.name}")
        self.nodes[node.name] = node

    def radio(self, name: str, params: WirelessParams) -> WirelessLink:
        link = WirelessLink(name, params, self.rngs.stream(f"air:{name}"), self.engine)
        self.radios[name] = link
        return link

    def new_frame(self, flow: str) -> int:
        fid = self._next_frame_id
        self._next_frame_id += 1
        self.metrics.offer(fid, flow, self.engine.now)
        return fid

    def log(self, node: str, kind: str, frame: Optional[Frame], port: str = "",
            verdict: str = "", info: str = "") -> None:
        if not self.tracing:
            return
        self.trace.add(TraceRecord(
            self.engine.now, node, kind,
            None if frame is None else frame.frame_id,
            None if frame is None or frame.frame_id is None else frame.mld_seq,
            port, verdict, info))

    def spawn(self, frame: Frame, extra: int) -> None:
        self.metrics.spawn(frame.frame_id, extra)

    def retire(self, node: str, frame: Frame, port: str, verdict: str, info: str = "") -> None:
        """A copy ends here without reaching an application."""
        self.log(node, "drop", frame, port, verdict, info)
        if self.metrics.retire(frame.frame_id):
            self.log(node, "lost", frame, port, "lost")

    def deliver(self, node: str, frame: Frame, port: str) -> None:
        if frame.y_tag is not None:
            raise InvariantViolation(f"{node}: frame {frame.frame_id} delivered with a Y-TAG")
        info = f"sa={frame.sa},da={frame.da}"
        src = self.nodes.get(self.flow_src.get(frame.flow, ""))
        expected = getattr(src, "identity_mac", None)
        if expected is not None and frame.sa != expected:
            self.metrics.transparency_violations += 1
            info += ",transparency=violated"
        self.log(node, "deliver", frame, port, "delivered", info)
        self.metrics.record_delivery(frame.flow, frame.frame_id, frame.created_at, self.engine.now)
        self.metrics.retire(frame.frame_id)
