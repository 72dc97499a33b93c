"""HR STA: a non-AP MLD that replicates Reliable frames over its affiliated links."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .channel import WirelessLink, WirelessParams
from .dedup import Direction, Eliminator, SeqCounter, StreamKey, Verdict
from .engine import EventKind
from .frames import (
    AccessCategory,
    AffiliatedInfo,
    Frame,
    MacAddress,
    MultiLinkElement,
    ReliabilityCategory,
)

if TYPE_CHECKING:
    from .hr_ap import HrAp
    from .network import Network


class LinkState(Enum):
    ASSOCIATED = "associated"
    REASSOCIATING = "reassociating"
    IDLE = "idle"


@dataclass
class AffiliatedLink:
    link_id: str
    mac: MacAddress
    radio: WirelessLink
    channel: int = 0
    state: LinkState = LinkState.IDLE
    ap: Optional[str] = None
    ap_link: Optional[str] = None
    target: Optional[str] = None

    @property
    def associated(self) -> bool:
        return self.state is LinkState.ASSOCIATED


def classify_transition(before: frozenset, after: frozenset) -> str:
    """Name a roaming step by the serving-AP sets around it."""
    if before == after:
        return "none"
    if len(before) == 1 and len(after) > 1:
        return "type1"
    if len(before) > 1 and len(after) == 1:
        return "type2"
    if len(before) > 1 and len(after) > 1:
        return "type3"
    return "single"


class HrSta:
    """HR STA with ``k`` affiliated links; ``legacy=True`` models a plain one-link STA."""

    def __init__(self, net: "Network", name: str, links: list[tuple[str, MacAddress]],
                 primary: str, params: dict[str, WirelessParams], legacy: bool = False):
        if not legacy and len(links) < 2:
            raise ValueError(f"{name}: an HR STA needs at least two affiliated links")
        self.net = net
        self.name = name
        self.legacy = legacy
        self.links: list[AffiliatedLink] = [
            AffiliatedLink(lid, mac, net.radio(lid, params[lid])) for lid, mac in links
        ]
        self.by_id = {l.link_id: l for l in self.links}
        if primary not in self.by_id:
            raise ValueError(f"{name}: primary link {primary!r} is not affiliated")
        self.primary = primary
        self.seq = SeqCounter()
        self.rx = Eliminator(net.options.dedup_window, net.options.dedup_timeout)
        self.pending_app_frames: deque[Frame] = deque()
        self.pending_reassoc: deque[tuple[str, str]] = deque()
        self.reassoc_log: list[tuple[str, int, Optional[int]]] = []
        self._copies: dict[int, list[AffiliatedLink]] = {}
        self.discarded = 0
        self.delivered = 0
        net.add_node(self)

    # -- identity ---------------------------------------------------------

    @property
    def identity_mac(self) -> MacAddress:
        """Address the rest of the network knows this MLD by."""
        return self.by_id[self.primary].mac

    def mle(self) -> MultiLinkElement:
        idx = [l.link_id for l in self.links].index(self.primary)
        return MultiLinkElement(
            self.name, tuple(AffiliatedInfo(l.link_id, l.channel, l.mac) for l in self.links), idx)

    def associated_links(self) -> list[AffiliatedLink]:
        return [l for l in self.links if l.associated]

    def effective_primary(self) -> Optional[AffiliatedLink]:
        """The primary link, or the lowest-index associated link while it is away."""
        p = self.by_id[self.primary]
        if p.associated:
            return p
        assoc = self.associated_links()
        return assoc[0] if assoc else None

    def serving_aps(self) -> frozenset:
        return frozenset(l.ap for l in self.links if l.associated)

    def snapshot(self) -> str:
        parts = []
        for l in self.links:
            if l.state is LinkState.ASSOCIATED:
                parts.append(f"{l.link_id}={l.ap}/{l.ap_link}")
            elif l.state is LinkState.REASSOCIATING:
                parts.append(f"{l.link_id}=>{l.target}")
            else:
                parts.append(f"{l.link_id}=-")
        return ",".join(parts)

    def _log_snapshot(self) -> None:
        self.net.log(self.name, "assoc", None, "", "snapshot", self.snapshot())

    def bind(self, link_id: str, ap: str, ap_link: str, channel: int) -> None:
        """Initial association, done while building the scenario."""
        link = self.by_id[link_id]
        link.state = LinkState.ASSOCIATED
        link.ap, link.ap_link, link.channel = ap, ap_link, channel

    # -- transmit ---------------------------------------------------------

    def tx_links(self, rc: ReliabilityCategory) -> list[AffiliatedLink]:
        if not rc.is_reliable:
            p = self.effective_primary()
            return [p] if p else []
        primary = self.by_id[self.primary]
        ordered = [primary] if primary.associated else []
        ordered += [l for l in self.links if l.associated and l is not primary]
        return ordered[: rc.copies]

    def app_send(self, flow: str, da: MacAddress, rc: ReliabilityCategory,
                 payload: bytes = b"", ac: AccessCategory = AccessCategory.BE) -> int:
        fid = self.net.new_frame(flow)
        frame = Frame(da=da, sa=self.identity_mac, payload=payload, rc=rc, ac=ac,
                      mld_seq=self.seq.next_seq(self.name), origin=self.name,
                      created_at=self.net.now, frame_id=fid, flow=flow)
        self.net.log(self.name, "app_send", frame, "", "offered", f"rc={rc},da={da}")
        self._dispatch(frame)
        return fid

    def _dispatch(self, frame: Frame) -> None:
        links = self.tx_links(frame.rc)
        if not links:
            self.pending_app_frames.append(frame)
            self.net.log(self.name, "queue", frame, "", "queued")
            return
        self.net.spawn(frame, len(links) - 1)
        if len(links) > 1 and self.net.options.cross_link_abort:
            self._copies[frame.frame_id] = links
        for link in links:
            copy = replace(frame, sa=link.mac)
            self.net.log(self.name, "tx", copy, link.link_id, "sent", f"ap={link.ap}/{link.ap_link}")
            ap, ap_link = link.ap, link.ap_link
            link.radio.transmit(
                copy,
                lambda f, link=link, ap=ap, ap_link=ap_link: self._tx_done(link, f, ap, ap_link),
                lambda f, why, link=link: self._tx_failed(link, f, why))

    def _tx_done(self, link: AffiliatedLink, frame: Frame, ap: str, ap_link: str) -> None:
        siblings = self._copies.pop(frame.frame_id, None)
        if siblings:
            for other in siblings:
                if other is not link:
                    other.radio.abort(frame.frame_id)
        self.net.nodes[ap].on_air_receive_ap(ap_link, frame)

    def _tx_failed(self, link: AffiliatedLink, frame: Frame, why: str) -> None:
        siblings = self._copies.get(frame.frame_id)
        if siblings is not None and why != "aborted":
            siblings.remove(link)
            if not siblings:
                del self._copies[frame.frame_id]
        self.net.retire(self.name, frame, link.link_id, why)

    def _flush_pending(self) -> None:
        while self.pending_app_frames and self.associated_links():
            self._dispatch(self.pending_app_frames.popleft())

    # -- receive ----------------------------------------------------------

    def on_air_receive(self, link_id: str, frame: Frame, from_ap_link: Optional[str] = None) -> None:
        link = self.by_id[link_id]
        if frame.da != link.mac:
            self.net.retire(self.name, frame, link_id, "ignored", "da-mismatch")
            return
        if not link.associated or (from_ap_link is not None and link.ap_link != from_ap_link):
            self.net.retire(self.name, frame, link_id, "unassociated")
            return
        self.net.log(self.name, "air_rx", frame, link_id, "received", f"origin={frame.origin}")
        if frame.rc.is_reliable:
            verdict = self.rx.accept(StreamKey(frame.origin, Direction.DOWNLINK), frame.mld_seq,
                                     self.net.now)
            if verdict is Verdict.DISCARD:
                self.discarded += 1
                self.net.metrics.count_discard(frame.flow)
                self.net.retire(self.name, frame, link_id, "discard")
                return
            self.net.log(self.name, "elim", frame, link_id, "pass", f"origin={frame.origin}")
        self.delivered += 1
        self.net.deliver(self.name, frame, link_id)

    # -- roaming ----------------------------------------------------------

    def reassociating(self) -> Optional[AffiliatedLink]:
        for l in self.links:
            if l.state is LinkState.REASSOCIATING:
                return l
        return None

    def start_reassociation(self, link_id: str, target_ap: str) -> bool:
        """Move one link to ``target_ap``; only one link may be in transit at a time."""
        link = self.by_id[link_id]
        busy = self.reassociating()
        if busy is not None:
            self.pending_reassoc.append((link_id, target_ap))
            self.net.log(self.name, "reassoc", None, link_id, "deferred",
                         f"target={target_ap},busy={busy.link_id}")
            return False
        if link.associated and link.ap == target_ap:
            self.net.log(self.name, "reassoc", None, link_id, "noop", f"target={target_ap}")
            return False
        target: "HrAp" = self.net.nodes[target_ap]
        ap_link = target.free_link_for(self, link_id)
        if ap_link is None:
            self.net.log(self.name, "reassoc", None, link_id, "failed",
                         f"target={target_ap},reason=no-free-link")
            return False
        before = self.serving_aps()
        prior = (link.ap, link.ap_link, link.channel) if link.associated else None
        link.radio.flush("reassoc_flush")
        self._copies = {fid: ls for fid, ls in self._copies.items() if link not in ls}
        if prior is not None:
            self.net.nodes[prior[0]].disassociate(self.name, link_id)
        link.state = LinkState.REASSOCIATING
        link.target = target_ap
        link.ap = link.ap_link = None
        self.reassoc_log.append((link_id, self.net.now, None))
        self.net.log(self.name, "reassoc", None, link_id, "start", f"target={target_ap}/{ap_link}")
        self._log_snapshot()
        self.net.engine.after(self.net.options.reassoc_delay, self._finish_reassociation,
                              link, target_ap, ap_link, prior, before,
                              kind=EventKind.REASSOCIATION, target=self.name)
        return True

    def _finish_reassociation(self, link: AffiliatedLink, target_ap: str, ap_link: str,
                              prior: Optional[tuple], before: frozenset) -> None:
        target: "HrAp" = self.net.nodes[target_ap]
        ok = target.associate(self, link.link_id, ap_link)
        if ok:
            link.ap, link.ap_link, link.channel = target_ap, ap_link, target.links[ap_link].channel
            link.state = LinkState.ASSOCIATED
            verdict = "done"
        elif prior is not None and self.net.nodes[prior[0]].associate(self, link.link_id, prior[1]):
            link.ap, link.ap_link, link.channel = prior
            link.state = LinkState.ASSOCIATED
            verdict = "reverted"
        else:
            link.state = LinkState.IDLE
            verdict = "failed"
        link.target = None
        i = max(i for i, rec in enumerate(self.reassoc_log) if rec[0] == link.link_id)
        self.reassoc_log[i] = (link.link_id, self.reassoc_log[i][1], self.net.now)
        kind = "legacy" if self.legacy else classify_transition(before, self.serving_aps())
        aps = "+".join(sorted(self.serving_aps()))
        self.net.log(self.name, "reassoc", None, link.link_id, verdict,
                     f"transition={kind},serving={aps}")
        self._log_snapshot()
        self._flush_pending()
        if self.pending_reassoc:
            lid, ap = self.pending_reassoc.popleft()
            self.start_reassociation(lid, ap)

    def counters(self) -> dict:
        return {"delivered": self.delivered, "discarded": self.discarded,
                "elimination": self.rx.counters(),
                "pending_app_frames": len(self.pending_app_frames)}
