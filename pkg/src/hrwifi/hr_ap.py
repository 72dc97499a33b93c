"""HR AP: AP-side MLD doing elimination, replication and Y-TAG relaying.

Every HR AP keeps an association table for every HR STA it has heard about.
It learns about links served by other APs through association notices
broadcast on the wired network. The primary AP (P-AP) of an HR STA is the AP
serving its primary link. Only the P-AP eliminates duplicates and replicates
downlink frames. Other serving APs tunnel uplink copies to it in Y-TAG frames.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .channel import WiredPort, WirelessLink, WirelessParams
from .dedup import DedupState, Direction, Eliminator, StreamKey, Verdict
from .frames import (
    BROADCAST,
    NOTIFY_ETHERTYPE,
    YTAG_FLAG_DOWNLINK,
    Frame,
    MacAddress,
    MultiLinkElement,
    attach_ytag,
    rewrite_egress,
    strip_ytag,
)

if TYPE_CHECKING:
    from .hr_sta import HrSta
    from .network import Network


class PapRole(Enum):
    PRIMARY = "primary"
    NON_PRIMARY = "non-primary"
    NOT_SERVING = "not-serving"


@dataclass(frozen=True)
class AssociationNotice:
    ap: str
    sta: str
    link_id: str
    binding: Optional[tuple[str, str]]
    mle: MultiLinkElement


@dataclass(frozen=True)
class L2Update:
    sta: str


@dataclass(frozen=True)
class EliminationHandover:
    """Uplink elimination window of an AP that stopped being P-AP for ``sta``."""
    ap: str
    sta: str
    state: DedupState


@dataclass
class ApLink:
    link_id: str
    mac: MacAddress
    channel: int
    radio: WirelessLink


@dataclass
class AssociationEntry:
    mle: MultiLinkElement
    links: dict[str, Optional[tuple[str, str]]] = field(default_factory=dict)

    @property
    def primary_mac(self) -> MacAddress:
        return self.mle.primary_mac

    def serving_aps(self) -> list[str]:
        return sorted({b[0] for b in self.links.values() if b is not None})

    def associated(self) -> list[str]:
        """Associated link ids in affiliation order."""
        return [a.link_id for a in self.mle.affiliated if self.links.get(a.link_id) is not None]


class HrAp:
    def __init__(self, net: "Network", name: str, wired_mac: MacAddress,
                 links: list[tuple[str, MacAddress, int]], params: dict[str, WirelessParams]):
        self.net = net
        self.name = name
        self.wired_mac = wired_mac
        self.links: dict[str, ApLink] = {
            lid: ApLink(lid, mac, ch, net.radio(lid, params[lid])) for lid, mac, ch in links
        }
        self.port = WiredPort(self, f"{name}.eth")
        self.table: dict[str, AssociationEntry] = {}
        self.by_primary: dict[MacAddress, str] = {}
        self.by_link_mac: dict[MacAddress, tuple[str, str]] = {}
        self.peer_macs: dict[str, MacAddress] = {name: wired_mac}
        self.primary_for: set[str] = set()
        self.seq = 0
        self.elim = Eliminator(net.options.dedup_window, net.options.dedup_timeout)
        # Suppresses a second relay when this AP serves several links of one STA.
        self.relay_filter = Eliminator(net.options.dedup_window, net.options.dedup_timeout)
        self._copies: dict[int, list[str]] = {}
        self.counters_ = {
            "passed": 0, "discarded": 0, "ytag_sent": 0, "ytag_received": 0,
            "ytag_downlink_relayed": 0, "misdirected": 0, "unassociated": 0, "not_pap": 0,
            "relay_suppressed": 0, "notices_sent": 0, "handovers_sent": 0, "l2_updates": 0,
            "pap_fallbacks": 0,
        }
        net.add_node(self)

    # -- association table --------------------------------------------------

    def learn(self, mle: MultiLinkElement) -> AssociationEntry:
        entry = self.table.get(mle.mld_id)
        if entry is None:
            entry = self.table[mle.mld_id] = AssociationEntry(mle, {a.link_id: None for a in mle.affiliated})
            self.by_primary[mle.primary_mac] = mle.mld_id
            for a in mle.affiliated:
                self.by_link_mac[a.mac] = (mle.mld_id, a.link_id)
        return entry

    def set_binding(self, sta: str, link_id: str, binding: Optional[tuple[str, str]]) -> None:
        self.table[sta].links[link_id] = binding

    def elect_pap(self, sta: str) -> tuple[Optional[str], bool]:
        """Return ``(ap, fallback)``; ``fallback`` when the primary link is away."""
        entry = self.table.get(sta)
        if entry is None:
            return None, False
        binding = entry.links.get(entry.mle.primary_link)
        if binding is not None:
            return binding[0], False
        serving = entry.serving_aps()
        return (serving[0] if serving else None), True

    def role(self, sta: str) -> PapRole:
        if self.elect_pap(sta)[0] == self.name:
            return PapRole.PRIMARY
        entry = self.table.get(sta)
        if entry is not None and self.name in entry.serving_aps():
            return PapRole.NON_PRIMARY
        return PapRole.NOT_SERVING

    def free_link_for(self, sta: "HrSta", link_id: str) -> Optional[str]:
        """An AP link that no other link of ``sta`` uses, on a channel none of them is on."""
        others = [l for l in sta.links if l.link_id != link_id and l.associated]
        taken_links = {l.ap_link for l in others if l.ap == self.name}
        taken_channels = {l.channel for l in others}
        for lid, ap_link in self.links.items():
            if lid not in taken_links and ap_link.channel not in taken_channels:
                return lid
        return None

    def associate(self, sta: "HrSta", link_id: str, ap_link: str) -> bool:
        entry = self.learn(sta.mle())
        for other, binding in entry.links.items():
            if other != link_id and binding == (self.name, ap_link):
                return False
        self.set_binding(sta.name, link_id, (self.name, ap_link))
        self.net.log(self.name, "assoc", None, ap_link, "join", f"sta={sta.name},link={link_id}")
        self._notify(entry, link_id)
        self._refresh_role(sta.name)
        return True

    def disassociate(self, sta: str, link_id: str) -> None:
        entry = self.table[sta]
        binding = entry.links.get(link_id)
        if binding is None or binding[0] != self.name:
            return
        gone = entry.mle.link(link_id).mac
        for ap_link in self.links.values():
            ap_link.radio.drop_queued(lambda f: f.da == gone, "reassoc_flush")
        self.set_binding(sta, link_id, None)
        self.net.log(self.name, "assoc", None, binding[1], "leave", f"sta={sta},link={link_id}")
        # Resign first so the handover reaches the next P-AP ahead of the notice.
        self._refresh_role(sta)
        self._notify(entry, link_id)

    def _notify(self, entry: AssociationEntry, link_id: str) -> None:
        notice = AssociationNotice(self.name, entry.mle.mld_id, link_id, entry.links[link_id], entry.mle)
        frame = Frame(da=BROADCAST, sa=self.wired_mac, ether_type=NOTIFY_ETHERTYPE, notice=notice)
        self.counters_["notices_sent"] += 1
        self.port.send(frame)

    def _refresh_role(self, sta: str) -> None:
        pap, fallback = self.elect_pap(sta)
        mine = pap == self.name
        if mine and sta not in self.primary_for:
            self.primary_for.add(sta)
            if fallback:
                self.counters_["pap_fallbacks"] += 1
            self.net.log(self.name, "pap", None, "", "elected",
                         f"sta={sta},fallback={int(fallback)}")
            self.announce(sta)
        elif not mine and sta in self.primary_for:
            self.primary_for.discard(sta)
            self.net.log(self.name, "pap", None, "", "resigned", f"sta={sta},pap={pap}")
            self.hand_over(sta)

    def hand_over(self, sta: str) -> None:
        state = self.elim.states.get(StreamKey(sta, Direction.UPLINK))
        if state is None or not state.valid:
            return
        frame = Frame(da=BROADCAST, sa=self.wired_mac, ether_type=NOTIFY_ETHERTYPE,
                      notice=EliminationHandover(self.name, sta, copy.copy(state)))
        self.counters_["handovers_sent"] += 1
        self.port.send(frame)

    def announce(self, sta: str) -> None:
        """L2 update sourced from the STA's primary MAC so switches learn this port."""
        frame = Frame(da=BROADCAST, sa=self.table[sta].primary_mac, ether_type=NOTIFY_ETHERTYPE,
                      notice=L2Update(sta))
        self.counters_["l2_updates"] += 1
        self.port.send(frame)

    def sync_roles(self) -> None:
        for sta in sorted(self.table):
            self._refresh_role(sta)

    def _on_notice(self, frame: Frame) -> None:
        notice = frame.notice
        if isinstance(notice, L2Update):
            return
        if isinstance(notice, EliminationHandover):
            if notice.ap != self.name and notice.sta in self.table:
                self.elim.state(StreamKey(notice.sta, Direction.UPLINK)).merge(notice.state)
                self.net.log(self.name, "notice", None, "eth", "merged",
                             f"from={notice.ap},sta={notice.sta},latest={notice.state.latest}")
            return
        self.peer_macs[notice.ap] = frame.sa
        if notice.ap == self.name:
            return
        entry = self.learn(notice.mle)
        current = entry.links.get(notice.link_id)
        if notice.binding is None:
            # Only the AP that held the link may release it.
            if current is not None and current[0] == notice.ap:
                entry.links[notice.link_id] = None
        elif notice.binding[0] != self.name:
            entry.links[notice.link_id] = notice.binding
        self.net.log(self.name, "notice", None, "eth", "learned",
                     f"from={notice.ap},sta={notice.sta},link={notice.link_id},"
                     f"ap={notice.binding[0] if notice.binding else '-'}")
        self._refresh_role(notice.sta)

    # -- uplink ---------------------------------------------------------------

    def on_air_receive_ap(self, ap_link: str, frame: Frame) -> None:
        ref = self.by_link_mac.get(frame.sa)
        entry = self.table.get(ref[0]) if ref else None
        if entry is None or entry.links.get(ref[1]) != (self.name, ap_link):
            self.counters_["unassociated"] += 1
            self.net.retire(self.name, frame, ap_link, "unassociated")
            return
        sta, link_id = ref
        self.net.log(self.name, "air_rx", frame, ap_link, "received", f"from={link_id}")
        pap, _ = self.elect_pap(sta)
        if pap == self.name:
            if self._eliminate(frame, sta, ap_link):
                self._forward_up(frame, entry)
            return
        if frame.rc.is_reliable and len([b for b in entry.links.values()
                                         if b is not None and b[0] == self.name]) > 1:
            key = StreamKey(sta, Direction.UPLINK)
            if self.relay_filter.accept(key, frame.mld_seq, self.net.now) is Verdict.DISCARD:
                self.counters_["relay_suppressed"] += 1
                self.net.retire(self.name, frame, ap_link, "relay_dup")
                return
        pap_mac = self.peer_macs.get(pap) if pap else None
        if pap_mac is None:
            self.net.retire(self.name, frame, ap_link, "no_pap")
            return
        tagged = attach_ytag(frame, da=pap_mac, sa=self.wired_mac, na=frame.da, seq=frame.mld_seq)
        self.counters_["ytag_sent"] += 1
        self.net.metrics.count_relay(frame.flow)
        self.net.log(self.name, "ytag_tx", tagged, "eth", "relayed",
                     f"to={pap},na={frame.da},rx_link={ap_link}")
        self.port.send(tagged)

    def _eliminate(self, frame: Frame, origin: str, port: str) -> bool:
        if not frame.rc.is_reliable:
            return True
        key = StreamKey(origin, Direction.UPLINK)
        verdict = self.elim.accept(key, frame.mld_seq, self.net.now)
        if verdict is Verdict.DISCARD:
            self.counters_["discarded"] += 1
            self.net.metrics.count_discard(frame.flow)
            self.net.retire(self.name, frame, port, "discard")
            return False
        self.counters_["passed"] += 1
        self.net.log(self.name, "elim", frame, port, "pass", f"origin={origin}")
        return True

    def _forward_up(self, frame: Frame, entry: AssociationEntry) -> None:
        frame = rewrite_egress(frame, entry.mle)
        target = self.by_primary.get(frame.da)
        if target is not None and self.elect_pap(target)[0] == self.name:
            self._downlink(frame, self.table[target])
            return
        self.net.log(self.name, "eth_tx", frame, "eth", "forwarded", f"sa={frame.sa},da={frame.da}")
        self.port.send(frame)

    # -- wired side -------------------------------------------------------------

    def on_wired_receive(self, frame: Frame, port: WiredPort) -> None:
        if frame.outer_ether_type == NOTIFY_ETHERTYPE:
            self._on_notice(frame)
            return
        if frame.y_tag is not None:
            if frame.da != self.wired_mac:
                self.net.retire(self.name, frame, "eth", "ignored", "not-addressed")
                return
            self._on_ytag(frame)
            return
        target = self.by_primary.get(frame.da)
        if target is None:
            self.net.retire(self.name, frame, "eth", "ignored", "unknown-da")
            return
        if self.elect_pap(target)[0] != self.name:
            self.counters_["not_pap"] += 1
            self.net.retire(self.name, frame, "eth", "not_pap", f"sta={target}")
            return
        self.net.log(self.name, "eth_rx", frame, "eth", "received", f"sta={target}")
        self._downlink(frame, self.table[target])

    def _on_ytag(self, frame: Frame) -> None:
        self.counters_["ytag_received"] += 1
        na = frame.y_tag.na
        if frame.y_tag.flags & YTAG_FLAG_DOWNLINK:
            ref = self.by_link_mac.get(na)
            binding = self.table[ref[0]].links.get(ref[1]) if ref else None
            if binding is None or binding[0] != self.name:
                self.net.retire(self.name, frame, "eth", "unassociated", f"na={na}")
                return
            inner, _ = strip_ytag(frame)
            self.counters_["ytag_downlink_relayed"] += 1
            self.net.log(self.name, "ytag_rx", frame, "eth", "relay_down", f"na={na}")
            self._send_air(binding[1], ref[0], ref[1], inner)
            return
        origin = frame.origin
        if self.elect_pap(origin)[0] != self.name:
            self.counters_["misdirected"] += 1
            self.net.metrics.count_misdirected(frame.flow)
            self.net.retire(self.name, frame, "eth", "misdirected", f"origin={origin}")
            return
        inner, tag = strip_ytag(frame)
        self.net.log(self.name, "ytag_rx", frame, "eth", "stripped", f"na={tag.na},seq={tag.seq}")
        if self._eliminate(inner, origin, "eth"):
            self._forward_up(inner, self.table[origin])

    # -- downlink ---------------------------------------------------------------

    def _downlink(self, frame: Frame, entry: AssociationEntry) -> None:
        sta = entry.mle.mld_id
        frame = replace(frame, mld_seq=self.seq, origin=self.name)
        self.seq = (self.seq + 1) & 0xFFFF
        assoc = entry.associated()
        if frame.rc.is_reliable:
            primary = entry.mle.primary_link
            order = ([primary] if primary in assoc else []) + [l for l in assoc if l != primary]
            chosen = order[: frame.rc.copies]
        else:
            primary = entry.mle.primary_link
            chosen = [primary] if primary in assoc else assoc[:1]
        if not chosen:
            self.net.retire(self.name, frame, "", "no_link", f"sta={sta}")
            return
        self.net.spawn(frame, len(chosen) - 1)
        local = [l for l in chosen if entry.links[l][0] == self.name]
        if len(local) > 1 and self.net.options.cross_link_abort:
            self._copies[frame.frame_id] = [entry.links[l][1] for l in local]
        for link_id in chosen:
            ap, ap_link = entry.links[link_id]
            if ap == self.name:
                self._send_air(ap_link, sta, link_id, rewrite_egress(frame, entry.mle, link_id))
                continue
            peer = self.peer_macs.get(ap)
            if peer is None:
                self.net.retire(self.name, frame, "eth", "no_peer", f"ap={ap}")
                continue
            na = entry.mle.link(link_id).mac
            tagged = attach_ytag(frame, da=peer, sa=self.wired_mac, na=na, seq=frame.mld_seq,
                                 flags=YTAG_FLAG_DOWNLINK)
            self.counters_["ytag_sent"] += 1
            self.net.metrics.count_relay(frame.flow)
            self.net.log(self.name, "ytag_tx", tagged, "eth", "relayed", f"to={ap},na={na}")
            self.port.send(tagged)

    def _send_air(self, ap_link: str, sta: str, link_id: str, frame: Frame) -> None:
        radio = self.links[ap_link].radio
        node = self.net.nodes[sta]
        self.net.log(self.name, "tx", frame, ap_link, "sent", f"to={link_id}")
        radio.transmit(frame,
                       lambda f: self._tx_done(ap_link, node, link_id, f),
                       lambda f, why: self._tx_failed(ap_link, f, why))

    def _tx_failed(self, ap_link: str, frame: Frame, why: str) -> None:
        siblings = self._copies.get(frame.frame_id) if frame.frame_id is not None else None
        if siblings is not None and why != "aborted":
            siblings.remove(ap_link)
            if not siblings:
                del self._copies[frame.frame_id]
        self.net.retire(self.name, frame, ap_link, why)

    def _tx_done(self, ap_link: str, node: "HrSta", link_id: str, frame: Frame) -> None:
        siblings = self._copies.pop(frame.frame_id, None) if frame.frame_id is not None else None
        if siblings:
            for other in siblings:
                if other != ap_link:
                    self.links[other].radio.abort(frame.frame_id)
        node.on_air_receive(link_id, frame, ap_link)

    def counters(self) -> dict:
        out = dict(self.counters_)
        out["elimination"] = self.elim.counters()
        out["primary_for"] = sorted(self.primary_for)
        return out
