"""Scenario description, validation and construction."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

from .channel import WiredLink, WiredPort, WirelessParams
from .engine import MS, S, US, EventKind, InvariantViolation
from .frames import AccessCategory, Frame, MacAddress, NOTIFY_ETHERTYPE, ReliabilityCategory
from .hr_ap import HrAp
from .hr_sta import HrSta
from .metrics import frames_csv, report_csv, report_json
from .network import Network, Options

PRESETS = ("scenario1", "scenario2", "scenario3", "fig2")
DEFAULT_WIRED_LATENCY = 10 * US


class ScenarioError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


# -- wired nodes -----------------------------------------------------------------


class Switch:
    """Transparent learning bridge."""

    def __init__(self, net: Network, name: str, aging: int):
        self.net = net
        self.name = name
        self.aging = aging
        self.ports: list[WiredPort] = []
        self.mac_table: dict[MacAddress, tuple[WiredPort, int]] = {}
        self.flooded = 0
        self.forwarded = 0
        net.add_node(self)

    def new_port(self) -> WiredPort:
        port = WiredPort(self, f"{self.name}.p{len(self.ports)}")
        self.ports.append(port)
        return port

    def lookup(self, mac: MacAddress) -> Optional[WiredPort]:
        hit = self.mac_table.get(mac)
        if hit is None:
            return None
        port, learned = hit
        if self.net.now - learned > self.aging:
            del self.mac_table[mac]
            return None
        return port

    def on_wired_receive(self, frame: Frame, port: WiredPort) -> None:
        now = self.net.now
        if not frame.sa.is_multicast:
            self.mac_table[frame.sa] = (port, now)
        out = None if frame.da.is_multicast else self.lookup(frame.da)
        if out is None:
            targets = [p for p in self.ports if p is not port]
            self.flooded += 1
            verdict = "flood"
        elif out is port:
            targets = []
            verdict = "filter"
        else:
            targets = [out]
            self.forwarded += 1
            verdict = "forward"
        if frame.frame_id is not None:
            self.net.log(self.name, "switch", frame, port.name, verdict,
                         f"out={'+'.join(p.name for p in targets) or '-'}")
            if not targets:
                self.net.retire(self.name, frame, port.name, "filtered")
                return
            self.net.spawn(frame, len(targets) - 1)
        for p in targets:
            p.send(frame)


class LegacyHost:
    """Plain Ethernet end node."""

    def __init__(self, net: Network, name: str, mac: MacAddress):
        self.net = net
        self.name = name
        self.mac = mac
        self.port = WiredPort(self, f"{name}.eth")
        self.delivered = 0
        net.add_node(self)

    @property
    def identity_mac(self) -> MacAddress:
        return self.mac

    def app_send(self, flow: str, da: MacAddress, rc: ReliabilityCategory,
                 payload: bytes = b"", ac: AccessCategory = AccessCategory.BE) -> int:
        fid = self.net.new_frame(flow)
        frame = Frame(da=da, sa=self.mac, payload=payload, rc=rc, ac=ac, origin=self.name,
                      created_at=self.net.now, frame_id=fid, flow=flow)
        self.net.log(self.name, "app_send", frame, "eth", "offered", f"rc={rc},da={da}")
        self.port.send(frame)
        return fid

    def on_wired_receive(self, frame: Frame, port: WiredPort) -> None:
        if frame.outer_ether_type == NOTIFY_ETHERTYPE:
            return
        if frame.da != self.mac:
            self.net.retire(self.name, frame, "eth", "ignored", "da-mismatch")
            return
        self.delivered += 1
        self.net.deliver(self.name, frame, "eth")


# -- scenario config --------------------------------------------------------------


def _time(d: dict, base: str, default: Optional[int] = None) -> Optional[int]:
    for suffix, unit in (("_ns", 1), ("_us", US), ("_ms", MS), ("_s", S)):
        key = base + suffix
        if key in d:
            return int(round(d[key] * unit))
    return default


def _wireless(d: dict, base: WirelessParams) -> WirelessParams:
    return WirelessParams(
        per_attempt_loss=float(d.get("per_attempt_loss", base.per_attempt_loss)),
        retry_limit=int(d.get("retry_limit", base.retry_limit)),
        attempt_airtime=_time(d, "attempt_airtime", base.attempt_airtime),
        ack_timeout=_time(d, "ack_timeout", base.ack_timeout),
    )


@dataclass
class FlowSpec:
    id: str
    src: str
    dst: str
    rc: ReliabilityCategory
    ac: AccessCategory
    period: int
    count: int
    start: int
    payload_bytes: int
    deadline: Optional[int]

    def send_times(self) -> range:
        return range(self.start, self.start + self.count * self.period, self.period)

    @property
    def last_send(self) -> int:
        return self.start + max(self.count - 1, 0) * self.period


@dataclass
class RoamSpec:
    at: int
    sta: str
    link: str
    target_ap: str


@dataclass
class ScenarioSpec:
    """A scenario as loaded from JSON; ``raw`` keeps the source mapping."""

    raw: dict
    name: str = "scenario"
    seed: int = 1
    options: Options = field(default_factory=Options)
    wireless: WirelessParams = field(default_factory=WirelessParams)
    wired_latency: int = DEFAULT_WIRED_LATENCY
    flows: list[FlowSpec] = field(default_factory=list)
    roaming: list[RoamSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioSpec":
        violations = structural_violations(raw)
        if violations:
            raise ScenarioError(violations)
        opts = raw.get("options", {})
        options = Options(
            cross_link_abort=bool(opts.get("cross_link_abort", False)),
            dedup_window=int(opts.get("dedup_window", Options.dedup_window)),
            dedup_timeout=_time(opts, "dedup_timeout", Options.dedup_timeout),
            reassoc_delay=_time(opts, "reassoc_delay", Options.reassoc_delay),
            mac_aging=_time(opts, "mac_aging", Options.mac_aging),
            drain_timeout=_time(opts, "drain_timeout", Options.drain_timeout),
        )
        flows = [
            FlowSpec(
                id=f["id"], src=f["src"], dst=f["dst"],
                rc=ReliabilityCategory.parse(f.get("rc", "BE")),
                ac=AccessCategory(f.get("ac", "BE")),
                period=_time(f, "period", MS), count=int(f.get("count", 0)),
                start=_time(f, "start", 0), payload_bytes=int(f.get("payload_bytes", 64)),
                deadline=_time(f, "deadline"),
            )
            for f in raw.get("flows", [])
        ]
        roaming = [RoamSpec(_time(r, "at"), r["sta"], r["link"], r["target_ap"])
                   for r in raw.get("roaming", [])]
        return cls(
            raw=raw, name=raw.get("name", "scenario"), seed=int(raw.get("seed", 1)),
            options=options, wireless=_wireless(raw.get("wireless", {}), WirelessParams()),
            wired_latency=_time(raw, "wired_latency", DEFAULT_WIRED_LATENCY),
            flows=flows, roaming=roaming,
        )


def structural_violations(raw: Any) -> list[str]:
    """Type-level problems that stop the config from being parsed at all."""
    if not isinstance(raw, dict):
        return ["config: top level must be an object"]
    out = []
    for key in ("switches", "aps", "stas", "hosts", "flows", "roaming", "trunks"):
        if key in raw and not isinstance(raw[key], list):
            out.append(f"{key}: must be a list")
    for i, f in enumerate(raw.get("flows", []) if isinstance(raw.get("flows"), list) else []):
        for k in ("id", "src", "dst"):
            if k not in f:
                out.append(f"flows[{i}].{k}: missing")
        try:
            ReliabilityCategory.parse(f.get("rc", "BE"))
        except ValueError as exc:
            out.append(f"flows[{i}].rc: {exc}")
        if f.get("ac", "BE") not in {a.value for a in AccessCategory}:
            out.append(f"flows[{i}].ac: unknown access category {f.get('ac')!r}")
    for i, r in enumerate(raw.get("roaming", []) if isinstance(raw.get("roaming"), list) else []):
        for k in ("sta", "link", "target_ap"):
            if k not in r:
                out.append(f"roaming[{i}].{k}: missing")
        if _time(r, "at") is None:
            out.append(f"roaming[{i}].at: missing (use at_ms/at_us)")
    try:
        _wireless(raw.get("wireless", {}), WirelessParams())
    except (ValueError, TypeError) as exc:
        out.append(f"wireless: {exc}")
    return out


def validate(spec: Union[ScenarioSpec, dict]) -> list[str]:
    """Every violated constraint, each prefixed with the offending field."""
    raw = spec.raw if isinstance(spec, ScenarioSpec) else spec
    out = structural_violations(raw)
    if out:
        return out
    if not isinstance(spec, ScenarioSpec):
        spec = ScenarioSpec.from_dict(raw)

    ids: dict[str, str] = {}
    macs: dict[str, str] = {}

    def claim_id(node_id: str, where: str) -> None:
        if node_id in ids:
            out.append(f"{where}.id: duplicate node id {node_id!r} (also {ids[node_id]})")
        ids[node_id] = where

    def claim_mac(text: Any, where: str) -> None:
        try:
            mac = str(MacAddress.parse(str(text)))
        except ValueError:
            out.append(f"{where}: bad MAC address {text!r}")
            return
        if mac in macs:
            out.append(f"{where}: MAC uniqueness violated, {mac} also used by {macs[mac]}")
        macs[mac] = where

    switches = {s["id"] for s in raw.get("switches", [])}
    for i, s in enumerate(raw.get("switches", [])):
        claim_id(s["id"], f"switches[{i}]")
    ap_links: dict[str, tuple[str, int]] = {}
    aps = {}
    for i, ap in enumerate(raw.get("aps", [])):
        where = f"aps[{i}]"
        claim_id(ap["id"], where)
        aps[ap["id"]] = ap
        claim_mac(ap.get("wired_mac"), f"{where}.wired_mac")
        if ap.get("switch") not in switches:
            out.append(f"{where}.switch: unknown switch {ap.get('switch')!r}")
        if not ap.get("links"):
            out.append(f"{where}.links: an AP needs at least one link")
        for j, link in enumerate(ap.get("links", [])):
            claim_id(link["id"], f"{where}.links[{j}]")
            claim_mac(link.get("mac"), f"{where}.links[{j}].mac")
            ap_links[link["id"]] = (ap["id"], int(link.get("channel", 0)))
            try:
                _wireless(link.get("wireless", {}), spec.wireless)
            except (ValueError, TypeError) as exc:
                out.append(f"{where}.links[{j}].wireless: {exc}")
    hosts = {}
    for i, h in enumerate(raw.get("hosts", [])):
        claim_id(h["id"], f"hosts[{i}]")
        claim_mac(h.get("mac"), f"hosts[{i}].mac")
        hosts[h["id"]] = h
        if h.get("switch") not in switches:
            out.append(f"hosts[{i}].switch: unknown switch {h.get('switch')!r}")
    stas = {}
    for i, sta in enumerate(raw.get("stas", [])):
        where = f"stas[{i}]"
        claim_id(sta["id"], where)
        stas[sta["id"]] = sta
        links = sta.get("links", [])
        legacy = bool(sta.get("legacy", False))
        if legacy and len(links) != 1:
            out.append(f"{where}.links: a legacy STA has exactly one link")
        if not legacy and len(links) < 2:
            out.append(f"{where}.links: an HR STA needs at least two affiliated links")
        link_ids = [l["id"] for l in links]
        if sta.get("primary", link_ids[0] if link_ids else None) not in link_ids:
            out.append(f"{where}.primary: {sta.get('primary')!r} is not one of its links")
        used_ap_links, used_channels = set(), set()
        for j, link in enumerate(links):
            lw = f"{where}.links[{j}]"
            claim_id(link["id"], lw)
            claim_mac(link.get("mac"), f"{lw}.mac")
            try:
                _wireless(link.get("wireless", {}), spec.wireless)
            except (ValueError, TypeError) as exc:
                out.append(f"{lw}.wireless: {exc}")
            target = link.get("ap_link")
            if target is None:
                continue
            if target not in ap_links:
                out.append(f"{lw}.ap_link: unknown AP link {target!r}")
                continue
            channel = ap_links[target][1]
            if "channel" in link and int(link["channel"]) != channel:
                out.append(f"{lw}.channel: {link['channel']} does not match {target} on channel {channel}")
            if target in used_ap_links:
                out.append(f"{lw}.ap_link: {target} already serves another link of {sta['id']}")
            if channel in used_channels:
                out.append(f"{lw}.ap_link: channel {channel} already used by another link of {sta['id']}")
            used_ap_links.add(target)
            used_channels.add(channel)

    trunks = raw.get("trunks", [])
    parent = {s: s for s in switches}

    def find(x: str) -> str:
        while parent[x] != x:
            x = parent[x]
        return x

    for i, t in enumerate(trunks):
        if len(t) != 2 or any(s not in switches for s in t):
            out.append(f"trunks[{i}]: must name two known switches")
            continue
        a, b = find(t[0]), find(t[1])
        if a == b:
            out.append(f"trunks[{i}]: creates a forwarding loop")
        parent[a] = b
    if len({find(s) for s in switches}) > 1:
        out.append("trunks: switches are not all connected")

    endpoints = set(hosts) | set(stas)
    for i, f in enumerate(spec.flows):
        where = f"flows[{i}]"
        for side in ("src", "dst"):
            if getattr(f, side) not in endpoints:
                out.append(f"{where}.{side}: unknown end node {getattr(f, side)!r}")
        if f.src == f.dst:
            out.append(f"{where}: source and destination are the same node")
        if f.period <= 0:
            out.append(f"{where}.period: must be positive")
        if f.count < 0:
            out.append(f"{where}.count: must be nonnegative")
        if f.rc.is_reliable:
            sender = stas.get(f.src) or stas.get(f.dst)
            if sender is None:
                out.append(f"{where}.rc: Reliable service needs an HR STA at one end")
            else:
                k = len(sender.get("links", []))
                if f.rc.copies > k:
                    out.append(f"{where}.rc: k exceeds affiliated links ({f.rc.copies} > {k})")

    by_sta: dict[str, list[RoamSpec]] = {}
    for i, r in enumerate(spec.roaming):
        where = f"roaming[{i}]"
        sta = stas.get(r.sta)
        if sta is None:
            out.append(f"{where}.sta: unknown STA {r.sta!r}")
            continue
        if r.link not in {l["id"] for l in sta.get("links", [])}:
            out.append(f"{where}.link: {r.link!r} is not a link of {r.sta}")
        if r.target_ap not in aps:
            out.append(f"{where}.target_ap: unknown AP {r.target_ap!r}")
        if r.at < 0:
            out.append(f"{where}.at: must be nonnegative")
        by_sta.setdefault(r.sta, []).append(r)
    for sta_id, steps in by_sta.items():
        steps = sorted(steps, key=lambda r: r.at)
        for a, b in zip(steps, steps[1:]):
            if b.at < a.at + spec.options.reassoc_delay:
                out.append(f"roaming: serialization violated on {sta_id}, {b.link} at {b.at} ns "
                           f"overlaps {a.link} started at {a.at} ns")
    if spec.options.dedup_window < 1 or spec.options.dedup_window >= 1 << 15:
        out.append("options.dedup_window: must be in [1, 32767]")
    return out


# -- simulation -------------------------------------------------------------------


class Simulation:
    def __init__(self, spec: ScenarioSpec, net: Network, flows: list[FlowSpec]):
        self.spec = spec
        self.net = net
        self.flows = flows
        self.summary = None

    @property
    def nodes(self) -> dict:
        return self.net.nodes

    def horizon(self) -> int:
        last = 0
        for f in self.flows:
            if f.count:
                last = max(last, f.last_send)
        for r in self.spec.roaming:
            last = max(last, r.at + self.spec.options.reassoc_delay)
        return last + self.spec.options.drain_timeout

    def run(self, until: Optional[int] = None):
        self.summary = self.net.engine.run(self.horizon() if until is None else until)
        self.check_conservation()
        return self.summary

    def check_conservation(self) -> None:
        m = self.net.metrics
        for f in m.flows.values():
            live = sum(1 for r in m.frames.values()
                       if r.flow == f.flow_id and r.delivered_at is None and r.live > 0)
            if f.offered != f.delivered + f.dropped + live:
                raise InvariantViolation(
                    f"flow {f.flow_id}: offered {f.offered} != delivered {f.delivered} + "
                    f"dropped {f.dropped} + in flight {live}")

    def report(self) -> dict:
        s = self.summary
        if s is None:
            raise RuntimeError("run the simulation before asking for its report")
        run = {"events_processed": s.events_processed, "final_time_ns": s.final_time,
               "horizon_ns": self.horizon(), "events_pending": s.pending}
        links = {name: r.counters() for name, r in sorted(self.net.radios.items())}
        nodes = {}
        for name, node in sorted(self.net.nodes.items()):
            if hasattr(node, "counters"):
                nodes[name] = node.counters()
        return self.net.metrics.summarize(scenario=self.spec.name, seed=self.net.rngs.seed,
                                          run=run, links=links, nodes=nodes)

    def write_outputs(self, out_dir: Path, trace: bool = False, frames: bool = False) -> dict:
        out_dir.mkdir(parents=True, exist_ok=True)
        report = self.report()
        (out_dir / "report.json").write_text(report_json(report))
        (out_dir / "report.csv").write_text(report_csv(report))
        if trace:
            (out_dir / "trace.tsv").write_text(self.net.trace.text())
        if frames:
            (out_dir / "frames.csv").write_text(frames_csv(self.net.metrics))
        return report


def build(spec: Union[ScenarioSpec, dict], *, seed: Optional[int] = None, trace: bool = False) -> Simulation:
    if isinstance(spec, dict):
        spec = ScenarioSpec.from_dict(spec)
    violations = validate(spec)
    if violations:
        raise ScenarioError(violations)
    raw = spec.raw
    net = Network(spec.seed if seed is None else seed, spec.options, trace=trace)
    engine = net.engine

    switches = {s["id"]: Switch(net, s["id"], _time(s, "aging", spec.options.mac_aging))
                for s in raw.get("switches", [])}

    def connect(port: WiredPort, switch_id: str, latency: Optional[int] = None) -> None:
        WiredLink(port, switches[switch_id].new_port(),
                  spec.wired_latency if latency is None else latency, engine)

    for a, b in raw.get("trunks", []):
        WiredLink(switches[a].new_port(), switches[b].new_port(), spec.wired_latency, engine)

    ap_nodes: dict[str, HrAp] = {}
    ap_link_owner: dict[str, tuple[HrAp, int]] = {}
    for ap in raw.get("aps", []):
        links = [(l["id"], MacAddress.parse(l["mac"]), int(l.get("channel", 0))) for l in ap["links"]]
        params = {l["id"]: _wireless(l.get("wireless", {}), spec.wireless) for l in ap["links"]}
        node = HrAp(net, ap["id"], MacAddress.parse(ap["wired_mac"]), links, params)
        connect(node.port, ap["switch"], _time(ap, "wired_latency"))
        ap_nodes[node.name] = node
        for lid, _, ch in links:
            ap_link_owner[lid] = (node, ch)

    for h in raw.get("hosts", []):
        node = LegacyHost(net, h["id"], MacAddress.parse(h["mac"]))
        connect(node.port, h["switch"], _time(h, "wired_latency"))

    sta_nodes: list[HrSta] = []
    for sta in raw.get("stas", []):
        links = [(l["id"], MacAddress.parse(l["mac"])) for l in sta["links"]]
        params = {l["id"]: _wireless(l.get("wireless", {}), spec.wireless) for l in sta["links"]}
        node = HrSta(net, sta["id"], links, sta.get("primary", links[0][0]), params,
                     legacy=bool(sta.get("legacy", False)))
        for l in sta["links"]:
            if l.get("ap_link") is not None:
                ap, ch = ap_link_owner[l["ap_link"]]
                node.bind(l["id"], ap.name, l["ap_link"], ch)
        sta_nodes.append(node)

    # Initial associations: every AP starts with the same, consistent table.
    for ap in ap_nodes.values():
        for other in ap_nodes.values():
            ap.peer_macs[other.name] = other.wired_mac
        for sta in sta_nodes:
            entry = ap.learn(sta.mle())
            for link in sta.links:
                if link.associated:
                    entry.links[link.link_id] = (link.ap, link.ap_link)
    for ap in ap_nodes.values():
        engine.schedule(0, ap.sync_roles, kind=EventKind.MEASUREMENT, target=ap.name)

    for f in spec.flows:
        net.metrics.add_flow(f.id, src=f.src, dst=f.dst, rc=str(f.rc), deadline=f.deadline)
        net.flow_src[f.id] = f.src
    sim = Simulation(spec, net, spec.flows)
    for f in spec.flows:
        if f.count:
            engine.schedule(f.start, _send_flow, net, f, 0, kind=EventKind.APP_SEND, target=f.src)
    for r in sorted(spec.roaming, key=lambda r: r.at):
        engine.schedule(r.at, net.nodes[r.sta].start_reassociation, r.link, r.target_ap,
                        kind=EventKind.REASSOCIATION, target=r.sta)
    return sim


def _send_flow(net: Network, flow: FlowSpec, index: int) -> None:
    src = net.nodes[flow.src]
    dst = net.nodes[flow.dst]
    src.app_send(flow.id, dst.identity_mac, flow.rc, bytes(flow.payload_bytes), flow.ac)
    if index + 1 < flow.count:
        net.engine.after(flow.period, _send_flow, net, flow, index + 1,
                         kind=EventKind.APP_SEND, target=flow.src)


# -- presets and config files --------------------------------------------------------


def load_config(source: Union[str, Path]) -> dict:
    """Read a JSON scenario from a path, or a bundled preset by name."""
    text = str(source)
    name = Path(text).name
    stem = name[:-5] if name.endswith(".json") else name
    path = Path(text)
    if path.is_file():
        return json.loads(path.read_text())
    if stem in PRESETS:
        return preset(stem)
    raise FileNotFoundError(f"no such config file or preset: {text}")


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    data = resources.files("hrwifi").joinpath("presets", f"{name}.json").read_text()
    return json.loads(data)


def with_overrides(raw: dict, **fields: Any) -> dict:
    """Copy of ``raw`` with sweepable fields replaced."""
    out = copy.deepcopy(raw)
    for key, value in fields.items():
        if key in WIRELESS_FIELDS:
            out.setdefault("wireless", {})[key] = value
            for group in ("aps", "stas"):
                for node in out.get(group, []):
                    for link in node.get("links", []):
                        if key in link.get("wireless", {}):
                            link["wireless"][key] = value
        elif key in OPTION_FIELDS:
            out.setdefault("options", {})[OPTION_FIELDS[key]] = value
        elif key in FLOW_FIELDS:
            for f in out.get("flows", []):
                f[key] = value
        elif key == "seed":
            out["seed"] = value
        elif key == "wired_latency_us":
            out[key] = value
        else:
            raise KeyError(key)
    return out


WIRELESS_FIELDS = ("per_attempt_loss", "retry_limit", "attempt_airtime_us", "ack_timeout_us")
OPTION_FIELDS = {"H": "dedup_window", "dedup_window": "dedup_window",
                 "cross_link_abort": "cross_link_abort", "reassoc_delay_ms": "reassoc_delay_ms",
                 "dedup_timeout_ms": "dedup_timeout_ms", "drain_timeout_ms": "drain_timeout_ms"}
FLOW_FIELDS = ("rc", "count", "period_us", "payload_bytes", "deadline_us")
SWEEPABLE = WIRELESS_FIELDS + tuple(OPTION_FIELDS) + FLOW_FIELDS + ("wired_latency_us",)
