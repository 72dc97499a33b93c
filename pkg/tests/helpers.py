"""Scenario builders and trace readers shared by the tests."""

from __future__ import annotations

import copy

from hrwifi import preset
from hrwifi.engine import TraceRecord


def scenario(name: str, **wireless) -> dict:
    raw = preset(name)
    raw["wireless"].update(wireless)
    return raw


def one_flow(raw: dict, flow_id: str, **fields) -> dict:
    raw = copy.deepcopy(raw)
    flow = next(f for f in raw["flows"] if f["id"] == flow_id)
    flow.update(fields)
    raw["flows"] = [flow]
    return raw


def set_primary(raw: dict, sta: str, link: str) -> dict:
    raw = copy.deepcopy(raw)
    next(s for s in raw["stas"] if s["id"] == sta)["primary"] = link
    return raw


def records(sim) -> list[TraceRecord]:
    return [TraceRecord.parse(line) for line in sim.net.trace.lines()[1:]]


def of_kind(recs, kind, node=None, verdict=None):
    return [r for r in recs if r.kind == kind and (node is None or r.node == node)
            and (verdict is None or r.verdict == verdict)]


def mac_of(raw: dict, node_id: str) -> str:
    """Identity MAC of a node as written in the config."""
    for h in raw.get("hosts", []):
        if h["id"] == node_id:
            return h["mac"].lower()
    for s in raw.get("stas", []):
        if s["id"] == node_id:
            primary = s.get("primary", s["links"][0]["id"])
            return next(l["mac"] for l in s["links"] if l["id"] == primary).lower()
    raise KeyError(node_id)


def legacy_nodes(raw: dict) -> set[str]:
    return {h["id"] for h in raw.get("hosts", [])} | {
        s["id"] for s in raw.get("stas", []) if s.get("legacy")}
