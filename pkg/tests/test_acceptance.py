"""Acceptance criteria C1 to C9.

Each test carries a ``criterion`` marker; conftest prints one PASS/FAIL line
per criterion at the end of the run, with the measured values.
"""

import json
import random
import subprocess
import sys
from pathlib import Path

import pytest

from hrwifi import build
from hrwifi.channel import WirelessLink, WirelessParams
from hrwifi.dedup import DedupState, Verdict
from hrwifi.engine import Engine, RngStream
from hrwifi.frames import YTAG_LEN, Frame, FrameError, MacAddress, decode_ytag, encode_ytag
from hrwifi.metrics import percentile, report_json
from hrwifi.topology import PRESETS, preset

from helpers import legacy_nodes, mac_of, of_kind, one_flow, records, scenario, set_primary
from oracles import (
    arq_drop_probability,
    arrival_sequence,
    binomial_sigma,
    delivered_set_verdicts,
    reorder_depth,
    within_sigma,
)

N = 100_000
GOLDEN = Path(__file__).parent / "golden" / "fig2_seed1.tsv"
criterion = pytest.mark.criterion


def uplink(p, R, n, rc, primary="3A"):
    raw = one_flow(scenario("scenario1", per_attempt_loss=p, retry_limit=R), "up", count=n, rc=rc)
    return set_primary(raw, "sta3", primary)


def run_flow(raw, seed):
    sim = build(raw, seed=seed)
    sim.run()
    return sim.net.metrics.flows["up"]


@pytest.fixture(scope="module")
def c1_runs():
    """Paired runs on the same seed: both links, and each link alone."""
    return {
        "dual": run_flow(uplink(0.15, 0, N, "R2"), 1),
        "3A": run_flow(uplink(0.15, 0, N, "BE", "3A"), 1),
        "3B": run_flow(uplink(0.15, 0, N, "BE", "3B"), 1),
    }


def sigmas(lost, n, q):
    return abs(lost / n - q) / binomial_sigma(q, n)


# -- C1 ----------------------------------------------------------------------------


@criterion("C1", "redundancy gain, scenario 1, p=0.15, R=0")
def test_c1_redundancy_gain(c1_runs, record_property):
    q_single = arq_drop_probability(0.15, 0)
    q_dual = q_single ** 2
    for name, q in (("3A", q_single), ("3B", q_single), ("dual", q_dual)):
        st = c1_runs[name]
        assert st.offered == N
        record_property("measured", f"{name} loss={st.lost / N:.5f} ({sigmas(st.lost, N, q):.2f} sigma)")
        assert within_sigma(st.lost, N, q)


# -- C2 ----------------------------------------------------------------------------


@criterion("C2", "ARQ drop ratio = p^(R+1)")
@pytest.mark.parametrize("p", [0.1, 0.2])
@pytest.mark.parametrize("R", [1, 3, 7])
def test_c2_arq_oracle(p, R, record_property):
    eng = Engine()
    link = WirelessLink("L", WirelessParams(per_attempt_loss=p, retry_limit=R),
                        RngStream(2024, f"air:c2:{p}:{R}"), eng)
    mac = MacAddress.parse("02:00:00:00:03:0a")
    done = []
    for i in range(N):
        link.transmit(Frame(da=mac, sa=mac, frame_id=i), done.append, lambda f, why: None)
    eng.run(10**18)
    assert link.frames == N and link.delivered + link.mac_drops == N
    q = arq_drop_probability(p, R)
    record_property("measured", f"p={p},R={R}: {link.mac_drops / N:.2e} vs {q:.2e}")
    assert within_sigma(link.mac_drops, N, q)


# -- C3 ----------------------------------------------------------------------------


def assert_min_of_copies(dual, a, b):
    delivered = set(a.latencies) | set(b.latencies)
    assert set(dual.latencies) == delivered
    for fid, lat in dual.latencies.items():
        assert lat == min(x.latencies[fid] for x in (a, b) if fid in x.latencies)


def p95(stats):
    return percentile(stats.latency_array(), 95)


@criterion("C3", "dual latency = min of copies, p95 dominance")
def test_c3_latency_dominance(c1_runs, record_property):
    dual, a, b = c1_runs["dual"], c1_runs["3A"], c1_runs["3B"]
    assert_min_of_copies(dual, a, b)
    record_property("measured", f"R=0 p95 dual={p95(dual)} single={p95(a)}/{p95(b)} ns")
    assert p95(dual) <= p95(a) and p95(dual) <= p95(b)


@criterion("C3", "dual latency = min of copies, p95 dominance")
def test_c3_latency_dominance_with_retries(record_property):
    n = 20_000
    dual = run_flow(uplink(0.3, 7, n, "R2"), 8)
    a = run_flow(uplink(0.3, 7, n, "BE", "3A"), 8)
    b = run_flow(uplink(0.3, 7, n, "BE", "3B"), 8)
    assert_min_of_copies(dual, a, b)
    record_property("measured", f"R=7 p95 dual={p95(dual)} single={p95(a)}/{p95(b)} ns")
    assert p95(dual) <= p95(a) and p95(dual) <= p95(b)
    assert p95(dual) < max(p95(a), p95(b))


# -- C4 ----------------------------------------------------------------------------


@criterion("C4", "fig2 golden trace")
def test_c4_fig2_golden_trace(record_property):
    sim = build(preset("fig2"), seed=1, trace=True)
    sim.run()
    text = sim.net.trace.text()
    assert text.encode() == GOLDEN.read_bytes()
    recs = records(sim)
    keys = [(r.node, r.kind, r.port, r.verdict) for r in recs]
    order = [
        ("sta3", "tx", "3B", "sent"),
        ("sta3", "tx", "3A", "sent"),
        ("ap2", "ytag_tx", "eth", "relayed"),
        ("ap1", "elim", "1B", "pass"),
        ("ap1", "drop", "eth", "discard"),
        ("node4", "deliver", "eth", "delivered"),
    ]
    idx = [keys.index(k) for k in order]
    assert idx[0] < idx[2] and idx[1] < idx[2]
    assert idx[3] < idx[4] < idx[5]
    relay = recs[idx[2]].info_dict()
    assert relay["to"] == "ap1" and relay["rx_link"] == "2A" and relay["na"] == "02:00:00:00:00:04"
    delivers = of_kind(recs, "deliver")
    assert len(delivers) == 1 and delivers[0].info_dict()["sa"] == "02:00:00:00:03:0b"
    record_property("measured", f"{len(recs)} records, byte-identical")


# -- C5 ----------------------------------------------------------------------------


@criterion("C5", "dedup matches delivered-set oracle")
def test_c5_dedup_oracle_equivalence(record_property):
    rng = random.Random(5)
    mismatches = wrapped = 0
    for _ in range(10_000):
        frames = rng.randint(1, 300)
        start = 65536 - rng.randint(1, 300) if rng.random() < 0.3 else rng.randrange(65536)
        arrivals = arrival_sequence(rng, frames, 64, start)
        assert reorder_depth(arrivals) < 64
        wrapped += any(a >= 65536 for a in arrivals) and any(a < 65536 for a in arrivals)
        s = DedupState(window=64)
        got = [s.accept(a % 65536, 0) is Verdict.PASS for a in arrivals]
        mismatches += got != delivered_set_verdicts(arrivals)
    record_property("measured", f"{mismatches} mismatches, {wrapped} sequences wrap")
    assert wrapped > 1000
    assert mismatches == 0


# -- C6 ----------------------------------------------------------------------------


def random_mac(rng):
    return MacAddress(rng.randbytes(6))


@criterion("C6", "Y-TAG codec round trip and rejection")
def test_c6_ytag_round_trip(record_property):
    rng = random.Random(6)
    for _ in range(N):
        etype = rng.choice((0x0800, 0x86DD, 0x88F7, rng.randint(0x0600, 0x88B4)))
        f = Frame(da=random_mac(rng), sa=random_mac(rng), ether_type=etype,
                  payload=rng.randbytes(rng.randint(0, 128)))
        na, seq, flags = random_mac(rng), rng.randrange(65536), rng.randrange(256)
        wire = encode_ytag(f, na, seq, flags=flags)
        assert len(wire) - len(f.to_bytes()) == YTAG_LEN == 12
        inner, tag = decode_ytag(wire)
        assert (inner.da, inner.sa, inner.ether_type, inner.payload) == (na, f.sa, etype, f.payload)
        assert (tag.na, tag.seq, tag.flags, tag.version) == (na, seq, flags, 1)
        assert len(tag.to_bytes()) == 12
        assert Frame.from_bytes(wire).to_bytes() == wire
    record_property("measured", f"{N} round trips")


@criterion("C6", "Y-TAG codec round trip and rejection")
def test_c6_malformed_inputs_are_rejected(record_property):
    rng = random.Random(66)
    good = encode_ytag(Frame(da=random_mac(rng), sa=random_mac(rng), payload=bytes(8)),
                       random_mac(rng), 7)
    rejected = accepted = 0
    for i in range(N):
        mode = i % 3
        if mode == 0:
            raw = good[: rng.randrange(len(good))]
        elif mode == 1:
            raw = bytearray(good)
            for _ in range(rng.randint(1, 4)):
                raw[rng.randrange(24)] ^= 1 << rng.randrange(8)
            raw = bytes(raw)
        else:
            raw = rng.randbytes(rng.randint(0, 40))
        try:
            inner, tag = decode_ytag(raw)
        except FrameError:
            rejected += 1
            continue
        # Flips inside addresses, seq or flags still give a well-formed tag.
        accepted += 1
        assert len(tag.to_bytes()) == 12 and inner.da == tag.na
    record_property("measured", f"{rejected} rejected, {accepted} well-formed after mutation, 0 crashes")
    assert rejected > N // 2


# -- C7 ----------------------------------------------------------------------------


def parse_snapshot(info):
    out = {}
    for part in info.split(","):
        link, _, where = part.partition("=")
        out[link] = where
    return out


def serving(snap):
    return {v.split("/")[0] for v in snap.values() if "/" in v}


@criterion("C7", "roaming invariants over type 1, 3, 2 transitions")
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_c7_roaming_invariants(seed, record_property):
    raw = scenario("scenario3")
    sim = build(raw, seed=seed, trace=True)
    sim.run()
    recs = records(sim)
    sta = raw["stas"][0]
    name = sta["id"]
    owner = {l["id"]: ap["id"] for ap in raw["aps"] for l in ap["links"]}
    initial = {l["id"]: f"{owner[l['ap_link']]}/{l['ap_link']}" for l in sta["links"]}

    # (a) reassociation intervals of one STA are pairwise disjoint
    starts = [r.time for r in of_kind(recs, "reassoc", name, "start")]
    ends = [r.time for r in of_kind(recs, "reassoc", name, "done")]
    assert len(starts) == len(ends) == 3
    intervals = sorted(zip(starts, ends))
    assert all(s < e for s, e in intervals)
    assert all(e1 <= s2 for (_, e1), (s2, _) in zip(intervals, intervals[1:]))

    # (b) and (d) on the sequence of association snapshots
    snaps = [initial] + [parse_snapshot(r.info) for r in of_kind(recs, "assoc", name, "snapshot")]
    assert len(snaps) == 7
    for before, after in zip(snaps, snaps[1:]):
        assert len(serving(after)) >= 1
        assert sum(before[k] != after[k] for k in before) <= 1
        sb, sa = serving(before), serving(after)
        assert not (len(sb) == 1 and len(sa) == 1 and sb != sa)

    # (c) no frame reaches an application twice
    delivered = [(r.node, r.frame_id) for r in of_kind(recs, "deliver")]
    assert len(delivered) == len(set(delivered))
    kinds = [r.info_dict()["transition"] for r in of_kind(recs, "reassoc", name, "done")]
    assert kinds == ["type1", "type3", "type2"]
    rep = sim.report()
    record_property("measured", f"seed {seed}: transitions {'/'.join(kinds)}, "
                                f"{len(delivered)} deliveries, lost up={rep['flows']['up']['lost']} "
                                f"down={rep['flows']['down']['lost']}")


# -- C8 ----------------------------------------------------------------------------


@criterion("C8", "transparency at legacy nodes")
@pytest.mark.parametrize("name", PRESETS)
def test_c8_transparency(name, record_property):
    raw = preset(name)
    sim = build(raw, seed=1, trace=True)
    seen = []
    orig = sim.net.deliver

    def spy(node, frame, port):
        seen.append((node, frame))
        orig(node, frame, port)

    sim.net.deliver = spy
    sim.run()
    legacy = legacy_nodes(raw)
    src = {f["id"]: f["src"] for f in raw["flows"]}
    checked = violations = 0
    for node, frame in seen:
        if node not in legacy:
            continue
        checked += 1
        if frame.y_tag is not None or str(frame.sa) != mac_of(raw, src[frame.flow]):
            violations += 1
    assert checked > 0
    assert sim.report()["transparency_violations"] == 0
    record_property("measured", f"{name}: {checked} legacy deliveries, {violations} violations")
    assert violations == 0


# -- C9 ----------------------------------------------------------------------------


@criterion("C9", "determinism")
@pytest.mark.parametrize("name", PRESETS)
def test_c9_rerun_is_byte_identical(name, record_property):
    out = []
    for _ in range(2):
        sim = build(preset(name), seed=3, trace=True)
        sim.run()
        out.append((sim.net.trace.text(), report_json(sim.report())))
    assert out[0] == out[1]
    record_property("measured", f"{name}: {len(out[0][0].splitlines())} trace lines identical")


@criterion("C9", "determinism")
def test_c9_cli_reruns_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        subprocess.run([sys.executable, "-m", "hrwifi", "run", "--config", "scenario3", "--seed", "9",
                        "--trace", "--out", str(tmp_path / d)], check=True, capture_output=True)
    for f in ("trace.tsv", "report.json", "report.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    json.loads((tmp_path / "a" / "report.json").read_text())
