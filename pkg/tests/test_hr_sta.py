import copy

import pytest

from hrwifi import build
from hrwifi.frames import MacAddress
from hrwifi.hr_sta import LinkState, classify_transition

from helpers import of_kind, one_flow, records, scenario


def run(raw, seed=1):
    sim = build(raw, seed=seed, trace=True)
    sim.run()
    return sim, records(sim)


def capture_uplink(sim, ap="ap1"):
    """Record every frame ``ap`` hears on air."""
    node = sim.net.nodes[ap]
    seen = []
    orig = node.on_air_receive_ap

    def spy(ap_link, frame):
        seen.append((ap_link, frame))
        orig(ap_link, frame)

    node.on_air_receive_ap = spy
    return seen


def lossless_s1(**flow):
    return one_flow(scenario("scenario1", per_attempt_loss=0.0), "up", **flow)


def test_reliable_frame_copies_share_seq_and_use_link_macs():
    sim = build(lossless_s1(count=5), trace=True)
    seen = capture_uplink(sim)
    sim.run()
    by_frame = {}
    for ap_link, f in seen:
        by_frame.setdefault(f.frame_id, []).append(f)
    assert len(by_frame) == 5
    for copies in by_frame.values():
        assert len(copies) == 2
        assert len({c.mld_seq for c in copies}) == 1
        assert {str(c.sa) for c in copies} == {"02:00:00:00:03:0a", "02:00:00:00:03:0b"}
    assert [c[0].mld_seq for c in by_frame.values()] == [0, 1, 2, 3, 4]


def test_best_effort_uses_primary_link_only():
    sim = build(lossless_s1(count=5, rc="BE"), trace=True)
    seen = capture_uplink(sim)
    sim.run()
    assert [ap_link for ap_link, _ in seen] == ["1A"] * 5
    assert sim.report()["flows"]["up"]["delivered"] == 5


def test_mld_seq_counter_is_shared_across_rc():
    raw = lossless_s1(count=4)
    raw["flows"].append(dict(raw["flows"][0], id="be", rc="BE", start_us=600))
    sim = build(raw, trace=True)
    seen = capture_uplink(sim)
    sim.run()
    seqs = sorted({(f.created_at, f.mld_seq) for _, f in seen})
    assert [s for _, s in seqs] == list(range(8))


def test_degraded_mode_sends_one_copy_during_reassociation():
    raw = scenario("scenario3", per_attempt_loss=0.0)
    raw = one_flow(raw, "up", count=100)
    raw["roaming"] = [{"at_ms": 20, "sta": "sta5", "link": "5B", "target_ap": "ap2"}]
    sim, recs = run(raw)
    during = [r for r in of_kind(recs, "tx", "sta5") if 20_000_000 <= r.time < 70_000_000]
    assert during and all(r.port == "5A" for r in during)
    assert sim.report()["flows"]["up"]["delivered"] == 100
    fids = [r.frame_id for r in of_kind(recs, "deliver")]
    assert len(fids) == len(set(fids)) == 100


def downlink_s1(**ap_wireless):
    raw = scenario("scenario1", per_attempt_loss=0.0)
    raw["flows"] = [{"id": "down", "src": "node4", "dst": "sta3", "rc": "R2",
                     "period_us": 1000, "count": 50, "start_us": 100}]
    for link in raw["aps"][0]["links"]:
        if link["id"] in ap_wireless:
            link["wireless"] = ap_wireless[link["id"]]
    return raw


def test_downlink_copies_one_delivery_one_discard():
    sim, recs = run(downlink_s1())
    f = sim.report()["flows"]["down"]
    assert f["delivered"] == 50 and f["duplicates_discarded"] == 50
    assert len(of_kind(recs, "drop", "sta3", "discard")) == 50


def test_surviving_copy_on_link_b_is_delivered():
    sim, recs = run(downlink_s1(**{"1A": {"per_attempt_loss": 1.0, "retry_limit": 0}}))
    f = sim.report()["flows"]["down"]
    assert f["delivered"] == 50 and f["lost"] == 0 and f["duplicates_discarded"] == 0
    assert {r.port for r in of_kind(recs, "deliver", "sta3")} == {"3B"}


def test_delivered_sa_is_primary_mac_for_hr_origin():
    sim, recs = run(lossless_s1(count=3))
    for r in of_kind(recs, "deliver", "node4"):
        assert r.info_dict()["sa"] == "02:00:00:00:03:0a"


def roam_raw(*roams, delay_ms=50):
    raw = one_flow(scenario("scenario3", per_attempt_loss=0.0), "up", count=200)
    raw["options"]["reassoc_delay_ms"] = delay_ms
    raw["roaming"] = [{"at_ms": t, "sta": "sta5", "link": l, "target_ap": ap} for t, l, ap in roams]
    return raw


def test_concurrent_trigger_is_deferred_until_first_completes():
    raw = roam_raw((10, "5B", "ap2"))
    sim = build(raw, trace=True)
    sta = sim.net.nodes["sta5"]
    sim.run(until=11_000_000)
    assert sta.by_id["5B"].state is LinkState.REASSOCIATING
    assert sta.start_reassociation("5A", "ap3") is False
    assert sta.by_id["5A"].state is LinkState.ASSOCIATED
    sim.run()
    (l1, s1, e1), (l2, s2, e2) = sta.reassoc_log
    assert (l1, l2) == ("5B", "5A") and e1 <= s2
    assert s1 == 10_000_000 and e1 == 60_000_000 and s2 == 60_000_000
    assert {l.ap for l in sta.links} == {"ap2", "ap3"}


def test_transition_types_are_named():
    sim, recs = run(roam_raw((10, "5B", "ap2"), (100, "5A", "ap3"), (200, "5B", "ap3")))
    kinds = [r.info_dict()["transition"] for r in of_kind(recs, "reassoc", "sta5", "done")]
    assert kinds == ["type1", "type3", "type2"]


@pytest.mark.parametrize("before,after,kind", [
    ({"ap1"}, {"ap1", "ap2"}, "type1"),
    ({"ap2", "ap3"}, {"ap3"}, "type2"),
    ({"ap1", "ap2"}, {"ap2", "ap3"}, "type3"),
    ({"ap1"}, {"ap1"}, "none"),
    ({"ap1"}, {"ap2"}, "single"),
])
def test_classify_transition(before, after, kind):
    assert classify_transition(frozenset(before), frozenset(after)) == kind


def test_reassociation_without_free_link_fails_and_keeps_link():
    raw = roam_raw((10, "5A", "ap3"))
    # ap3 only offers the channel 5B already uses.
    raw["aps"][2]["links"] = [{"id": "3A", "mac": "02:00:00:00:03:0a", "channel": 36}]
    sim, recs = run(raw)
    sta = sim.net.nodes["sta5"]
    assert of_kind(recs, "reassoc", "sta5", "failed")
    assert sta.by_id["5A"].state is LinkState.ASSOCIATED and sta.by_id["5A"].ap == "ap1"
    assert sim.report()["flows"]["up"]["lost"] == 0


def test_roam_to_current_ap_is_a_noop():
    sim, recs = run(roam_raw((10, "5A", "ap1")))
    assert of_kind(recs, "reassoc", "sta5", "noop") and not of_kind(recs, "reassoc", "sta5", "start")


def test_legacy_sta_queues_frames_while_unassociated():
    raw = one_flow(scenario("scenario2", per_attempt_loss=0.0), "legacy_up", count=100)
    raw["roaming"] = [{"at_us": 10_100, "sta": "sta6", "link": "6A", "target_ap": "ap1"}]
    sim, recs = run(raw)
    queued = of_kind(recs, "queue", "sta6")
    assert len(queued) == 50
    f = sim.report()["flows"]["legacy_up"]
    assert f["delivered"] == 100 and f["lost"] == 0
    assert sim.net.nodes["sta6"].counters()["pending_app_frames"] == 0


def test_frames_for_another_mac_are_ignored():
    sim = build(lossless_s1(count=1), trace=True)
    sim.run()
    sta = sim.net.nodes["sta3"]
    from hrwifi.frames import Frame
    sim.net.metrics.offer(99, "up", 0)
    sta.on_air_receive("3A", Frame(da=MacAddress.parse("02:00:00:00:09:09"), sa=sta.identity_mac,
                                   frame_id=99, flow="up"))
    assert sta.delivered == 0
    assert sim.net.metrics.frames[99].dropped


def test_hr_sta_needs_two_links():
    raw = copy.deepcopy(lossless_s1())
    raw["stas"][0]["links"] = raw["stas"][0]["links"][:1]
    raw["flows"] = []
    with pytest.raises(ValueError):
        build(raw)
