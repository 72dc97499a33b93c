import pytest
from hypothesis import given, settings, strategies as st

from hrwifi import build
from hrwifi.channel import WiredLink, WiredPort, WirelessLink, WirelessParams, draw_outcome
from hrwifi.engine import US, Engine, RngStream
from hrwifi.frames import Frame, MacAddress

from helpers import one_flow, scenario
from oracles import arq_drop_probability, arq_drop_time, arq_success_time, within_sigma

MAC = MacAddress.parse("02:00:00:00:03:0a")


class Scripted:
    """RNG stand-in that returns queued values."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def frame(i=0):
    return Frame(da=MAC, sa=MAC, frame_id=i)


def run_link(params, rng, frames, start=0):
    eng = Engine()
    link = WirelessLink("L", params, rng, eng)
    got, lost = [], []
    eng.schedule(start, lambda: [link.transmit(f, lambda f: got.append((f.frame_id, eng.now)),
                                               lambda f, why: lost.append((f.frame_id, eng.now, why)))
                                 for f in frames])
    eng.run(10**15)
    return link, got, lost


def test_lossless_link_delivers_after_one_airtime():
    p = WirelessParams(per_attempt_loss=0.0)
    _, got, _ = run_link(p, RngStream(1, "x"), [frame()], start=1000)
    assert got == [(0, 1000 + 300 * US)]


def test_certain_loss_drops_after_all_attempts():
    p = WirelessParams(per_attempt_loss=1.0, retry_limit=3)
    link, got, lost = run_link(p, RngStream(1, "x"), [frame()])
    assert got == [] and lost == [(0, arq_drop_time(0, 3, 300 * US, 100 * US), "mac_drop")]
    assert link.attempts == 4 and link.mac_drops == 1


@settings(max_examples=100, deadline=None)
@given(k=st.integers(1, 8), now=st.integers(0, 10**9), air=st.integers(1, 2000), ack=st.integers(0, 500))
def test_success_time_formula(k, now, air, ack):
    params = WirelessParams(per_attempt_loss=0.5, retry_limit=7, attempt_airtime=air, ack_timeout=ack)
    draws = [0.1] * (k - 1) + [0.9]  # a draw below p is a lost attempt
    out = draw_outcome(params, Scripted(draws), now)
    assert out.delivered and out.attempts == k
    assert out.at == arq_success_time(now, k, air, ack)
    assert out.airtime == k * air


def test_fifo_queueing_on_one_radio():
    p = WirelessParams(per_attempt_loss=0.5, retry_limit=1)
    # frame 0: fail then success; frame 1: success
    link, got, _ = run_link(p, Scripted([0.1, 0.9, 0.9]), [frame(0), frame(1)])
    t0 = arq_success_time(0, 2, 300 * US, 100 * US)
    assert got == [(0, t0), (1, t0 + 300 * US)]


@pytest.mark.parametrize("p,R", [(0.2, 2), (0.5, 0)])
def test_residual_drop_ratio_matches_oracle(p, R):
    n = 100_000
    rng = RngStream(11, f"mc:{p}:{R}")
    params = WirelessParams(per_attempt_loss=p, retry_limit=R)
    drops = sum(not draw_outcome(params, rng, 0).delivered for _ in range(n))
    assert within_sigma(drops, n, arq_drop_probability(p, R))


def test_abort_before_completion_cancels_delivery():
    eng = Engine()
    link = WirelessLink("L", WirelessParams(per_attempt_loss=0.0), RngStream(1, "x"), eng)
    got, why = [], []
    link.transmit(frame(3), got.append, lambda f, w: why.append(w))
    eng.schedule(100 * US, lambda: why.append(link.abort(3)))
    eng.run(10**9)
    assert got == [] and why == ["aborted", True]
    assert link.aborted == 1 and link.airtime == 100 * US and link.attempts == 1


def test_abort_after_delivery_is_too_late():
    eng = Engine()
    link = WirelessLink("L", WirelessParams(per_attempt_loss=0.0), RngStream(1, "x"), eng)
    got = []
    link.transmit(frame(3), got.append, lambda f, w: None)
    eng.run(10**9)
    assert link.abort(3) is False and len(got) == 1


def test_abort_removes_queued_copy_and_starts_next():
    eng = Engine()
    link = WirelessLink("L", WirelessParams(per_attempt_loss=0.0), RngStream(1, "x"), eng)
    got = []
    for i in range(3):
        link.transmit(frame(i), lambda f: got.append((f.frame_id, eng.now)), lambda f, w: None)
    assert link.abort(1)
    eng.run(10**9)
    assert got == [(0, 300 * US), (2, 600 * US)]


def test_cross_link_abort_saves_airtime_same_seed():
    raw = one_flow(scenario("scenario1", per_attempt_loss=0.3, retry_limit=7), "up", count=2000)
    air = {}
    for abort in (False, True):
        r = dict(raw, options=dict(raw["options"], cross_link_abort=abort))
        sim = build(r, seed=5)
        sim.run()
        air[abort] = sum(l.airtime for l in sim.net.radios.values())
        assert sim.report()["flows"]["up"]["lost"] == 0
    assert air[True] < air[False]


def test_wired_link_is_lossless_with_fixed_latency():
    eng = Engine()
    seen = []

    class End:
        def __init__(self, name):
            self.name = name

        def on_wired_receive(self, f, port):
            seen.append((self.name, f.frame_id, eng.now))

    a, b = End("a"), End("b")
    pa, pb = WiredPort(a, "a0"), WiredPort(b, "b0")
    WiredLink(pa, pb, 10 * US, eng)
    for i in range(100):
        eng.schedule(i, pa.send, frame(i))
    eng.schedule(5, pb.send, frame(999))
    eng.run(10**9)
    assert sorted(x[1] for x in seen if x[0] == "b") == list(range(100))
    assert all(t == fid + 10 * US for n, fid, t in seen if n == "b")
    assert ("a", 999, 5 + 10 * US) in seen


def test_params_validation():
    for bad in (dict(per_attempt_loss=1.5), dict(retry_limit=-1), dict(attempt_airtime=0)):
        with pytest.raises(ValueError):
            WirelessParams(**bad)
