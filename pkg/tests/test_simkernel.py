from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usdn_sim.simkernel import (
    EventQueue,
    FrameTooLarge,
    InterferenceSource,
    KeyedRng,
    LossCause,
    MacConfig,
    MacState,
    Medium,
    OutcomeKind,
    RadioNetwork,
    SchedulePast,
    broadcast,
    merge_intervals,
    radio_on_time,
    rdc,
    reception_cause,
    unicast,
)

US = 1_000_000
CFG = MacConfig()


def test_equal_times_run_fifo():
    q = EventQueue()
    seen = []
    q.schedule(5, seen.append, "A")
    q.schedule(5, seen.append, "B")
    q.schedule(3, seen.append, "C")
    assert q.run_until(10) == 3
    assert seen == ["C", "A", "B"]


def test_schedule_in_past_rejected():
    q = EventQueue()
    q.schedule(10, lambda: None)
    q.run_until(10)
    with pytest.raises(SchedulePast):
        q.schedule(9, lambda: None)


def test_run_until_is_inclusive_and_leaves_later_events():
    q = EventQueue()
    for t in (1, 2, 3):
        q.schedule(t, lambda: None)
    assert q.run_until(2) == 2 and len(q) == 1 and q.now == 2


def test_keyed_rng_is_a_pure_function():
    a, b = KeyedRng(42), KeyedRng(42)
    assert a.u("x", 1) == b.u("x", 1) != KeyedRng(43).u("x", 1)
    assert all(0 <= a.randint(2, 8, "k", i) <= 8 for i in range(1000))


def medium(d: float, p: float = 0.9, interferers=()):
    return Medium({1: (0.0, 0.0), 2: (d, 0.0)}, 100.0, p, interferers)


def test_out_of_range_is_lost_immediately():
    out = unicast(medium(120), CFG, KeyedRng(1), 1, 2, 40, 0)
    assert out.kind == OutcomeKind.LOST_CHANNEL and out.attempts == ()


def test_retry_algebra_monte_carlo():
    m, rng = medium(50, p=0.5), KeyedRng(3)
    n = 20_000
    ok = sum(unicast(m, CFG, rng, 1, 2, 40, 0, key=i).delivered for i in range(n))
    want = 1 - 0.5 ** (CFG.max_retries + 1)
    assert abs(ok / n - want) < 4 * (want * (1 - want) / n) ** 0.5


def test_attempt_timing_and_backoff():
    m = medium(50, p=0.0)
    out = unicast(m, CFG, KeyedRng(4), 1, 2, 40, 0)
    assert out.kind == OutcomeKind.EXCEEDED_RETRIES
    assert len(out.attempts) == CFG.max_retries + 1
    for k, (a, b) in enumerate(zip(out.attempts, out.attempts[1:]), start=1):
        gap = b.start - a.start - CFG.wake_interval
        assert CFG.backoff_min * k <= gap <= CFG.backoff_max * k
    for a in out.attempts:
        assert a.start <= a.rx_at < a.start + CFG.wake_interval


def test_interference_window_kills_reception():
    src = InterferenceSource((50.0, 10.0), range=50.0)
    m = medium(50, p=1.0, interferers=[src])
    rng = KeyedRng(5)
    assert reception_cause(m, rng, 0, 1, 2, 1, 3 * 100_000 + 14_999) == LossCause.INTERFERENCE
    assert reception_cause(m, rng, 0, 1, 2, 1, 3 * 100_000 + 15_000) is None
    # node 1 at the origin is outside the interferer's 50 m range
    assert reception_cause(m, rng, 0, 2, 1, 1, 5_000) is None


def test_interference_only_in_active_window_for_unicast():
    src = InterferenceSource((50.0, 10.0), range=50.0, phase=7_000)
    m = medium(50, p=1.0, interferers=[src])
    rng = KeyedRng(6)
    for i in range(3000):
        out = unicast(m, CFG, rng, 1, 2, 40, i * 37_000, key=i)
        for a in out.attempts:
            in_window = (a.rx_at - src.phase) % src.period < src.duration
            assert (a.cause == LossCause.INTERFERENCE) == in_window


@given(st.integers(0, 10**9), st.integers(0, 99_999))
def test_interferer_activity_is_periodic(t, phase):
    s = InterferenceSource((0.0, 0.0), phase=phase)
    assert s.active(t) == ((t - phase) % 100_000 < 15_000)
    assert s.active(t) == s.active(t + 100_000)


def test_broadcast_without_neighbors_still_costs_a_strobe():
    m = Medium({1: (0.0, 0.0), 2: (500.0, 0.0)})
    mac = {1: MacState(), 2: MacState()}
    assert broadcast(m, CFG, KeyedRng(1), 1, 40, 0, mac=mac) == {}
    assert mac[1].radio_on_intervals == [(0, CFG.wake_interval)]


def test_lossless_broadcast_reaches_every_neighbor():
    m = Medium({1: (0, 0), 2: (50, 0), 3: (0, 50), 4: (-50, 0)}, 100.0, 1.0)
    out = broadcast(m, CFG, KeyedRng(1), 1, 40, 0)
    assert sorted(out) == [2, 3, 4] and all(o.delivered for o in out.values())


def test_broadcast_delivery_rate():
    m, rng = medium(50), KeyedRng(9)
    n = 10_000
    ok = sum(broadcast(m, CFG, rng, 1, 40, 0, key=i)[2].delivered for i in range(n))
    assert abs(ok / n - 0.9) <= 0.01


def test_idle_node_duty_cycle():
    assert rdc(MacState(), (0, 3600 * US)) == pytest.approx(2 / 125, abs=1e-6)


def test_continuous_transmission_duty_cycle():
    mac = MacState()
    mac.radio_on(0, 10 * US)
    assert rdc(mac, (0, 10 * US)) == 1.0


def test_no_activity_duty_cycle():
    mac = MacState(channel_check=0)
    mac.radio_on(5, 5)
    assert rdc(mac, (0, US)) == 0.0


def test_rdc_window_must_be_positive():
    with pytest.raises(ValueError):
        rdc(MacState(), (5, 5))


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 400), st.integers(0, 60)), max_size=8),
    st.integers(0, 49), st.integers(0, 10), st.integers(0, 200), st.integers(1, 300),
)
def test_radio_on_time_matches_brute_force(spans, phase, check, t0, width):
    mac = MacState(wake_interval=50, channel_check=check, phase=phase)
    for s, ln in spans:
        mac.radio_on(s, s + ln)
    t1 = t0 + width
    on = set()
    for s, ln in spans:
        on.update(range(s, s + ln))
    # periodic checks: grid k*wake + phase, each ``check`` long (grid may start before 0)
    for k in range(-2, 20):
        start = phase + 50 * k
        on.update(range(start, start + check))
    want = sum(1 for t in range(t0, t1) if t in on)
    assert radio_on_time(mac, t0, t1) == want
    assert mac.approx_on_time(t1) >= radio_on_time(mac, 0, t1)


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100))))
def test_merged_intervals_are_disjoint_and_sorted(spans):
    merged = merge_intervals(spans)
    assert all(s < e for s, e in merged)
    assert all(a[1] < b[0] for a, b in zip(merged, merged[1:]))
    cover = {t for s, e in spans for t in range(s, e)}
    assert cover == {t for s, e in merged for t in range(s, e)}


# -- event-driven MAC ------------------------------------------------------------


def network(positions, p=1.0, **cfg):
    q = EventQueue()
    got, failed = [], []
    net = RadioNetwork(
        q, Medium(positions, 100.0, p), MacConfig(**cfg), KeyedRng(1),
        on_rx=lambda n, f, s, t: got.append((n, f.key, s, t)),
        on_fail=lambda n, f, nh, kind, t: failed.append((n, f.key, kind)),
    )
    return q, net, got, failed


def frame(key):
    return SimpleNamespace(key=key, size=100)


def test_network_unicast_and_broadcast():
    q, net, got, failed = network({1: (0, 0), 2: (50, 0), 3: (0, 60)})
    net.send(1, frame("u"), 2)
    net.send(1, frame("b"), None)
    q.run_until(US)
    assert ("u" in {k for n, k, s, t in got if n == 2})
    assert {n for n, k, s, t in got if k == "b"} == {2, 3}
    assert not failed


def test_network_queue_capacity():
    q, net, _, _ = network({1: (0, 0), 2: (50, 0)}, queue_capacity=2)
    results = [net.send(1, frame(i), 2) for i in range(4)]
    # first job starts at once, two more fit in the queue
    assert results == [True, True, True, False]


def test_network_reports_out_of_range_failure():
    q, net, got, failed = network({1: (0, 0), 2: (150, 0)})
    net.send(1, frame("x"), 2)
    q.run_until(US)
    assert failed == [(1, "x", OutcomeKind.LOST_CHANNEL)] and not got


def test_busy_receiver_misses_frame():
    q, net, got, failed = network({1: (0, 0), 2: (50, 0)}, p=1.0)
    # both strobe at each other at once: whoever is reached while strobing misses it
    net.send(1, frame("a"), 2)
    net.send(2, frame("b"), 1)
    q.run_until(5 * US)
    assert len(got) + len(failed) == 2


def test_oversized_frame_rejected_at_the_medium():
    q, net, _, _ = network({1: (0, 0), 2: (50, 0)})
    with pytest.raises(FrameTooLarge):
        net.send(1, SimpleNamespace(key="big", size=128), 2)
