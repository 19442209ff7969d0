from hypothesis import given, settings
from hypothesis import strategies as st

from usdn_sim.flowtable import Action, FlowEntry, Match, Tier, make_entry
from usdn_sim.node import (
    AppFlowSpec,
    AppFlowState,
    AppPacket,
    DispositionKind,
    DropReason,
    NodeSdnState,
    PENDING_CAP,
    PENDING_TIMEOUT,
    build_nsu,
    expire_pending,
    handle_frame,
    maybe_send_ftq,
    observe_rx,
    observe_tx,
    on_conf,
    on_fts,
    tick_node,
)
from usdn_sim.wire import (
    NSU_MAX_NEIGHBORS,
    Category,
    ConfBody,
    FlowKey,
    Frame,
    FtqBody,
    FtsBody,
    NsuBody,
    Proto,
    UsdnMessage,
    srh_insert,
    srh_next,
)

US = 1_000_000
ROOT = 1
S = 7


def app(flow_id: int = 1, src: int = S, dst: int = ROOT, uid: int = 1) -> Frame:
    return Frame(uid, src, dst, Proto.APP, "APP", Category.APP, bytes(20), flow_id=flow_id)


def joined(node_id: int = S, **conf) -> NodeSdnState:
    n = NodeSdnState(node_id, ROOT)
    on_conf(n, ConfBody(conf.get("nsu", 180), 600, conf.get("window", 1.0)), 0)
    return n


def route_entry(flow_id: int, hops, life=600) -> FlowEntry:
    return make_entry(
        FlowKey(ROOT, flow_id).match_fields(),
        [Action.srh_set(hops), Action.forward(hops[0])],
        lifetime=life,
    )


def test_transit_srh_forwarded_without_query():
    n = joined(5)
    f = srh_insert(app(), [5, 4, ROOT], origin=S)
    assert srh_next(f, S) == 5
    d = handle_frame(n, f, 0)
    assert d.kind == DispositionKind.FORWARD and d.next_hop == 4
    assert d.ftq is None and not n.pending


def test_miss_queues_frame_and_queries():
    n = joined()
    d = handle_frame(n, app(), 0)
    assert d.kind == DispositionKind.QUERY and d.ftq_emitted
    assert isinstance(d.ftq.body, FtqBody) and d.ftq.body.flow_key == FlowKey(ROOT, 1)
    assert len(n.pending) == 1


def test_drop_action():
    n = joined()
    on_fts(n, FtsBody((make_entry(FlowKey(ROOT, 1).match_fields(), [Action.drop()], lifetime=30),)), 0)
    d = handle_frame(n, app(), 1)
    assert d.kind == DispositionKind.DROP and d.reason == DropReason.POLICY


def test_pending_buffer_bound():
    n = joined()
    kinds = [handle_frame(n, app(uid=i), i).kind for i in range(PENDING_CAP + 2)]
    assert kinds[:PENDING_CAP] == [DispositionKind.QUERY] * PENDING_CAP
    d = handle_frame(n, app(uid=99), 10)
    assert d.kind == DispositionKind.DROP and d.reason == DropReason.BUFFER_FULL
    assert len(n.pending) == PENDING_CAP


def test_unjoined_node_uses_rpl_parent():
    n = NodeSdnState(S, ROOT)
    d = handle_frame(n, app(), 0, parent=5)
    assert d.kind == DispositionKind.FORWARD and d.next_hop == 5 and d.ftq is None


def test_control_traffic_rides_rpl():
    n = joined()
    f = Frame(1, S, ROOT, Proto.USDN, "NSU", Category.SDN_CBR, bytes(8))
    d = handle_frame(n, f, 0, parent=5)
    assert d.kind == DispositionKind.FORWARD and d.next_hop == 5


def test_cmq_throttles_per_flow():
    n = joined(window=1.0)
    k1, k2 = FlowKey(ROOT, 1), FlowKey(ROOT, 2)
    assert maybe_send_ftq(n, k1, app(1), 0) is not None
    assert maybe_send_ftq(n, k1, app(1), 500_000) is None
    assert maybe_send_ftq(n, k2, app(2), 500_000) is not None
    assert maybe_send_ftq(n, k1, app(1), 1_500_000) is not None


def test_ppq_sends_only_configured_bytes():
    n = joined()
    q = maybe_send_ftq(n, FlowKey(ROOT, 1), app(1), 0)
    assert [o for o, _ in q.body.partial_bytes] == [2, 3, 5]


def test_fts_releases_matching_frames_with_srh():
    n = joined()
    handle_frame(n, app(1, uid=1), 0)
    handle_frame(n, app(2, uid=2), 0)
    released = on_fts(n, FtsBody((route_entry(1, [5, 4, ROOT]),)), US)
    assert [f.uid for f in released] == [1]
    d = handle_frame(n, released[0], US)
    assert d.kind == DispositionKind.FORWARD and d.next_hop == 5
    assert d.frame.srh.hops == (5, 4, ROOT)
    assert [p.frame.uid for p in n.pending] == [2]


def test_fts_for_other_flow_releases_nothing():
    n = joined()
    handle_frame(n, app(1), 0)
    assert on_fts(n, FtsBody((route_entry(9, [5, ROOT]),)), 1) == []


def test_pending_times_out():
    n = joined()
    handle_frame(n, app(), 0)
    assert expire_pending(n, PENDING_TIMEOUT - 1) == []
    assert [f.uid for f in expire_pending(n, PENDING_TIMEOUT)] == [1]
    assert not n.pending


def test_conf_schedules_report_and_installs_defaults():
    n = NodeSdnState(S, ROOT)
    defaults = (
        make_entry([Match(4, 1, b"\x02")], [Action.fallback_rpl()], tier=Tier.WHITELIST, priority=1),
        make_entry([Match(2, 2, b"\x00\x07")], [Action.accept()], tier=Tier.WHITELIST),
    )
    assert on_conf(n, ConfBody(180, 600, default_entries=defaults), 100 * US)
    assert n.joined and n.hfs.live_count(100 * US) == 2
    # the first report acknowledges the join, the next comes one period later
    assert n.nsu_next == 100 * US
    out = tick_node(n, [], 100 * US)
    assert len(out) == 1 and isinstance(out[0].body, NsuBody)
    assert n.nsu_next == 280 * US


def test_duplicate_conf_restarts_timer():
    n = joined()
    assert not on_conf(n, ConfBody(60, 600), 50 * US)
    assert n.nsu_next == 110 * US and n.conf.nsu_period == 60


def test_nsu_count_over_an_hour():
    n = joined(nsu=180)
    count = 0
    for t in range(0, 3600):
        count += sum(isinstance(m, UsdnMessage) for m in tick_node(n, [], t * US))
    assert count == 20


def test_unjoined_node_sends_no_reports():
    n = NodeSdnState(S, ROOT)
    assert all(not isinstance(m, UsdnMessage) for t in range(3600) for m in tick_node(n, [], t * US))


def test_app_interval_range_over_an_hour():
    spec = AppFlowSpec(1, S, ROOT, (60.0, 75.0))

    class Rng:
        def __init__(self):
            self.k = 0

        def u(self, *key):
            self.k += 1
            return (self.k * 0.618) % 1.0

    state = AppFlowState(spec, 0)
    n = NodeSdnState(S, ROOT)
    sent = [m for t in range(3600) for m in tick_node(n, [state], t * US, Rng()) if isinstance(m, AppPacket)]
    assert 48 <= len(sent) <= 60


def test_nsu_keeps_strongest_links():
    n = joined()
    for nbr in range(2, 2 + NSU_MAX_NEIGHBORS + 5):
        observe_rx(n, nbr, 0)
        for _ in range(nbr):
            observe_tx(n, nbr, nbr % 2 == 0, 0)
    msg = build_nsu(n)
    assert len(msg.body.neighbors) == NSU_MAX_NEIGHBORS
    q = [lq for _, lq in msg.body.neighbors]
    assert q == sorted(q, reverse=True)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5_000_000), st.integers(1, 3)), max_size=40))
def test_cmq_bound_holds_for_any_miss_pattern(misses):
    n = joined(window=1.0)
    sent: dict[int, list[int]] = {}
    t = 0
    for dt, flow in misses:
        t += dt // 10
        if maybe_send_ftq(n, FlowKey(ROOT, flow), app(flow), t) is not None:
            sent.setdefault(flow, []).append(t)
    for times in sent.values():
        assert all(b - a >= US for a, b in zip(times, times[1:]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 4), max_size=30))
def test_pending_never_exceeds_cap(flows):
    n = joined()
    for i, f in enumerate(flows):
        handle_frame(n, app(f, uid=i), i)
        assert len(n.pending) <= PENDING_CAP
