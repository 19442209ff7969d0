import pytest

from oracles import naive_flow_stats
from usdn_sim.metrics import (
    CATEGORIES,
    InconsistentLog,
    MetricsLog,
    Record,
    RecordKind,
    compute_metrics,
    jitter,
    percentile,
)

US = 1_000_000
FLOW = (2, 1, 2)


def app_log(n_sent: int, delivered: dict[int, float], drop_reason="ExceededRetries") -> MetricsLog:
    log = MetricsLog(meta={"duration": 100 * US, "nodes": [1, 2], "root": 1, "hops": {1: 0, 2: 1}})
    for uid in range(1, n_sent + 1):
        t = uid * US
        log.append(Record(t, RecordKind.SEND, 2, uid, "APP", "APP", FLOW, 30))
        if uid in delivered:
            log.append(Record(t + round(delivered[uid] * US), RecordKind.DELIVER, 1, uid, "APP", "APP", FLOW))
        else:
            log.append(Record(t + 1, RecordKind.DROP, 2, uid, "APP", "APP", FLOW, reason=drop_reason))
    return log


def test_pdr_nine_of_ten():
    rep = compute_metrics(app_log(10, {u: 0.1 for u in range(1, 10)}))
    assert rep.summary["pdr"] == pytest.approx(0.9)
    assert rep.summary["app_dropped"] == 1 and rep.summary["drop_ExceededRetries"] == 1


def test_jitter_definition():
    assert jitter([0.10, 0.12, 0.11]) == pytest.approx(0.015)
    assert jitter([0.5]) is None and jitter([]) is None


def test_jitter_uses_send_order():
    rep = compute_metrics(app_log(3, {1: 0.10, 2: 0.12, 3: 0.11}))
    assert rep.flow(2, 2)["jitter_s"] == pytest.approx(0.015)
    assert rep.flow(2, 2)["mean_latency_s"] == pytest.approx(0.11)


def test_percentile():
    assert percentile([], 50) is None
    assert percentile([3.0], 95) == 3.0
    assert percentile([1, 2, 3, 4], 50) == pytest.approx(2.5)
    assert percentile([4, 1, 3, 2], 100) == 4


def test_unterminated_send_is_inconsistent():
    log = app_log(2, {1: 0.1, 2: 0.1})
    log.records.pop()
    with pytest.raises(InconsistentLog):
        compute_metrics(log)


def test_double_terminal_is_inconsistent():
    log = app_log(1, {1: 0.1})
    log.append(Record(5 * US, RecordKind.DROP, 2, 1, "APP", "APP", FLOW, reason="Policy"))
    with pytest.raises(InconsistentLog):
        compute_metrics(log)


def test_unknown_drop_reason_is_inconsistent():
    with pytest.raises(InconsistentLog):
        compute_metrics(app_log(1, {}, drop_reason="Gremlins"))


def test_empty_log():
    rep = compute_metrics(MetricsLog())
    assert rep.summary["pdr"] is None and rep.per_node == []


def test_report_matches_naive_aggregator(small_run):
    rep, log = small_run
    want = naive_flow_stats(log.records)
    assert len(rep.per_flow) == len(want) > 0
    for row in rep.per_flow:
        w = want[(row["source"], row["dest"], row["flow_id"])]
        assert (row["sent"], row["delivered"]) == (w["sent"], w["delivered"])
        for got, exp in ((row["mean_latency_s"], w["mean"]), (row["jitter_s"], w["jitter"])):
            assert got == exp or got == pytest.approx(exp, abs=1e-12)


def test_conservation_in_real_run(small_run):
    rep, _ = small_run
    s = rep.summary
    assert s["app_sent"] == s["app_delivered"] + s["app_dropped"]


def test_traffic_categories(small_run):
    rep, log = small_run
    assert [r["category"] for r in rep.traffic] == list(CATEGORIES)
    assert abs(sum(r["packet_fraction"] for r in rep.traffic) - 1) <= 1e-9
    assert abs(sum(r["byte_fraction"] for r in rep.traffic) - 1) <= 1e-9
    assert all(r.category in CATEGORIES for r in log.of(RecordKind.SEND))


def test_ring_rows_cover_non_root_nodes(small_run):
    rep, _ = small_run
    assert sum(r["nodes"] for r in rep.per_ring) == len(rep.per_node) - 1
    assert sum(r["app_sent"] for r in rep.per_ring) == rep.summary["app_sent"]
