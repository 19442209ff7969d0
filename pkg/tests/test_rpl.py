import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usdn_sim.rpl import (
    INFINITE_RANK,
    MIN_HOP_RANK_INCREASE,
    ROOT_RANK,
    DaoRouteTable,
    DodagState,
    NoRoute,
    RplKind,
    RplMessage,
    RplTimers,
    on_dao,
    on_dio,
    on_dis,
    root_source_route,
    tick_rpl,
)

US = 1_000_000
ROOT = 1


def kinds(emissions):
    return [e.msg.kind for e in emissions]


def test_join_from_root_dio():
    st_ = DodagState(7)
    res = on_dio(st_, ROOT, ROOT_RANK, 5 * US)
    assert st_.rank == 512 and st_.preferred_parent == ROOT
    assert res.parent_changed
    assert RplKind.DAO in kinds(res.emit)
    dao = next(e for e in res.emit if e.msg.kind == RplKind.DAO)
    assert (dao.msg.child, dao.msg.parent) == (7, ROOT)


def test_lowest_rank_parent_wins():
    s = DodagState(9)
    on_dio(s, 4, 768, 0)
    on_dio(s, 3, 512, 1)
    assert s.preferred_parent == 3 and s.rank == 768


def test_rank_tie_goes_to_lowest_id():
    s = DodagState(9)
    on_dio(s, 6, 512, 0)
    on_dio(s, 5, 512, 1)
    assert s.preferred_parent == 5


def test_infinite_rank_dio_removes_candidate():
    s = DodagState(9)
    on_dio(s, 5, 512, 0)
    on_dio(s, 6, 768, 0)
    on_dio(s, 5, INFINITE_RANK, 1)
    assert s.preferred_parent == 6 and s.rank == 1024


def test_triggered_dao_delay():
    s = DodagState(9)
    res = on_dio(s, ROOT, ROOT_RANK, 100, dao_delay=2 * US)
    dao = next(e for e in res.emit if e.msg.kind == RplKind.DAO)
    assert dao.at == 100 + 2 * US


def test_joined_node_answers_dis_once_per_window():
    s = DodagState(9)
    on_dio(s, ROOT, ROOT_RANK, 0)
    first = on_dis(s, 3, 10 * US, 300_000)
    assert kinds(first) == [RplKind.DIO] and first[0].at == 10 * US + 300_000
    assert on_dis(s, 4, 10 * US + 100_000, 200_000) == []
    assert len(on_dis(s, 4, 11 * US, 200_000)) == 1


def test_unjoined_node_ignores_dis():
    assert on_dis(DodagState(9), 3, 0, 100_000) == []


def test_unjoined_node_solicits_every_dis_period():
    s = DodagState(9, timers=RplTimers(dis_period=10 * US))
    s.dis_next = 10 * US
    out = []
    for t in range(0, 31 * US, US):
        out += tick_rpl(s, t)
    assert kinds(out) == [RplKind.DIS] * 3


def test_root_never_solicits():
    root = DodagState(ROOT, is_root=True)
    out = []
    for t in range(0, 100 * US, US):
        out += tick_rpl(root, t)
    assert RplKind.DIS not in kinds(out)


def test_joined_node_reports_every_dao_period():
    s = DodagState(9)
    on_dio(s, ROOT, ROOT_RANK, 0)
    daos = [e for t in range(1, 3601) for e in tick_rpl(s, t * US) if e.msg.kind == RplKind.DAO]
    assert len(daos) == 12
    gaps = {b.at - a.at for a, b in zip(daos, daos[1:])}
    assert gaps == {300 * US}


def test_first_dao_reachable_then_refresh():
    t = DaoRouteTable(ROOT)
    assert on_dao(t, RplMessage.dao(4, ROOT), 0).newly_reachable
    assert on_dao(t, RplMessage.dao(7, 4), 0).newly_reachable
    again = on_dao(t, RplMessage.dao(7, 4), 100 * US)
    assert again.accepted and not again.newly_reachable
    assert t.routes[7].expires == 700 * US


def test_expired_route_becomes_new_again():
    t = DaoRouteTable(ROOT)
    on_dao(t, RplMessage.dao(4, ROOT), 0)
    assert on_dao(t, RplMessage.dao(4, ROOT), 600 * US).newly_reachable


def test_dao_cycle_rejected():
    t = DaoRouteTable(ROOT)
    on_dao(t, RplMessage.dao(7, 4), 0)
    res = on_dao(t, RplMessage.dao(4, 7), 0)
    assert not res.accepted and t.rejected == 1
    assert 4 not in t.routes


def test_source_route_walks_chain():
    S = 9
    t = DaoRouteTable(ROOT)
    for child, parent in ((4, ROOT), (5, 4), (S, 5)):
        on_dao(t, RplMessage.dao(child, parent), 0)
    assert root_source_route(t, S, 1) == [4, 5, S]


def test_source_route_to_root_is_empty():
    assert root_source_route(DaoRouteTable(ROOT), ROOT, 0) == []


def test_source_route_expired():
    t = DaoRouteTable(ROOT)
    on_dao(t, RplMessage.dao(4, ROOT), 0)
    with pytest.raises(NoRoute):
        root_source_route(t, 4, 600 * US)


def test_source_route_unknown():
    with pytest.raises(NoRoute):
        root_source_route(DaoRouteTable(ROOT), 4, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 20).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.integers(0, 10**6), min_size=n - 1, max_size=n - 1))))
def test_random_tree_routes_reverse_parent_chain(data):
    n, picks = data
    # node k (2..n) picks a parent among 1..k-1
    parent = {k: 1 + picks[k - 2] % (k - 1) for k in range(2, n + 1)}
    t = DaoRouteTable(ROOT)
    for k in range(2, n + 1):
        assert on_dao(t, RplMessage.dao(k, parent[k]), 0).accepted
    for k in range(2, n + 1):
        chain, cur = [], k
        while cur != ROOT:
            chain.append(cur)
            cur = parent[k] if cur == k else parent[cur]
        assert root_source_route(t, k, 1) == chain[::-1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 12), st.integers(1, 4)), min_size=1, max_size=12))
def test_rank_is_parent_rank_plus_increase(dios):
    s = DodagState(20)
    for src, level in dios:
        on_dio(s, src, level * MIN_HOP_RANK_INCREASE, 0)
        assert s.rank == s.candidates[s.preferred_parent] + MIN_HOP_RANK_INCREASE
        assert s.candidates[s.preferred_parent] == min(s.candidates.values())
