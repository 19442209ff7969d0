"""Embedded controller at the DODAG root.

It learns the topology from DAOs and NSUs, answers each newly reachable node
with CONF, and answers flowtable queries with source-routed FTS entries
chosen by per-flow policy.
"""

from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .flowtable import Action, FlowEntry, Match, Tier
from .node import Features, Priority
from .rpl import DaoResult, DaoRouteTable, NoRoute, RplMessage, on_dao, root_source_route
from .wire import (
    DEFAULT_PPQ_FIELDS,
    OFF_DST,
    OFF_FLOW,
    OFF_PROTO,
    PAYLOAD_BUDGET,
    SRH_MAX_HOPS,
    ConfBody,
    FlowKey,
    FtqBody,
    FtsBody,
    NsuBody,
    Proto,
    SeqTracker,
    UsdnMessage,
    encoded_len,
    next_seq,
    srh_cost,
)

log = logging.getLogger(__name__)

US = 1_000_000
ERR_ENTRY_LIFETIME = 30  # seconds
CONF_RESEND_FACTOR = 1.5
CONF_RETRY_US = 10 * US
CONF_MAX_RETRIES = 5


class NoPath(Exception):
    pass


class PolicyMode(enum.Enum):
    SHORTEST = "SHORTEST"
    PIN = "PIN"
    AVOID = "AVOID"


@dataclass(frozen=True)
class PolicyRule:
    flow: FlowKey | None = None  # None matches every flow
    mode: PolicyMode = PolicyMode.SHORTEST
    path: tuple[int, ...] = ()
    avoid: frozenset[int] = frozenset()
    priority: Priority = Priority.LOW

    def matches(self, key: FlowKey) -> bool:
        return self.flow is None or self.flow == key


DEFAULT_RULE = PolicyRule()


@dataclass(frozen=True)
class FlowPolicy:
    rules: tuple[PolicyRule, ...] = ()

    def rule_for(self, key: FlowKey) -> PolicyRule:
        for r in self.rules:
            if r.matches(key):
                return r
        return DEFAULT_RULE


@dataclass
class LinkStat:
    quality: float
    last_seen: int


@dataclass
class NodeInfo:
    energy: int = 0
    buffer_occupancy: int = 0
    joined: bool = False
    last_nsu: int | None = None
    conf_sent_at: int | None = None
    conf_retries: int = 0
    confirmed: bool = False


@dataclass
class TopologyView:
    controller: int
    nsu_period: int = 180 * US
    dao_routes: DaoRouteTable | None = None
    links: dict[tuple[int, int], LinkStat] = field(default_factory=dict)
    nodes: dict[int, NodeInfo] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dao_routes is None:
            self.dao_routes = DaoRouteTable(self.controller)
        self.nodes.setdefault(self.controller, NodeInfo(joined=True, confirmed=True))

    @property
    def link_stale(self) -> int:
        return 2 * self.nsu_period

    def node(self, n: int) -> NodeInfo:
        info = self.nodes.get(n)
        if info is None:
            info = self.nodes[n] = NodeInfo()
        return info

    def note_link(self, a: int, b: int, quality: float | None, now: int) -> None:
        k = (a, b) if a < b else (b, a)
        st = self.links.get(k)
        if st is None:
            self.links[k] = LinkStat(1.0 if quality is None else quality, now)
        else:
            if quality is not None:
                st.quality = quality
            st.last_seen = now

    def adjacency(self, now: int, exclude: Iterable[int] = ()) -> dict[int, dict[int, float]]:
        drop = set(exclude)
        adj: dict[int, dict[int, float]] = {}
        for (a, b), st in self.links.items():
            if now - st.last_seen >= self.link_stale or a in drop or b in drop:
                continue
            adj.setdefault(a, {})[b] = st.quality
            adj.setdefault(b, {})[a] = st.quality
        return adj

    def has_link(self, a: int, b: int, now: int) -> bool:
        st = self.links.get((a, b) if a < b else (b, a))
        return st is not None and now - st.last_seen < self.link_stale


def _search(adj: dict[int, dict[int, float]], src: int, dst: int, weighted: bool) -> list[int]:
    """Cheapest path by hops (or 1/quality), ties to the smallest node sequence."""
    if src == dst:
        return []
    heap: list[tuple[float, tuple[int, ...], int]] = [(0, (), src)]
    done = set()
    while heap:
        cost, path, n = heapq.heappop(heap)
        if n in done:
            continue
        done.add(n)
        if n == dst:
            return list(path)
        for m, q in adj.get(n, {}).items():
            if m in done:
                continue
            step = 1.0 / max(q, 1e-3) if weighted else 1
            heapq.heappush(heap, (cost + step, path + (m,), m))
    raise NoPath(f"no path from {src} to {dst}")


def compute_path(
    view: TopologyView, rule: PolicyRule, src: int, dst: int, now: int, weighted: bool = False
) -> list[int]:
    """Path from ``src`` to ``dst`` under ``rule``; excludes src, includes dst."""
    if rule.mode == PolicyMode.PIN:
        path = list(rule.path)
        if src in path:
            path = path[path.index(src) + 1:]
        if not path or path[-1] != dst:
            raise NoPath(f"pinned path {rule.path} does not lead {src} to {dst}")
        prev = src
        for hop in path:
            if not view.has_link(prev, hop, now):
                raise NoPath(f"pinned path uses unknown link {prev}-{hop}")
            prev = hop
        return path
    avoid = rule.avoid if rule.mode == PolicyMode.AVOID else frozenset()
    if src in avoid or dst in avoid:
        raise NoPath(f"endpoint of {src}->{dst} is avoided")
    path = _search(view.adjacency(now, avoid), src, dst, weighted)
    if len(path) > SRH_MAX_HOPS:
        raise NoPath(f"path {src}->{dst} longer than {SRH_MAX_HOPS} hops")
    return path


# -- controller state ----------------------------------------------------------


@dataclass(frozen=True)
class Outbound:
    """A message for ``dest``, source-routed from the root over ``route``."""

    dest: int
    msg: UsdnMessage
    route: tuple[int, ...]


@dataclass
class Controller:
    node_id: int
    view: TopologyView
    policy: FlowPolicy = field(default_factory=FlowPolicy)
    features: Features = field(default_factory=Features)
    nsu_period_s: int = 180
    ft_lifetime_s: int = 600
    throttle_window_s: float = 1.0
    ppq_fields: tuple[tuple[int, int], ...] = DEFAULT_PPQ_FIELDS
    weighted_paths: bool = False
    seq: int = 0
    dup: SeqTracker = field(default_factory=SeqTracker)
    duplicates: int = 0

    def take_seq(self) -> int:
        s = self.seq
        self.seq = next_seq(s)
        return s


def make_controller(
    node_id: int,
    dao_routes: DaoRouteTable,
    policy: FlowPolicy | None = None,
    features: Features | None = None,
    nsu_period_s: int = 180,
    ft_lifetime_s: int = 600,
    throttle_window_s: float = 1.0,
    ppq_fields: Sequence[tuple[int, int]] = DEFAULT_PPQ_FIELDS,
    weighted_paths: bool = False,
) -> Controller:
    view = TopologyView(node_id, nsu_period_s * US, dao_routes)
    return Controller(
        node_id, view, policy or FlowPolicy(), features or Features(), nsu_period_s,
        ft_lifetime_s, throttle_window_s, tuple(ppq_fields), weighted_paths,
    )


def default_entries(ctrl: Controller, node: int) -> tuple[FlowEntry, ...]:
    to_ctrl = FlowEntry(
        Tier.WHITELIST, 1,
        (Match(OFF_PROTO, 1, bytes((int(Proto.USDN),))), Match(OFF_DST, 2, ctrl.node_id.to_bytes(2, "big"))),
        (Action.fallback_rpl(),),
    )
    to_self = FlowEntry(
        Tier.WHITELIST, 0, (Match(OFF_DST, 2, node.to_bytes(2, "big")),), (Action.accept(),)
    )
    return (to_ctrl, to_self)


def _fits(msg: UsdnMessage, route: Sequence[int]) -> bool:
    extra = srh_cost(len(route)) if route else 0
    try:
        return encoded_len(msg) + extra <= PAYLOAD_BUDGET
    except ValueError:
        return False


def build_conf(ctrl: Controller, node: int, route: Sequence[int]) -> list[UsdnMessage]:
    """CONF for ``node``, split so every piece fits next to its routing header.

    A default entry that cannot fit even alone is left out.
    """

    def body(entries) -> ConfBody:
        return ConfBody(
            ctrl.nsu_period_s, ctrl.ft_lifetime_s, ctrl.throttle_window_s,
            ctrl.ppq_fields if ctrl.features.ppq else (), tuple(entries),
        )

    pieces: list[list[FlowEntry]] = []
    cur: list[FlowEntry] = []
    for e in default_entries(ctrl, node):
        if _fits(UsdnMessage(0, ctrl.node_id, body(cur + [e])), route):
            cur.append(e)
            continue
        if not _fits(UsdnMessage(0, ctrl.node_id, body([e])), route):
            # too deep for this entry; the node still gets its settings
            log.warning("default entry for node %d does not fit a CONF over %d hops", node, len(route))
            continue
        pieces.append(cur)
        cur = [e]
    pieces.append(cur)
    return [UsdnMessage(ctrl.take_seq(), ctrl.node_id, body(p)) for p in pieces]


def ctrl_on_dao(ctrl: Controller, dao: RplMessage, now: int) -> tuple[DaoResult, list[Outbound]]:
    """Feed a DAO to the root table; CONF the node when it becomes reachable.

    A node that has not been heard from since its last CONF is sent another
    one once 1.5 NSU periods have passed, so a lost CONF does not strand it.
    """
    view = ctrl.view
    res = on_dao(view.dao_routes, dao, now)
    if not res.accepted:
        return res, []
    view.note_link(dao.child, dao.parent, None, now)
    info = view.node(dao.child)
    info.joined = True
    resend = not info.confirmed and (
        info.conf_sent_at is None
        or now - info.conf_sent_at >= CONF_RESEND_FACTOR * ctrl.nsu_period_s * US
    )
    if not (res.newly_reachable or resend):
        return res, []
    try:
        route = root_source_route(view.dao_routes, dao.child, now)
    except NoRoute:
        return res, []
    info.conf_sent_at = now
    info.conf_retries = 0
    return res, [Outbound(dao.child, m, tuple(route)) for m in build_conf(ctrl, dao.child, route)]


def ctrl_conf_retry(ctrl: Controller, node: int, now: int) -> list[Outbound]:
    """Resend CONF to a node that has not reported since its last one.

    A joining node answers CONF with an immediate NSU, so silence after
    CONF_RETRY_US most likely means the CONF was lost. After
    CONF_MAX_RETRIES the DAO-driven resend takes over.
    """
    info = ctrl.view.nodes.get(node)
    if info is None or info.confirmed or info.conf_retries >= CONF_MAX_RETRIES:
        return []
    if info.conf_sent_at is not None and now - info.conf_sent_at < CONF_RETRY_US:
        return []
    try:
        route = root_source_route(ctrl.view.dao_routes, node, now)
    except NoRoute:
        return []
    info.conf_sent_at = now
    info.conf_retries += 1
    return [Outbound(node, m, tuple(route)) for m in build_conf(ctrl, node, route)]


def ctrl_on_nsu(ctrl: Controller, msg: UsdnMessage, now: int) -> None:
    body = msg.body
    if not isinstance(body, NsuBody):
        raise TypeError("expected an NSU")
    view = ctrl.view
    info = view.node(msg.src)
    info.energy = body.energy
    info.buffer_occupancy = body.buffer_occupancy
    info.last_nsu = now
    info.confirmed = True
    for nbr, lq in body.neighbors:
        view.note_link(msg.src, nbr, lq / 255, now)


def resolve_flow_key(ftq: FtqBody) -> FlowKey:
    """Rebuild the flow identity from the query's packet bytes when they cover it."""
    got = dict(ftq.partial_bytes)
    if all(o in got for o in (OFF_DST, OFF_DST + 1, OFF_FLOW)):
        dest = (got[OFF_DST] << 8) | got[OFF_DST + 1]
        if dest:
            return FlowKey(dest, got[OFF_FLOW])
    return ftq.flow_key


def ctrl_on_ftq(ctrl: Controller, msg: UsdnMessage, now: int) -> list[Outbound]:
    body = msg.body
    if not isinstance(body, FtqBody):
        raise TypeError("expected an FTQ")
    view = ctrl.view
    view.node(msg.src).confirmed = True
    try:
        route = tuple(root_source_route(view.dao_routes, msg.src, now))
    except NoRoute:
        return []
    key = resolve_flow_key(body)
    rule = ctrl.policy.rule_for(key)
    matches = key.match_fields()
    try:
        if key.dest not in view.nodes:
            raise NoPath(f"unknown destination {key.dest}")
        path = compute_path(view, rule, msg.src, key.dest, now, ctrl.weighted_paths)
        if not path:
            raise NoPath("flow is addressed to its own requester")
    except NoPath:
        entry = FlowEntry(Tier.MAIN, int(rule.priority), matches, (Action.drop(),), ERR_ENTRY_LIFETIME)
        return [Outbound(msg.src, UsdnMessage(ctrl.take_seq(), ctrl.node_id, FtsBody((entry,))), route)]
    fr = ctrl.features.fr and rule.priority == Priority.HIGH
    forward_only = FlowEntry(
        Tier.MAIN, int(rule.priority), matches, (Action.forward(path[0]),), ctrl.ft_lifetime_s, fr
    )
    entry = forward_only
    if ctrl.features.srhi and len(path) > 1:
        entry = FlowEntry(
            Tier.MAIN, int(rule.priority), matches,
            (Action.srh_set(path), Action.forward(path[0])), ctrl.ft_lifetime_s, fr,
        )
    out = UsdnMessage(ctrl.take_seq(), ctrl.node_id, FtsBody((entry,)))
    if not _fits(out, route):
        out = UsdnMessage(out.seq, ctrl.node_id, FtsBody((forward_only,)))
    return [Outbound(msg.src, out, route)]


def accept_message(ctrl: Controller, msg: UsdnMessage) -> bool:
    """Duplicate filter on (source, sequence)."""
    if ctrl.dup.is_duplicate(msg.src, msg.seq):
        ctrl.duplicates += 1
        return False
    return True
