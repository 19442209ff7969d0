"""Per-node SDN engine: join, table-driven forwarding, throttled queries, reports."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .flowtable import (
    DEFAULT_CAPACITY,
    DEFAULT_LOOKUP_COST_US,
    ActionKind,
    HfsTable,
    TableFull,
    install,
    lookup,
    purge_expired,
)
from .wire import (
    DEFAULT_PPQ_FIELDS,
    DELIVERED,
    LINK_OVERHEAD,
    MTU,
    NSU_MAX_NEIGHBORS,
    PPQ_MAX_FIELDS,
    ConfBody,
    FlowKey,
    Frame,
    FtqBody,
    FtsBody,
    MtuExceeded,
    NsuBody,
    Proto,
    RouteDesync,
    UsdnMessage,
    extract_ppq,
    next_seq,
    srh_insert,
    srh_next,
)

US = 1_000_000
PENDING_CAP = 4
PENDING_TIMEOUT = 5 * US
LINK_EWMA = 0.1


class Priority(enum.IntEnum):
    LOW = 0
    HIGH = 1


@dataclass(frozen=True)
class Features:
    srhi: bool = True
    cmq: bool = True
    ppq: bool = True
    fr: bool = True


@dataclass(frozen=True)
class AppFlowSpec:
    flow_id: int
    source: int
    dest: int
    interval: tuple[float, float]  # seconds; lo == hi means fixed
    priority: Priority = Priority.LOW
    payload_len: int = 20
    start: float = 0.0
    stop: float | None = None

    def __post_init__(self) -> None:
        lo, hi = self.interval
        if lo <= 0 or hi < lo:
            raise ValueError(f"flow {self.flow_id}: interval must satisfy 0 < lo <= hi")
        if not 0 <= self.flow_id <= 0xFF:
            raise ValueError(f"flow id {self.flow_id} does not fit 8 bits")
        if self.payload_len < 0 or LINK_OVERHEAD + self.payload_len > MTU:
            raise ValueError(f"flow {self.flow_id}: payload {self.payload_len} B exceeds the frame")

    @property
    def key(self) -> FlowKey:
        return FlowKey(self.dest, self.flow_id)

    def sample_interval(self, u: float) -> int:
        lo, hi = self.interval
        return max(1, round((lo + (hi - lo) * u) * US))


@dataclass
class AppFlowState:
    spec: AppFlowSpec
    next_at: int
    seq: int = 0


@dataclass(frozen=True)
class AppPacket:
    spec: AppFlowSpec
    seq: int
    at: int


class DispositionKind(enum.Enum):
    FORWARD = "ForwardTo"
    DELIVER = "DeliverUp"
    DROP = "Drop"
    QUERY = "Query"


class DropReason(str, enum.Enum):
    BUFFER_FULL = "BufferFull"
    ROUTE_DESYNC = "RouteDesync"
    POLICY = "Policy"
    QUERY_TIMEOUT = "QueryTimeout"
    NO_ROUTE = "NoRoute"


@dataclass(frozen=True)
class Disposition:
    kind: DispositionKind
    frame: Frame
    next_hop: int | None = None
    reason: DropReason | None = None
    scanned: int = 0
    ftq: UsdnMessage | None = None

    @property
    def ftq_emitted(self) -> bool:
        return self.ftq is not None


@dataclass
class PendingFrame:
    frame: Frame
    key: FlowKey
    enqueued_at: int


@dataclass
class LinkObservation:
    quality: float
    last_heard: int


def default_conf() -> ConfBody:
    return ConfBody(nsu_period=180, ft_lifetime=600, ftq_throttle_window=1.0, ppq_fields=DEFAULT_PPQ_FIELDS)


@dataclass
class NodeSdnState:
    node_id: int
    controller: int
    features: Features = field(default_factory=Features)
    enabled: bool = True
    joined: bool = False
    joined_at: int | None = None
    conf: ConfBody = field(default_factory=default_conf)
    hfs: HfsTable = field(default_factory=lambda: HfsTable(DEFAULT_CAPACITY, DEFAULT_LOOKUP_COST_US))
    cmq: dict[FlowKey, int] = field(default_factory=dict)
    pending: deque[PendingFrame] = field(default_factory=deque)
    pending_cap: int = PENDING_CAP
    pending_timeout: int = PENDING_TIMEOUT
    nsu_next: int | None = None
    seq: int = 0
    links: dict[int, LinkObservation] = field(default_factory=dict)
    energy: int = 255
    buffer_occupancy: int = 0

    def take_seq(self) -> int:
        s = self.seq
        self.seq = next_seq(s)
        return s


# -- link observations ---------------------------------------------------------


def observe_rx(node: NodeSdnState, sender: int, now: int) -> None:
    obs = node.links.get(sender)
    if obs is None:
        node.links[sender] = LinkObservation(1.0, now)
    else:
        obs.last_heard = now


def observe_tx(node: NodeSdnState, neighbor: int, success: bool, now: int) -> None:
    obs = node.links.get(neighbor)
    if obs is None:
        obs = node.links[neighbor] = LinkObservation(1.0, now)
    obs.quality += LINK_EWMA * ((1.0 if success else 0.0) - obs.quality)


# -- forwarding ----------------------------------------------------------------


def _rpl_forward(node: NodeSdnState, frame: Frame, parent: int | None, scanned: int = 0) -> Disposition:
    if frame.dst == node.node_id:
        return Disposition(DispositionKind.DELIVER, frame, scanned=scanned)
    if parent is None:
        return Disposition(DispositionKind.DROP, frame, reason=DropReason.NO_ROUTE, scanned=scanned)
    return Disposition(DispositionKind.FORWARD, frame, next_hop=parent, scanned=scanned)


def handle_frame(node: NodeSdnState, frame: Frame, now: int, parent: int | None = None) -> Disposition:
    """Decide what to do with a frame this node originated or received.

    ``parent`` is the node's RPL preferred parent, used by FALLBACK_RPL and
    by nodes that have not joined the controller yet.
    """
    if frame.srh is not None:
        try:
            step = srh_next(frame, node.node_id)
        except RouteDesync:
            return Disposition(DispositionKind.DROP, frame, reason=DropReason.ROUTE_DESYNC)
        if step is DELIVERED:
            return Disposition(DispositionKind.DELIVER, frame)
        return Disposition(DispositionKind.FORWARD, frame, next_hop=step)

    if not (node.enabled and node.joined):
        return _rpl_forward(node, frame, parent)

    res = lookup(node.hfs, frame, now)
    if not res.hit:
        if frame.proto != Proto.APP:
            # control traffic never queries; it rides the RPL parent
            return _rpl_forward(node, frame, parent, res.scanned)
        return _on_miss(node, frame, now, res.scanned)

    out = frame
    next_hop = None
    for a in res.actions:
        if a.kind == ActionKind.SRH_SET:
            if out.srh is None:
                try:
                    out = srh_insert(out, a.hops, origin=node.node_id)
                except MtuExceeded:
                    continue
                step = srh_next(out, node.node_id)
                if step is DELIVERED:
                    return Disposition(DispositionKind.DELIVER, out, scanned=res.scanned)
                next_hop = step
        elif a.kind == ActionKind.FORWARD:
            if next_hop is None:
                next_hop = a.next_hop
        elif a.kind == ActionKind.DROP:
            return Disposition(DispositionKind.DROP, out, reason=DropReason.POLICY, scanned=res.scanned)
        elif a.kind == ActionKind.ACCEPT:
            return Disposition(DispositionKind.DELIVER, out, scanned=res.scanned)
        elif a.kind == ActionKind.FALLBACK_RPL:
            return _rpl_forward(node, out, parent, res.scanned)
        elif a.kind == ActionKind.QUERY_CONTROLLER:
            return _on_miss(node, out, now, res.scanned)
    if next_hop is None:
        return Disposition(DispositionKind.DROP, out, reason=DropReason.NO_ROUTE, scanned=res.scanned)
    return Disposition(DispositionKind.FORWARD, out, next_hop=next_hop, scanned=res.scanned)


def _on_miss(node: NodeSdnState, frame: Frame, now: int, scanned: int) -> Disposition:
    if len(node.pending) >= node.pending_cap:
        return Disposition(DispositionKind.DROP, frame, reason=DropReason.BUFFER_FULL, scanned=scanned)
    key = frame.flow_key
    node.pending.append(PendingFrame(frame, key, now))
    ftq = maybe_send_ftq(node, key, frame, now)
    return Disposition(DispositionKind.QUERY, frame, scanned=scanned, ftq=ftq)


def throttle_us(conf: ConfBody) -> int:
    return round(conf.ftq_throttle_window * US)


def maybe_send_ftq(node: NodeSdnState, key: FlowKey, frame: Frame, now: int) -> UsdnMessage | None:
    """Build an FTQ unless this flow was queried less than one throttle window ago."""
    last = node.cmq.get(key)
    if node.features.cmq and last is not None and now - last < throttle_us(node.conf):
        return None
    node.cmq[key] = now
    if node.features.ppq:
        fields = node.conf.ppq_fields
    else:
        fields = ((0, PPQ_MAX_FIELDS),)
    partial = extract_ppq(frame.view(), fields)
    return UsdnMessage(node.take_seq(), node.node_id, FtqBody(key, partial))


def on_fts(node: NodeSdnState, fts: FtsBody, now: int) -> list[Frame]:
    """Install entries and hand back every pending frame that now matches."""
    for e in fts.entries:
        try:
            install(node.hfs, e, now)
        except TableFull:
            pass
    released = []
    keep: deque[PendingFrame] = deque()
    for p in node.pending:
        if lookup(node.hfs, p.frame, now, touch=False).hit:
            released.append(p.frame)
        else:
            keep.append(p)
    node.pending = keep
    return released


def expire_pending(node: NodeSdnState, now: int) -> list[Frame]:
    """Remove and return pending frames that waited PENDING_TIMEOUT or longer."""
    dead = [p.frame for p in node.pending if now - p.enqueued_at >= node.pending_timeout]
    if dead:
        node.pending = deque(p for p in node.pending if now - p.enqueued_at < node.pending_timeout)
    return dead


def on_conf(node: NodeSdnState, conf: ConfBody, now: int) -> bool:
    """Adopt a configuration; returns True on the node's first join.

    A first CONF schedules an NSU right away so the controller learns the
    node's links without waiting a whole report period.
    """
    first = not node.joined
    node.joined = True
    if first:
        node.joined_at = now
    node.conf = conf
    for e in conf.default_entries:
        try:
            install(node.hfs, e, now)
        except TableFull:
            pass
    # the first report doubles as the join acknowledgement
    node.nsu_next = now if first else now + conf.nsu_period * US
    return first


def build_nsu(node: NodeSdnState) -> UsdnMessage:
    ranked = sorted(node.links.items(), key=lambda kv: (-kv[1].quality, kv[0]))
    nbrs = tuple(
        (n, max(0, min(255, round(obs.quality * 255)))) for n, obs in ranked[:NSU_MAX_NEIGHBORS]
    )
    body = NsuBody(
        max(0, min(255, node.energy)), max(0, min(255, node.buffer_occupancy)), nbrs
    )
    return UsdnMessage(node.take_seq(), node.node_id, body)


def tick_node(
    node: NodeSdnState, app_flows: Sequence[AppFlowState], now: int, rng=None
) -> list[UsdnMessage | AppPacket]:
    """Emit whatever periodic traffic is due at ``now``.

    NSUs go out only from joined nodes. Application sends follow each flow's
    interval, drawn from ``rng`` keyed by (source, flow, sequence).
    """
    out: list[UsdnMessage | AppPacket] = []
    if node.enabled and node.joined and node.nsu_next is not None and now >= node.nsu_next:
        purge_expired(node.hfs, now)
        out.append(build_nsu(node))
        period = node.conf.nsu_period * US
        while node.nsu_next <= now:
            node.nsu_next += period
    for app in app_flows:
        spec = app.spec
        stop = None if spec.stop is None else round(spec.stop * US)
        while app.next_at <= now and (stop is None or app.next_at < stop):
            out.append(AppPacket(spec, app.seq, app.next_at))
            app.seq += 1
            u = 0.5 if rng is None else rng.u("app", spec.source, spec.flow_id, app.seq)
            app.next_at += spec.sample_interval(u)
        if stop is not None and app.next_at >= stop:
            app.next_at = max(app.next_at, stop)
    return out


def first_send_at(spec: AppFlowSpec, rng=None) -> int:
    u = 0.5 if rng is None else rng.u("app", spec.source, spec.flow_id, 0)
    return round(spec.start * US) + spec.sample_interval(u)
