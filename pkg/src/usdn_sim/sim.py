"""Wires radio, RPL, node engines and the controller into one seeded run."""

from __future__ import annotations

import dataclasses
import logging
from typing import Iterable, Sequence

from .config import SWEEP_AXES, ScenarioConfig
from .controller import (
    Outbound,
    CONF_RETRY_US,
    accept_message,
    ctrl_conf_retry,
    ctrl_on_dao,
    ctrl_on_ftq,
    ctrl_on_nsu,
    make_controller,
)
from .flowtable import HfsTable
from .metrics import MetricsLog, MetricsReport, Record, RecordKind, compute_metrics
from .node import (
    AppFlowState,
    AppPacket,
    Disposition,
    DispositionKind,
    NodeSdnState,
    expire_pending,
    first_send_at,
    handle_frame,
    observe_rx,
    observe_tx,
    on_conf,
    on_fts,
    tick_node,
)
from .rpl import (
    DaoRouteTable,
    DodagState,
    NoRoute,
    RplKind,
    RplMessage,
    on_dao,
    on_dis,
    on_dio,
    root_source_route,
    tick_rpl,
)
from .simkernel import EventQueue, KeyedRng, Medium, OutcomeKind, RadioNetwork
from .topology import ring_layout
from .wire import (
    DELIVERED,
    Category,
    ConfBody,
    Frame,
    FtqBody,
    FtsBody,
    MTU,
    MsgKind,
    MtuExceeded,
    NsuBody,
    Proto,
    RouteDesync,
    UsdnMessage,
    WireError,
    decode,
    encode,
    srh_insert,
    srh_next,
)

log = logging.getLogger(__name__)

US = 1_000_000
BROADCAST_ADDR = 0xFFFF
ROOT_FIRST_DIO_MAX = 1 * US


def node_positions(cfg: ScenarioConfig, seed: int) -> dict[int, tuple[float, float]]:
    topo = cfg.topology
    if topo.kind == "explicit":
        return {n: tuple(p) for n, p in topo.positions}
    layout_seed = seed if topo.layout_seed is None else topo.layout_seed
    return ring_layout(topo.nodes, topo.max_hops, cfg.tx_range, layout_seed, topo.root)


class Simulation:
    def __init__(self, cfg: ScenarioConfig, seed: int, trace: bool = False) -> None:
        self.cfg = cfg
        self.seed = seed
        self.rng = KeyedRng(seed)
        self.q = EventQueue(trace)
        self.root = cfg.topology.root
        self.positions = node_positions(cfg, seed)
        self.ids = sorted(self.positions)
        self.medium = Medium(self.positions, cfg.tx_range, cfg.link_success, cfg.interferers)
        self.net = RadioNetwork(
            self.q, self.medium, cfg.mac, self.rng, self._on_rx, self._on_fail, self._on_loss,
            mtu=MTU,
        )
        self.log = MetricsLog()
        sdn = cfg.sdn
        self.sdn_on = sdn.enabled

        self.dodag: dict[int, DodagState] = {}
        for n in self.ids:
            st = DodagState(n, is_root=n == self.root, timers=cfg.rpl)
            if st.is_root:
                st.dio_next = int(self.rng.u("rpl-start", n) * ROOT_FIRST_DIO_MAX)
            else:
                st.dis_next = int(self.rng.u("rpl-start", n) * cfg.rpl.dis_period)
            self.dodag[n] = st

        self.nodes: dict[int, NodeSdnState] = {}
        for n in self.ids:
            self.nodes[n] = NodeSdnState(
                n, self.root, features=sdn.features, enabled=self.sdn_on,
                conf=ConfBody(sdn.nsu_period, sdn.ft_lifetime, sdn.throttle_window, sdn.ppq_fields),
                hfs=HfsTable(sdn.flowtable_capacity, sdn.lookup_cost),
                pending_cap=sdn.pending_cap, pending_timeout=sdn.pending_timeout,
            )
        self.dao_table = DaoRouteTable(self.root, cfg.rpl.route_lifetime)
        self.ctrl = None
        if self.sdn_on:
            self.ctrl = make_controller(
                self.root, self.dao_table, cfg.policy, sdn.features, sdn.nsu_period,
                sdn.ft_lifetime, sdn.throttle_window, sdn.ppq_fields, sdn.weighted_paths,
            )

        app_stop = (cfg.duration - cfg.app_tail) / US
        self.apps: dict[int, list[AppFlowState]] = {n: [] for n in self.ids}
        for spec in cfg.flows:
            stop = app_stop if spec.stop is None else min(spec.stop, app_stop)
            spec = dataclasses.replace(spec, stop=stop)
            self.apps[spec.source].append(AppFlowState(spec, first_send_at(spec, self.rng)))

        self._uid = 0
        self._ctl_count: dict[tuple, int] = {}
        self._inflight: dict[int, Frame] = {}
        self._rpl_gen = {n: 0 for n in self.ids}
        self._node_gen = {n: 0 for n in self.ids}

    # -- helpers ---------------------------------------------------------------

    def _record(self, kind: RecordKind, t: int, node: int, frame: Frame | None = None, **kw) -> None:
        if frame is not None:
            kw.setdefault("uid", frame.uid)
            kw.setdefault("category", frame.category.value)
            kw.setdefault("msg", frame.kind)
            if frame.proto == Proto.APP:
                kw.setdefault("flow", (frame.src, frame.dst, frame.flow_id))
        self.log.append(Record(t, kind, node, **kw))

    def _control_key(self, *parts) -> tuple:
        c = self._ctl_count.get(parts, 0)
        self._ctl_count[parts] = c + 1
        return ("C",) + parts + (c,)

    def _new_frame(self, src: int, dst: int, proto: Proto, kind: str, category: Category,
                   payload: bytes, key: tuple, flow_id: int = 0, priority: int = 0, rpl=None) -> Frame:
        self._uid += 1
        return Frame(self._uid, src, dst, proto, kind, category, payload, flow_id, key,
                     self.q.now, priority=priority, rpl=rpl)

    def _originate(self, node: int, frame: Frame, **kw) -> None:
        t = self.q.now
        self._record(RecordKind.SEND, t, node, frame, bytes=frame.size, **kw)
        if frame.proto == Proto.APP:
            self._inflight[frame.uid] = frame
        self._dispatch(node, frame)

    def _drop(self, node: int, frame: Frame, reason: str) -> None:
        self._record(RecordKind.DROP, self.q.now, node, frame, reason=reason)
        self._inflight.pop(frame.uid, None)

    # -- timers ----------------------------------------------------------------

    def _arm_rpl(self, n: int) -> None:
        self._rpl_gen[n] += 1
        t = max(self.dodag[n].next_deadline(), self.q.now)
        if t <= self.cfg.duration:
            self.q.schedule(t, self._rpl_tick, n, self._rpl_gen[n])

    def _rpl_tick(self, n: int, gen: int) -> None:
        if gen != self._rpl_gen[n]:
            return
        self._emit_rpl(n, tick_rpl(self.dodag[n], self.q.now))
        self._arm_rpl(n)

    def _arm_node(self, n: int) -> None:
        self._node_gen[n] += 1
        node = self.nodes[n]
        due = []
        if node.enabled and node.joined and node.nsu_next is not None and n != self.root:
            due.append(node.nsu_next)
        for app in self.apps[n]:
            stop = app.spec.stop
            if stop is None or app.next_at < round(stop * US):
                due.append(app.next_at)
        if due:
            t = max(min(due), self.q.now)
            if t <= self.cfg.duration:
                self.q.schedule(t, self._node_tick, n, self._node_gen[n])

    def _node_tick(self, n: int, gen: int) -> None:
        if gen != self._node_gen[n]:
            return
        now = self.q.now
        node = self.nodes[n]
        node.buffer_occupancy = self.net.queue_length(n) + len(node.pending)
        if now > 0 and node.nsu_next is not None and node.nsu_next <= now:
            on = self.net.mac[n].approx_on_time(now)
            node.energy = round(255 * max(0.0, 1 - on / now))
        for item in tick_node(node, self.apps[n], now, self.rng):
            if isinstance(item, AppPacket):
                self._send_app(n, item)
            else:
                self._send_usdn(n, item)
        self._arm_node(n)

    def _schedule_pending_check(self, n: int) -> None:
        t = self.q.now + self.nodes[n].pending_timeout
        if t <= self.cfg.duration:
            self.q.schedule(t, self._pending_check, n)

    def _pending_check(self, n: int) -> None:
        for f in expire_pending(self.nodes[n], self.q.now):
            self._drop(n, f, "QueryTimeout")

    # -- origination -------------------------------------------------------------

    def _send_app(self, n: int, pkt: AppPacket) -> None:
        spec = pkt.spec
        f = self._new_frame(
            n, spec.dest, Proto.APP, "APP", Category.APP, bytes(spec.payload_len),
            ("A", spec.source, spec.flow_id, pkt.seq), spec.flow_id, int(spec.priority),
        )
        self._originate(n, f)

    def _send_usdn(self, n: int, msg: UsdnMessage) -> None:
        kind = msg.kind.name
        cat = Category.SDN_CBR if msg.kind == MsgKind.NSU else Category.SDN_VBR
        f = self._new_frame(n, self.root, Proto.USDN, kind, cat, encode(msg), self._control_key(kind, n))
        if msg.kind == MsgKind.FTQ:
            # the querying node and the flow it asked about
            key = msg.body.flow_key
            self._originate(n, f, flow=(n, key.dest, key.flow_id))
        else:
            self._originate(n, f)

    def _send_outbound(self, out: Outbound) -> None:
        msg = out.msg
        kind = msg.kind.name
        f = self._new_frame(self.root, out.dest, Proto.USDN, kind, Category.SDN_VBR, encode(msg),
                            self._control_key(kind, self.root, out.dest))
        if out.route:
            try:
                f = srh_insert(f, out.route, origin=self.root)
            except (MtuExceeded, ValueError):
                self._record(RecordKind.DROP, self.q.now, self.root, f, reason="MtuExceeded")
                return
        self._originate(self.root, f)

    def _emit_rpl(self, n: int, emissions) -> None:
        now = self.q.now
        for e in emissions:
            if e.at > now:
                self.q.schedule(e.at, self._send_rpl, n, e.msg)
            else:
                self._send_rpl(n, e.msg)

    def _send_rpl(self, n: int, msg: RplMessage) -> None:
        st = self.dodag[n]
        now = self.q.now
        if msg.kind == RplKind.DAO:
            if st.preferred_parent is None or n == self.root:
                return
            msg = RplMessage.dao(n, st.preferred_parent)
            f = self._new_frame(n, self.root, Proto.RPL, "DAO", Category.RPL, bytes(msg.size),
                                self._control_key("DAO", n), rpl=msg)
            self._originate(n, f)
            return
        if msg.kind == RplKind.DIO:
            if st.dio_reply_at is not None and st.dio_reply_at <= now:
                st.dio_reply_at = None
            msg = RplMessage.dio(st.rank)
        f = self._new_frame(n, BROADCAST_ADDR, Proto.RPL, msg.kind.value, Category.RPL,
                            bytes(msg.size), self._control_key(msg.kind.value, n), rpl=msg)
        self._record(RecordKind.SEND, now, n, f, bytes=f.size)
        self.net.send(n, f, None)

    # -- forwarding --------------------------------------------------------------

    def _dispatch(self, n: int, frame: Frame) -> None:
        now = self.q.now
        if n == self.root:
            self._root_dispatch(frame)
            return
        disp = handle_frame(self.nodes[n], frame, now, parent=self.dodag[n].preferred_parent)
        delay = self.cfg.processing_delay + disp.scanned * self.nodes[n].hfs.lookup_cost_us
        self.q.schedule(now + delay, self._act, n, disp)

    def _root_dispatch(self, frame: Frame) -> None:
        r = self.root
        now = self.q.now
        if frame.srh is not None:
            try:
                step = srh_next(frame, r)
            except RouteDesync:
                disp = Disposition(DispositionKind.DROP, frame, reason="RouteDesync")
            else:
                disp = (Disposition(DispositionKind.DELIVER, frame) if step is DELIVERED
                        else Disposition(DispositionKind.FORWARD, frame, next_hop=step))
        elif frame.dst == r:
            disp = Disposition(DispositionKind.DELIVER, frame)
        else:
            try:
                route = root_source_route(self.dao_table, frame.dst, now)
                frame = srh_insert(frame, route, origin=r)
                disp = Disposition(DispositionKind.FORWARD, frame, next_hop=srh_next(frame, r))
            except NoRoute:
                disp = Disposition(DispositionKind.DROP, frame, reason="NoRoute")
            except MtuExceeded:
                disp = Disposition(DispositionKind.DROP, frame, reason="MtuExceeded")
        self.q.schedule(now + self.cfg.processing_delay, self._act, r, disp)

    def _act(self, n: int, disp: Disposition) -> None:
        frame = disp.frame
        k = disp.kind
        if k == DispositionKind.FORWARD:
            if not self.net.send(n, frame, disp.next_hop):
                self._drop(n, frame, "QueueFull")
        elif k == DispositionKind.DELIVER:
            self._deliver(n, frame)
        elif k == DispositionKind.DROP:
            reason = disp.reason.value if hasattr(disp.reason, "value") else str(disp.reason)
            self._drop(n, frame, reason)
        elif k == DispositionKind.QUERY:
            self._schedule_pending_check(n)
        if disp.ftq is not None:
            self._send_usdn(n, disp.ftq)

    def _deliver(self, n: int, frame: Frame) -> None:
        now = self.q.now
        if frame.proto == Proto.APP:
            self._record(RecordKind.DELIVER, now, n, frame, hops=frame.hops)
            self._inflight.pop(frame.uid, None)
        elif frame.proto == Proto.RPL:
            if frame.kind == "DAO" and n == self.root:
                self._root_dao(frame.rpl)
        elif frame.proto == Proto.USDN:
            try:
                msg = decode(frame.payload)
            except WireError as e:
                log.warning("node %d dropped an undecodable %s: %s", n, frame.kind, e)
                return
            if n == self.root:
                self._controller_rx(msg)
            else:
                self._node_usdn_rx(n, msg)

    # -- control plane -------------------------------------------------------------

    def _root_dao(self, dao: RplMessage) -> None:
        now = self.q.now
        if self.ctrl is None:
            on_dao(self.dao_table, dao, now)
            return
        _, outs = ctrl_on_dao(self.ctrl, dao, now)
        for o in outs:
            self._send_outbound(o)
        if outs:
            self._schedule_conf_retry(dao.child)

    def _schedule_conf_retry(self, n: int) -> None:
        t = self.q.now + CONF_RETRY_US
        if t <= self.cfg.duration:
            self.q.schedule(t, self._conf_retry, n)

    def _conf_retry(self, n: int) -> None:
        outs = ctrl_conf_retry(self.ctrl, n, self.q.now)
        for o in outs:
            self._send_outbound(o)
        if outs:
            self._schedule_conf_retry(n)

    def _controller_rx(self, msg: UsdnMessage) -> None:
        if self.ctrl is None or not accept_message(self.ctrl, msg):
            return
        now = self.q.now
        if isinstance(msg.body, NsuBody):
            ctrl_on_nsu(self.ctrl, msg, now)
        elif isinstance(msg.body, FtqBody):
            for o in ctrl_on_ftq(self.ctrl, msg, now):
                self._send_outbound(o)

    def _node_usdn_rx(self, n: int, msg: UsdnMessage) -> None:
        node = self.nodes[n]
        now = self.q.now
        if not node.enabled:
            return
        if isinstance(msg.body, ConfBody):
            if on_conf(node, msg.body, now):
                self._record(RecordKind.JOIN_CTRL, now, n)
            self._arm_node(n)
        elif isinstance(msg.body, FtsBody):
            for f in on_fts(node, msg.body, now):
                self._dispatch(n, f)

    # -- radio callbacks -------------------------------------------------------------

    def _on_rx(self, n: int, frame: Frame, sender: int, t: int) -> None:
        observe_rx(self.nodes[n], sender, t)
        if frame.dst != BROADCAST_ADDR:
            observe_tx(self.nodes[sender], n, True, t)
            frame.hops += 1
        if frame.proto == Proto.APP:
            self._record(RecordKind.HOP, t, n, frame, peer=sender)
        if frame.proto == Proto.RPL and frame.kind in ("DIS", "DIO"):
            st = self.dodag[n]
            if frame.kind == "DIS":
                delay = self.rng.randint(
                    self.cfg.rpl.dis_response_min, self.cfg.rpl.dis_response_max, "dis-reply", n, frame.key
                )
                self._emit_rpl(n, on_dis(st, sender, t, delay))
            else:
                was = st.joined
                rpl = self.cfg.rpl
                res = on_dio(
                    st, sender, frame.rpl.rank, t,
                    int(rpl.dio_period * (0.5 + 0.5 * self.rng.u("dio-phase", n))),
                    int(rpl.dao_period * (0.5 + 0.5 * self.rng.u("dao-phase", n))),
                    int(rpl.dao_delay_max * self.rng.u("dao-delay", n, t)),
                )
                if not was and st.joined:
                    self._record(RecordKind.JOIN_DAG, t, n)
                self._emit_rpl(n, res.emit)
                if not was and st.joined:
                    self._arm_rpl(n)
            return
        self._dispatch(n, frame)

    def _on_fail(self, n: int, frame: Frame, next_hop: int, kind: OutcomeKind, t: int) -> None:
        self._drop(n, frame, kind.value)

    def _on_loss(self, sender: int, receiver: int, frame: Frame, cause, t: int) -> None:
        if frame.dst != BROADCAST_ADDR:
            observe_tx(self.nodes[sender], receiver, False, t)
        if frame.proto == Proto.APP:
            self._record(RecordKind.LOSS, t, receiver, frame, peer=sender, reason=cause.value)

    # -- run ---------------------------------------------------------------------------

    def run(self) -> MetricsLog:
        cfg = self.cfg
        self._record(RecordKind.JOIN_DAG, 0, self.root)
        if self.sdn_on:
            self._record(RecordKind.JOIN_CTRL, 0, self.root)
        for n in self.ids:
            self._arm_rpl(n)
            self._arm_node(n)
        self.q.run_until(cfg.duration)
        end = cfg.duration
        for uid in sorted(self._inflight):
            f = self._inflight[uid]
            self._record(RecordKind.DROP, end, f.src, f, reason="Unfinished")
        self._inflight.clear()
        for n in self.ids:
            for s, e in self.net.mac[n].radio_on_intervals:
                if s < end:
                    self.log.append(Record(s, RecordKind.RADIO_ON, n, until=min(e, end)))
        self.log.meta = {
            "scenario": cfg.name,
            "seed": self.seed,
            "sdn_enabled": self.sdn_on,
            "duration": end,
            "nodes": list(self.ids),
            "root": self.root,
            "positions": dict(self.positions),
            "hops": {n: self.dodag[n].hops for n in self.ids},
            "phases": {n: self.net.mac[n].phase for n in self.ids},
            "wake_interval": cfg.mac.wake_interval,
            "channel_check": cfg.mac.channel_check,
            "events": self.q.processed,
        }
        return self.log


def run_scenario(cfg: ScenarioConfig, seed: int, trace: bool = False) -> tuple[MetricsReport, MetricsLog]:
    sim = Simulation(cfg, seed, trace)
    mlog = sim.run()
    return compute_metrics(mlog), mlog


def sweep(
    cfg: ScenarioConfig, axis: str, values: Sequence, seeds: Iterable[int] | None = None
) -> list[tuple[object, int, MetricsReport]]:
    """One run per (value, seed); the same seeds are reused for every value."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"cannot sweep {axis!r}; choose one of {', '.join(SWEEP_AXES)}")
    seeds = list(cfg.seeds if seeds is None else seeds)
    out = []
    for v in values:
        c = cfg.with_sdn(**{axis: v})
        for s in seeds:
            rep, _ = run_scenario(c, s)
            out.append((v, s, rep))
    return out
