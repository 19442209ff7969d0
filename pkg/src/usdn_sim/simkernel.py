"""Event queue, radio medium and a low-power-listening MAC.

All times are integer microseconds. Randomness comes from :class:`KeyedRng`,
which derives every draw from the run seed plus a key naming what the draw is
for (which frame, which link, which attempt). Two runs that share a seed see
the same draw for the same frame on the same link even when their event
orders differ, which keeps paired comparisons low-noise.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

US = 1_000_000


class FrameTooLarge(ValueError):
    pass


class SchedulePast(ValueError):
    pass


class EventQueue:
    def __init__(self, trace: bool = False) -> None:
        self._heap: list = []
        self._counter = 0
        self.now = 0
        self.processed = 0
        self.trace: list[tuple[int, int, str]] | None = [] if trace else None

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, t: int, fn: Callable, *args) -> None:
        if t < self.now:
            raise SchedulePast(f"event at {t} is before now={self.now}")
        self._counter += 1
        heapq.heappush(self._heap, (t, self._counter, fn, args))

    def run_until(self, t_end: int) -> int:
        """Process every event with time <= t_end; returns how many ran."""
        n = 0
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            t, tie, fn, args = heapq.heappop(heap)
            self.now = t
            if self.trace is not None:
                self.trace.append((t, tie, getattr(fn, "__name__", repr(fn))))
            fn(*args)
            n += 1
        self.now = max(self.now, t_end)
        self.processed += n
        return n


class KeyedRng:
    """Counter-style generator: ``u(*key)`` is a pure function of (seed, key)."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._key = struct.pack(">Q", seed & 0xFFFFFFFFFFFFFFFF)

    def u(self, *key) -> float:
        h = hashlib.blake2b(repr(key).encode(), key=self._key, digest_size=8)
        return int.from_bytes(h.digest(), "big") / 2.0**64

    def uniform(self, lo: float, hi: float, *key) -> float:
        return lo + (hi - lo) * self.u(*key)

    def randint(self, lo: int, hi: int, *key) -> int:
        """Integer in [lo, hi]."""
        return lo + min(hi - lo, int(self.u(*key) * (hi - lo + 1)))


# -- medium --------------------------------------------------------------------


@dataclass(frozen=True)
class InterferenceSource:
    position: tuple[float, float]
    range: float = 50.0
    period: int = 100_000
    duration: int = 15_000
    phase: int = 0

    def active(self, t: int) -> bool:
        return (t - self.phase) % self.period < self.duration


class Medium:
    """Unit-disk radio: constant success probability inside ``tx_range``."""

    def __init__(
        self,
        positions: dict[int, tuple[float, float]],
        tx_range: float = 100.0,
        link_success: float = 0.9,
        interferers: Sequence[InterferenceSource] = (),
    ) -> None:
        self.positions = dict(positions)
        self.tx_range = tx_range
        self.link_success = link_success
        self.interferers = tuple(interferers)
        self._nbrs: dict[int, tuple[int, ...]] = {}
        self._hit: dict[int, tuple[InterferenceSource, ...]] = {}
        for n, p in self.positions.items():
            self._nbrs[n] = tuple(
                m for m in sorted(self.positions) if m != n and self.distance(n, m) <= tx_range
            )
            self._hit[n] = tuple(
                s for s in self.interferers if math.dist(p, s.position) <= s.range
            )

    def distance(self, a: int, b: int) -> float:
        return math.dist(self.positions[a], self.positions[b])

    def in_range(self, a: int, b: int) -> bool:
        return b in self._nbrs[a]

    def neighbors(self, n: int) -> tuple[int, ...]:
        return self._nbrs[n]

    def interfered(self, node: int, t: int) -> bool:
        return any(s.active(t) for s in self._hit[node])

    def exposed(self, node: int) -> bool:
        return bool(self._hit[node])


# -- MAC model -----------------------------------------------------------------


@dataclass(frozen=True)
class MacConfig:
    wake_interval: int = 125_000
    channel_check: int = 2_000
    byte_time: int = 32
    max_retries: int = 3
    backoff_min: int = 2_000
    backoff_max: int = 8_000
    queue_capacity: int = 8
    half_duplex: bool = True  # a receiver that is strobing misses incoming frames

    def airtime(self, nbytes: int) -> int:
        return nbytes * self.byte_time


class LossCause(enum.Enum):
    CHANNEL = "channel"
    INTERFERENCE = "interference"
    BUSY = "busy"


class OutcomeKind(enum.Enum):
    DELIVERED = "DeliveredAt"
    LOST_CHANNEL = "LostChannel"
    LOST_INTERFERENCE = "LostInterference"
    EXCEEDED_RETRIES = "ExceededRetries"


@dataclass(frozen=True)
class Attempt:
    start: int
    rx_at: int
    cause: LossCause | None


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    at: int
    attempts: tuple[Attempt, ...] = ()

    @property
    def delivered(self) -> bool:
        return self.kind == OutcomeKind.DELIVERED


def rx_time(cfg: MacConfig, rng: KeyedRng, key, sender: int, receiver: int, attempt: int, t0: int) -> int:
    """When the receiver wakes during a strobe that begins at ``t0``."""
    return t0 + int(rng.u("rx", key, sender, receiver, attempt) * cfg.wake_interval)


def reception_cause(
    medium: Medium, rng: KeyedRng, key, sender: int, receiver: int, attempt: int, t_rx: int,
    busy: bool = False,
) -> LossCause | None:
    """Why an attempt fails at ``t_rx`` (None if it succeeds)."""
    if busy:
        return LossCause.BUSY
    if medium.interfered(receiver, t_rx):
        return LossCause.INTERFERENCE
    if rng.u("loss", key, sender, receiver, attempt) >= medium.link_success:
        return LossCause.CHANNEL
    return None


def backoff(cfg: MacConfig, rng: KeyedRng, key, sender: int, receiver: int, attempt: int) -> int:
    lo, hi = cfg.backoff_min, cfg.backoff_max
    return int((lo + (hi - lo) * rng.u("bo", key, sender, receiver, attempt)) * attempt)


def failure_kind(cause: LossCause | None) -> OutcomeKind:
    return OutcomeKind.LOST_INTERFERENCE if cause == LossCause.INTERFERENCE else OutcomeKind.EXCEEDED_RETRIES


@dataclass
class MacState:
    """Per-node radio bookkeeping."""

    wake_interval: int = 125_000
    channel_check: int = 2_000
    phase: int = 0
    radio_on_intervals: list[tuple[int, int]] = field(default_factory=list)
    explicit_total: int = 0  # sum of interval lengths, overlaps counted twice

    def radio_on(self, start: int, end: int) -> None:
        if end > start:
            self.radio_on_intervals.append((start, end))
            self.explicit_total += end - start

    def approx_on_time(self, t: int) -> int:
        """Cheap upper estimate of radio-on time in [0, t), for energy reports."""
        checks = _check_time_before(self, t) - _check_time_before(self, 0)
        return min(t, self.explicit_total + checks)


def unicast(
    medium: Medium, cfg: MacConfig, rng: KeyedRng, src: int, dst: int, nbytes: int, t: int,
    key=0, mac: dict[int, MacState] | None = None,
) -> Outcome:
    """One MAC-level unicast with retries, evaluated without other traffic."""
    if not medium.in_range(src, dst):
        return Outcome(OutcomeKind.LOST_CHANNEL, t)
    attempts = []
    t0 = t
    air = cfg.airtime(nbytes)
    cause = None
    for attempt in range(1, cfg.max_retries + 2):
        t_rx = rx_time(cfg, rng, key, src, dst, attempt, t0)
        cause = reception_cause(medium, rng, key, src, dst, attempt, t_rx)
        attempts.append(Attempt(t0, t_rx, cause))
        if mac is not None:
            mac[dst].radio_on(t_rx, t_rx + air)
        if cause is None:
            if mac is not None:
                mac[src].radio_on(t0, t_rx + air)
            return Outcome(OutcomeKind.DELIVERED, t_rx + air, tuple(attempts))
        if mac is not None:
            mac[src].radio_on(t0, t0 + cfg.wake_interval)
        t0 = t0 + cfg.wake_interval + backoff(cfg, rng, key, src, dst, attempt)
    return Outcome(failure_kind(cause), t0, tuple(attempts))


def broadcast(
    medium: Medium, cfg: MacConfig, rng: KeyedRng, src: int, nbytes: int, t: int,
    key=0, mac: dict[int, MacState] | None = None,
) -> dict[int, Outcome]:
    """Strobe for a full wake interval; each neighbor gets one independent try."""
    air = cfg.airtime(nbytes)
    if mac is not None:
        mac[src].radio_on(t, t + cfg.wake_interval)
    out = {}
    for n in medium.neighbors(src):
        t_rx = rx_time(cfg, rng, key, src, n, 0, t)
        cause = reception_cause(medium, rng, key, src, n, 0, t_rx)
        if mac is not None:
            mac[n].radio_on(t_rx, t_rx + air)
        if cause is None:
            out[n] = Outcome(OutcomeKind.DELIVERED, t_rx + air, (Attempt(t, t_rx, None),))
        else:
            out[n] = Outcome(failure_kind(cause), t_rx, (Attempt(t, t_rx, cause),))
    return out


def merge_intervals(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for s, e in sorted(intervals):
        if e <= s:
            continue
        if merged and s <= merged[-1][1]:
            if e > merged[-1][1]:
                merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def _check_time_before(mac: MacState, t: int) -> int:
    """Cumulative wake-check time up to ``t`` on the node's periodic grid."""
    k, r = divmod(t - mac.phase, mac.wake_interval)
    return k * mac.channel_check + min(r, mac.channel_check)


def radio_on_time(mac: MacState, t0: int, t1: int, periodic: bool = True) -> int:
    """Radio-on microseconds in [t0, t1): explicit intervals united with wake checks."""
    if t1 <= t0:
        return 0
    total = 0
    overlap = 0
    for s, e in merge_intervals(mac.radio_on_intervals):
        s, e = max(s, t0), min(e, t1)
        if e > s:
            total += e - s
            if periodic:
                overlap += _check_time_before(mac, e) - _check_time_before(mac, s)
    if periodic and mac.channel_check > 0:
        total += _check_time_before(mac, t1) - _check_time_before(mac, t0) - overlap
    return total


def rdc(mac: MacState, window: tuple[int, int], periodic: bool = True) -> float:
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("rdc window must have t1 > t0")
    return radio_on_time(mac, t0, t1, periodic) / (t1 - t0)


# -- event-driven MAC ----------------------------------------------------------


@dataclass(eq=False)
class _TxJob:
    frame: object
    next_hop: int | None  # None = broadcast
    enqueued_at: int
    attempt: int = 0
    t0: int = 0
    last_cause: LossCause | None = None


class _NodeMac:
    __slots__ = ("node", "queues", "order", "rr", "busy", "tx_start", "tx_end", "queued", "state")

    def __init__(self, node: int, state: MacState) -> None:
        self.node = node
        self.queues: dict[int, deque[_TxJob]] = {}
        self.order: list[int] = []
        self.rr = 0
        self.busy = False
        self.tx_start: int | None = None
        self.tx_end: int | None = None
        self.queued = 0
        self.state = state

    def strobing_at(self, t: int) -> bool:
        return self.tx_start is not None and self.tx_start <= t and (self.tx_end is None or self.tx_end > t)


class RadioNetwork:
    """Event-driven MAC over a shared :class:`Medium`.

    Each node has one half-duplex radio and a per-neighbor transmit queue
    served round-robin. A receiver that is itself strobing at the moment a
    sender reaches it misses the frame.

    Callbacks:
      on_rx(node, frame, sender, t)        frame decoded at ``node``
      on_fail(node, frame, next_hop, kind, t)   unicast given up
      on_loss(sender, receiver, frame, cause, t)  single failed attempt
    """

    BROADCAST = 0

    def __init__(
        self,
        queue: EventQueue,
        medium: Medium,
        cfg: MacConfig,
        rng: KeyedRng,
        on_rx: Callable,
        on_fail: Callable,
        on_loss: Callable | None = None,
        frame_key: Callable = lambda f: f.key,
        frame_size: Callable = lambda f: f.size,
        mtu: int = 127,
    ) -> None:
        self.q = queue
        self.medium = medium
        self.cfg = cfg
        self.rng = rng
        self.on_rx = on_rx
        self.on_fail = on_fail
        self.on_loss = on_loss
        self.frame_key = frame_key
        self.frame_size = frame_size
        self.mtu = mtu
        self.mac: dict[int, MacState] = {}
        self._nodes: dict[int, _NodeMac] = {}
        for n in sorted(medium.positions):
            phase = int(rng.u("phase", n) * cfg.wake_interval)
            st = MacState(cfg.wake_interval, cfg.channel_check, phase)
            self.mac[n] = st
            self._nodes[n] = _NodeMac(n, st)

    def queue_length(self, node: int) -> int:
        nm = self._nodes[node]
        return nm.queued + (1 if nm.busy else 0)

    def send(self, node: int, frame, next_hop: int | None) -> bool:
        """Queue a frame; returns False (and reports the drop) when the queue is full."""
        size = self.frame_size(frame)
        if size > self.mtu:
            raise FrameTooLarge(f"{size}-byte frame from node {node} exceeds the {self.mtu}-byte MTU")
        nm = self._nodes[node]
        if nm.queued >= self.cfg.queue_capacity:
            return False
        key = self.BROADCAST if next_hop is None else next_hop
        dq = nm.queues.get(key)
        if dq is None:
            dq = nm.queues[key] = deque()
            nm.order.append(key)
        dq.append(_TxJob(frame, next_hop, self.q.now))
        nm.queued += 1
        if not nm.busy:
            self._start_next(nm)
        return True

    def _start_next(self, nm: _NodeMac) -> None:
        if nm.queued == 0:
            nm.busy = False
            return
        n = len(nm.order)
        for i in range(n):
            key = nm.order[(nm.rr + i) % n]
            dq = nm.queues[key]
            if dq:
                nm.rr = (nm.rr + i + 1) % n
                job = dq.popleft()
                nm.queued -= 1
                break
        nm.busy = True
        now = self.q.now
        if job.next_hop is None:
            self._start_broadcast(nm, job, now)
        else:
            self._start_attempt(nm, job, now)

    def _finish(self, nm: _NodeMac) -> None:
        nm.tx_start = nm.tx_end = None
        self._start_next(nm)

    # unicast

    def _start_attempt(self, nm: _NodeMac, job: _TxJob, t0: int) -> None:
        src, dst = nm.node, job.next_hop
        if not self.medium.in_range(src, dst):
            self.on_fail(src, job.frame, dst, OutcomeKind.LOST_CHANNEL, t0)
            nm.tx_start = nm.tx_end = None
            self._start_next(nm)
            return
        job.attempt += 1
        job.t0 = t0
        nm.tx_start, nm.tx_end = t0, None
        t_rx = rx_time(self.cfg, self.rng, self.frame_key(job.frame), src, dst, job.attempt, t0)
        self.q.schedule(t_rx, self._evaluate, nm, job, t_rx)

    def _evaluate(self, nm: _NodeMac, job: _TxJob, t_rx: int) -> None:
        cfg = self.cfg
        src, dst = nm.node, job.next_hop
        key = self.frame_key(job.frame)
        rx = self._nodes[dst]
        busy = cfg.half_duplex and rx.strobing_at(t_rx)
        cause = reception_cause(self.medium, self.rng, key, src, dst, job.attempt, t_rx, busy)
        air = cfg.airtime(self.frame_size(job.frame))
        if not busy:
            rx.state.radio_on(t_rx, t_rx + air)
        if cause is None:
            t_done = t_rx + air
            nm.state.radio_on(job.t0, t_done)
            nm.tx_end = t_done
            self.q.schedule(t_done, self._delivered, nm, job, t_done)
            return
        if self.on_loss is not None:
            self.on_loss(src, dst, job.frame, cause, t_rx)
        job.last_cause = cause
        t_end = job.t0 + cfg.wake_interval
        nm.state.radio_on(job.t0, t_end)
        nm.tx_end = t_end
        if job.attempt <= cfg.max_retries:
            t_next = t_end + backoff(cfg, self.rng, key, src, dst, job.attempt)
            self.q.schedule(t_next, self._retry, nm, job, t_next)
        else:
            self.q.schedule(t_end, self._give_up, nm, job, t_end)

    def _retry(self, nm: _NodeMac, job: _TxJob, t: int) -> None:
        self._start_attempt(nm, job, t)

    def _give_up(self, nm: _NodeMac, job: _TxJob, t: int) -> None:
        self.on_fail(nm.node, job.frame, job.next_hop, failure_kind(job.last_cause), t)
        self._finish(nm)

    def _delivered(self, nm: _NodeMac, job: _TxJob, t: int) -> None:
        self._finish(nm)
        self.on_rx(job.next_hop, job.frame, nm.node, t)

    # broadcast

    def _start_broadcast(self, nm: _NodeMac, job: _TxJob, t0: int) -> None:
        cfg = self.cfg
        end = t0 + cfg.wake_interval
        nm.tx_start, nm.tx_end = t0, end
        nm.state.radio_on(t0, end)
        key = self.frame_key(job.frame)
        for n in self.medium.neighbors(nm.node):
            t_rx = rx_time(cfg, self.rng, key, nm.node, n, 0, t0)
            self.q.schedule(t_rx, self._evaluate_bcast, nm, job, n, t_rx)
        self.q.schedule(end, self._bcast_done, nm)

    def _evaluate_bcast(self, nm: _NodeMac, job: _TxJob, n: int, t_rx: int) -> None:
        key = self.frame_key(job.frame)
        rx = self._nodes[n]
        busy = self.cfg.half_duplex and rx.strobing_at(t_rx)
        cause = reception_cause(self.medium, self.rng, key, nm.node, n, 0, t_rx, busy)
        air = self.cfg.airtime(self.frame_size(job.frame))
        if not busy:
            rx.state.radio_on(t_rx, t_rx + air)
        if cause is None:
            self.q.schedule(t_rx + air, self._bcast_rx, n, job.frame, nm.node, t_rx + air)
        elif self.on_loss is not None:
            self.on_loss(nm.node, n, job.frame, cause, t_rx)

    def _bcast_rx(self, n: int, frame, sender: int, t: int) -> None:
        self.on_rx(n, frame, sender, t)

    def _bcast_done(self, nm: _NodeMac) -> None:
        self._finish(nm)
