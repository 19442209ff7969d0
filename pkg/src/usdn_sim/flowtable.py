"""Protocol-oblivious flowtable with a whitelist tier ahead of the main table.

Entries match on (offset, length, value) byte windows of a frame's network
view rather than on named header fields. Identical matches and actions are
stored once in shared pools and reference-counted, so two flows forwarded to
the same next hop cost a single pooled FORWARD action.

Times are integer microseconds; entry lifetimes are whole seconds (the wire
unit) and ``None`` means the entry never expires.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

US_PER_S = 1_000_000

#: Wire code for an entry that never expires.
LIFETIME_INFINITE_CODE = 0xFFFF

DEFAULT_CAPACITY = 16
DEFAULT_LOOKUP_COST_US = 200


class Tier(enum.IntEnum):
    WHITELIST = 0
    MAIN = 1


class MatchOp(enum.IntEnum):
    EQ = 1


class ActionKind(enum.IntEnum):
    FORWARD = 1
    SRH_SET = 2
    DROP = 3
    ACCEPT = 4
    FALLBACK_RPL = 5
    QUERY_CONTROLLER = 6


class TableFull(Exception):
    """No live MAIN entry can be evicted to make room."""


class UnknownEntry(KeyError):
    pass


@dataclass(frozen=True)
class Match:
    offset: int
    length: int
    value: bytes
    op: MatchOp = MatchOp.EQ

    def __post_init__(self) -> None:
        if not 0 <= self.offset <= 0xFF:
            raise ValueError(f"match offset out of range: {self.offset}")
        if not 1 <= self.length <= 4:
            raise ValueError(f"match length must be 1..4, got {self.length}")
        if len(self.value) != self.length:
            raise ValueError("match value length differs from declared length")

    def matches(self, view: bytes) -> bool:
        end = self.offset + self.length
        return end <= len(view) and view[self.offset:end] == self.value


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    next_hop: int = 0
    hops: tuple[int, ...] = ()

    @classmethod
    def forward(cls, next_hop: int) -> "Action":
        return cls(ActionKind.FORWARD, next_hop=next_hop)

    @classmethod
    def srh_set(cls, hops: Sequence[int]) -> "Action":
        return cls(ActionKind.SRH_SET, hops=tuple(hops))

    @classmethod
    def drop(cls) -> "Action":
        return cls(ActionKind.DROP)

    @classmethod
    def accept(cls) -> "Action":
        return cls(ActionKind.ACCEPT)

    @classmethod
    def fallback_rpl(cls) -> "Action":
        return cls(ActionKind.FALLBACK_RPL)

    @classmethod
    def query_controller(cls) -> "Action":
        return cls(ActionKind.QUERY_CONTROLLER)


@dataclass(frozen=True)
class FlowEntry:
    """An entry as the controller describes it (and as it travels in FTS/CONF)."""

    tier: Tier
    priority: int
    matches: tuple[Match, ...]
    actions: tuple[Action, ...]
    lifetime: int | None = None
    refresh_on_hit: bool = False

    def __post_init__(self) -> None:
        if not self.matches:
            raise ValueError("flow entry needs at least one match")
        if not 0 <= self.priority <= 0xFF:
            raise ValueError(f"priority out of range: {self.priority}")
        if self.lifetime is not None and not 0 < self.lifetime < LIFETIME_INFINITE_CODE:
            raise ValueError(f"lifetime out of range: {self.lifetime}")


@dataclass
class _Installed:
    id: int
    tier: Tier
    priority: int
    match_ids: tuple[int, ...]
    action_ids: tuple[int, ...]
    installed_at: int
    last_refresh: int
    lifetime_us: int | None
    refresh_on_hit: bool
    source: FlowEntry
    hits: int = 0

    def live(self, now: int) -> bool:
        return self.lifetime_us is None or self.last_refresh + self.lifetime_us > now

    def order_key(self) -> tuple[int, int, int, int]:
        return (int(self.tier), -self.priority, self.installed_at, self.id)


@dataclass(frozen=True)
class LookupResult:
    entry_id: int | None
    actions: tuple[Action, ...]
    scanned: int

    @property
    def hit(self) -> bool:
        return self.entry_id is not None


class _Pool:
    """Interns hashable items and reference-counts them."""

    def __init__(self) -> None:
        self._handle: dict[object, int] = {}
        self.items: dict[int, list] = {}  # handle -> [item, refcount]
        self._next = 1

    def acquire(self, item: object) -> int:
        h = self._handle.get(item)
        if h is None:
            h = self._next
            self._next += 1
            self._handle[item] = h
            self.items[h] = [item, 0]
        self.items[h][1] += 1
        return h

    def release(self, h: int) -> None:
        slot = self.items[h]
        slot[1] -= 1
        if slot[1] <= 0:
            del self._handle[slot[0]]
            del self.items[h]

    def get(self, h: int):
        return self.items[h][0]

    def refcount(self, item: object) -> int:
        h = self._handle.get(item)
        return 0 if h is None else self.items[h][1]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class HfsTable:
    capacity: int = DEFAULT_CAPACITY
    lookup_cost_us: int = DEFAULT_LOOKUP_COST_US
    match_pool: _Pool = field(default_factory=_Pool)
    action_pool: _Pool = field(default_factory=_Pool)
    _entries: dict[int, _Installed] = field(default_factory=dict)
    _order: list[_Installed] = field(default_factory=list)
    _next_id: int = 1

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, entry_id: int) -> _Installed:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise UnknownEntry(entry_id) from None

    def entries(self) -> list[_Installed]:
        return list(self._order)

    def live_count(self, now: int) -> int:
        return sum(1 for e in self._order if e.live(now))

    def matches_of(self, e: _Installed) -> tuple[Match, ...]:
        return tuple(self.match_pool.get(h) for h in e.match_ids)

    def actions_of(self, e: _Installed) -> tuple[Action, ...]:
        return tuple(self.action_pool.get(h) for h in e.action_ids)

    def _reorder(self) -> None:
        self._order.sort(key=_Installed.order_key)


def lookup(table: HfsTable, frame, now: int, touch: bool = True) -> LookupResult:
    """Return the first live entry whose matches all hold, in priority order.

    ``frame`` is either raw network-view bytes or an object with a ``view()``
    method. Expired entries are skipped but still count as scanned. With
    ``touch=False`` the hit counter and refresh-on-hit are left alone.
    """
    view = frame if isinstance(frame, (bytes, bytearray)) else frame.view()
    mpool = table.match_pool.items
    scanned = 0
    for e in table._order:
        scanned += 1
        if not e.live(now):
            continue
        if all(mpool[h][0].matches(view) for h in e.match_ids):
            if touch:
                e.hits += 1
                if e.refresh_on_hit:
                    e.last_refresh = now
            return LookupResult(e.id, table.actions_of(e), scanned)
    return LookupResult(None, (), scanned)


def _same_rule(e: _Installed, entry: FlowEntry, table: HfsTable) -> bool:
    return (
        e.tier == entry.tier
        and e.priority == entry.priority
        and table.matches_of(e) == entry.matches
    )


def install(table: HfsTable, entry: FlowEntry, now: int) -> int:
    """Install ``entry`` and return its id.

    An existing entry with the same tier, priority and matches is replaced
    (modify semantics). When the table is full, the live MAIN entry with the
    oldest refresh is evicted; whitelist entries are never evicted.
    """
    for old in list(table._order):
        if _same_rule(old, entry, table):
            remove(table, old.id)
    purge_expired(table, now)
    if len(table._entries) >= table.capacity:
        victims = [e for e in table._order if e.tier == Tier.MAIN]
        if not victims:
            raise TableFull(f"{table.capacity} whitelist entries, nothing evictable")
        victim = min(victims, key=lambda e: (e.last_refresh, e.id))
        remove(table, victim.id)

    eid = table._next_id
    table._next_id += 1
    rec = _Installed(
        id=eid,
        tier=Tier(entry.tier),
        priority=entry.priority,
        match_ids=tuple(table.match_pool.acquire(m) for m in entry.matches),
        action_ids=tuple(table.action_pool.acquire(a) for a in entry.actions),
        installed_at=now,
        last_refresh=now,
        lifetime_us=None if entry.lifetime is None else entry.lifetime * US_PER_S,
        refresh_on_hit=entry.refresh_on_hit,
        source=entry,
    )
    table._entries[eid] = rec
    table._order.append(rec)
    table._reorder()
    return eid


def remove(table: HfsTable, entry_id: int) -> None:
    rec = table._entries.pop(entry_id, None)
    if rec is None:
        raise UnknownEntry(entry_id)
    table._order.remove(rec)
    for h in rec.match_ids:
        table.match_pool.release(h)
    for h in rec.action_ids:
        table.action_pool.release(h)


def refresh(table: HfsTable, entry_id: int, now: int) -> None:
    """Reset an entry's lifetime. Also revives an expired entry not yet purged."""
    table.entry(entry_id).last_refresh = now


def purge_expired(table: HfsTable, now: int) -> int:
    dead = [e.id for e in table._order if not e.live(now)]
    for eid in dead:
        remove(table, eid)
    return len(dead)


# -- serialization -----------------------------------------------------------
#
# tier_flags(1)  bit0 = tier, bit7 = refresh-on-hit
# priority(1)
# lifetime(2)    seconds, 0xFFFF = infinite
# match_count(1) then per match: offset(1) length(1) value(length)
# action_count(1) then per action: kind(1) + args
#     FORWARD: next_hop(2)   SRH_SET: count(1) hop(2)*count   others: none

_FR_BIT = 0x80
SRH_SET_MAX_HOPS = 16


def encoded_entry_len(entry: FlowEntry) -> int:
    n = 4 + 1 + sum(2 + m.length for m in entry.matches) + 1
    for a in entry.actions:
        n += 1
        if a.kind == ActionKind.FORWARD:
            n += 2
        elif a.kind == ActionKind.SRH_SET:
            n += 1 + 2 * len(a.hops)
    return n


def _check_node(v: int, what: str) -> int:
    if not 1 <= v <= 0xFFFF:
        raise ValueError(f"{what} must be a nonzero 16-bit address, got {v}")
    return v


def encode_entry(entry: FlowEntry) -> bytes:
    flags = int(entry.tier) | (_FR_BIT if entry.refresh_on_hit else 0)
    life = LIFETIME_INFINITE_CODE if entry.lifetime is None else entry.lifetime
    if len(entry.matches) > 0xFF or len(entry.actions) > 0xFF:
        raise ValueError("too many matches or actions")
    out = bytearray(struct.pack(">BBHB", flags, entry.priority, life, len(entry.matches)))
    for m in entry.matches:
        out += bytes((m.offset, m.length)) + m.value
    out.append(len(entry.actions))
    for a in entry.actions:
        out.append(int(a.kind))
        if a.kind == ActionKind.FORWARD:
            out += struct.pack(">H", _check_node(a.next_hop, "forward next hop"))
        elif a.kind == ActionKind.SRH_SET:
            if not 1 <= len(a.hops) <= SRH_SET_MAX_HOPS:
                raise ValueError(f"SRH_SET needs 1..{SRH_SET_MAX_HOPS} hops")
            out.append(len(a.hops))
            for h in a.hops:
                out += struct.pack(">H", _check_node(h, "route hop"))
    return bytes(out)


class EntryDecodeError(ValueError):
    pass


def decode_entry(buf: bytes, pos: int = 0) -> tuple[FlowEntry, int]:
    """Parse one entry at ``pos``; returns the entry and the next offset."""

    def need(n: int) -> None:
        if pos + n > len(buf):
            raise EntryDecodeError("truncated flow entry")

    need(5)
    flags, priority, life, n_match = struct.unpack_from(">BBHB", buf, pos)
    pos += 5
    if flags & ~(_FR_BIT | 0x01):
        raise EntryDecodeError(f"reserved tier bits set: {flags:#x}")
    if life == 0:
        raise EntryDecodeError("zero lifetime")
    if n_match == 0:
        raise EntryDecodeError("entry without matches")
    matches = []
    for _ in range(n_match):
        need(2)
        off, length = buf[pos], buf[pos + 1]
        pos += 2
        if not 1 <= length <= 4:
            raise EntryDecodeError(f"bad match length {length}")
        need(length)
        matches.append(Match(off, length, bytes(buf[pos:pos + length])))
        pos += length
    need(1)
    n_act = buf[pos]
    pos += 1
    actions = []
    for _ in range(n_act):
        need(1)
        raw_kind = buf[pos]
        pos += 1
        try:
            kind = ActionKind(raw_kind)
        except ValueError:
            raise EntryDecodeError(f"unknown action kind {raw_kind}") from None
        if kind == ActionKind.FORWARD:
            need(2)
            (hop,) = struct.unpack_from(">H", buf, pos)
            pos += 2
            if hop == 0:
                raise EntryDecodeError("forward to unassigned address")
            actions.append(Action.forward(hop))
        elif kind == ActionKind.SRH_SET:
            need(1)
            count = buf[pos]
            pos += 1
            if not 1 <= count <= SRH_SET_MAX_HOPS:
                raise EntryDecodeError(f"bad SRH_SET hop count {count}")
            need(2 * count)
            hops = struct.unpack_from(f">{count}H", buf, pos)
            pos += 2 * count
            if 0 in hops:
                raise EntryDecodeError("SRH_SET hop is unassigned")
            actions.append(Action.srh_set(hops))
        else:
            actions.append(Action(kind))
    entry = FlowEntry(
        tier=Tier(flags & 0x01),
        priority=priority,
        matches=tuple(matches),
        actions=tuple(actions),
        lifetime=None if life == LIFETIME_INFINITE_CODE else life,
        refresh_on_hit=bool(flags & _FR_BIT),
    )
    return entry, pos


def make_entry(
    matches: Iterable[Match],
    actions: Iterable[Action],
    *,
    tier: Tier = Tier.MAIN,
    priority: int = 0,
    lifetime: int | None = None,
    refresh_on_hit: bool = False,
) -> FlowEntry:
    return FlowEntry(tier, priority, tuple(matches), tuple(actions), lifetime, refresh_on_hit)
