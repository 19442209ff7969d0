"""Non-storing RPL with fixed-period beaconing and OF0 parent choice.

State transitions are plain functions over :class:`DodagState` that return
the messages to emit; the simulator decides when and how they travel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .wire import SRH_MAX_HOPS

US = 1_000_000

ROOT_RANK = 256
MIN_HOP_RANK_INCREASE = 256
INFINITE_RANK = 0xFFFF

# network payload bytes charged per message kind
RPL_MESSAGE_BYTES = {"DIS": 8, "DIO": 24, "DAO": 20}


class NoRoute(Exception):
    pass


@dataclass(frozen=True)
class RplTimers:
    dis_period: int = 10 * US
    dio_period: int = 60 * US
    dao_period: int = 300 * US
    route_lifetime: int = 600 * US
    dis_response_min: int = 100_000
    dis_response_max: int = 500_000
    dao_delay_max: int = 4 * US  # triggered DAOs wait U[0, this)


class RplKind(enum.Enum):
    DIS = "DIS"
    DIO = "DIO"
    DAO = "DAO"


@dataclass(frozen=True)
class RplMessage:
    kind: RplKind
    rank: int = INFINITE_RANK
    child: int = 0
    parent: int = 0

    @classmethod
    def dis(cls) -> "RplMessage":
        return cls(RplKind.DIS)

    @classmethod
    def dio(cls, rank: int) -> "RplMessage":
        return cls(RplKind.DIO, rank=rank)

    @classmethod
    def dao(cls, child: int, parent: int) -> "RplMessage":
        return cls(RplKind.DAO, child=child, parent=parent)

    @property
    def size(self) -> int:
        return RPL_MESSAGE_BYTES[self.kind.value]


@dataclass(frozen=True)
class Emission:
    """A message to send at ``at``; DAOs go to the root, the rest are broadcast."""

    msg: RplMessage
    at: int


@dataclass
class DodagState:
    node: int
    is_root: bool = False
    timers: RplTimers = field(default_factory=RplTimers)
    rank: int = INFINITE_RANK
    preferred_parent: int | None = None
    candidates: dict[int, int] = field(default_factory=dict)
    dis_next: int = 0
    dio_next: int | None = None
    dao_next: int | None = None
    dio_reply_at: int | None = None
    joined_at: int | None = None

    def __post_init__(self) -> None:
        if self.is_root:
            self.rank = ROOT_RANK
            self.joined_at = 0
            if self.dio_next is None:
                self.dio_next = 0

    @property
    def joined(self) -> bool:
        return self.rank != INFINITE_RANK

    @property
    def hops(self) -> int | None:
        return None if not self.joined else self.rank // MIN_HOP_RANK_INCREASE - 1

    def next_deadline(self) -> int:
        if self.is_root:
            return self.dio_next
        if not self.joined:
            return self.dis_next
        return min(self.dio_next, self.dao_next)


@dataclass(frozen=True)
class DioResult:
    parent_changed: bool
    emit: tuple[Emission, ...]


def _select_parent(candidates: dict[int, int]) -> int | None:
    if not candidates:
        return None
    return min(candidates, key=lambda n: (candidates[n], n))


def on_dio(
    state: DodagState, src: int, advertised_rank: int, now: int,
    first_dio: int | None = None, first_dao: int | None = None, dao_delay: int = 0,
) -> DioResult:
    """Record a neighbor's DIO and re-run OF0.

    The first join emits an immediate DIO plus a DAO; a later parent change
    emits a fresh DAO so the root's source routes follow the new parent.
    ``first_dio``/``first_dao`` delay the first periodic beacons after a
    join (default: one full period), which keeps a child from beaconing in
    lockstep with the parent it just heard. Triggered DAOs wait ``dao_delay``
    so siblings that joined on the same DIO do not all answer at once.
    """
    if src == state.node:
        raise ValueError("a node cannot hear its own DIO")
    if state.is_root:
        return DioResult(False, ())
    if advertised_rank >= INFINITE_RANK:
        state.candidates.pop(src, None)
    else:
        state.candidates[src] = advertised_rank
    old_parent, old_rank = state.preferred_parent, state.rank
    parent = _select_parent(state.candidates)
    state.preferred_parent = parent
    state.rank = (
        INFINITE_RANK
        if parent is None
        else min(INFINITE_RANK, state.candidates[parent] + MIN_HOP_RANK_INCREASE)
    )
    changed = parent != old_parent
    emit: list[Emission] = []
    if old_rank == INFINITE_RANK and state.joined:
        state.joined_at = now
        state.dio_next = now + (state.timers.dio_period if first_dio is None else first_dio)
        state.dao_next = now + (state.timers.dao_period if first_dao is None else first_dao)
        emit.append(Emission(RplMessage.dio(state.rank), now))
        emit.append(Emission(RplMessage.dao(state.node, parent), now + dao_delay))
    elif changed and parent is not None:
        emit.append(Emission(RplMessage.dao(state.node, parent), now + dao_delay))
        if state.rank != old_rank:
            emit.append(Emission(RplMessage.dio(state.rank), now))
    elif state.rank != old_rank and state.joined:
        emit.append(Emission(RplMessage.dio(state.rank), now))
    return DioResult(changed, tuple(emit))


def on_dis(state: DodagState, src: int, now: int, response_delay: int) -> list[Emission]:
    """Schedule one DIO in reply; further DIS before it goes out are coalesced."""
    if not state.joined:
        return []
    if state.dio_reply_at is not None and state.dio_reply_at >= now:
        return []
    state.dio_reply_at = now + response_delay
    return [Emission(RplMessage.dio(state.rank), state.dio_reply_at)]


def tick_rpl(state: DodagState, now: int) -> list[Emission]:
    """Fire every periodic timer that is due at ``now``."""
    t = state.timers
    out: list[Emission] = []
    if not state.joined:
        while state.dis_next <= now:
            out.append(Emission(RplMessage.dis(), state.dis_next))
            state.dis_next += t.dis_period
        return out
    if state.dio_next is not None and state.dio_next <= now:
        out.append(Emission(RplMessage.dio(state.rank), now))
        while state.dio_next <= now:
            state.dio_next += t.dio_period
    if not state.is_root and state.dao_next is not None and state.dao_next <= now:
        out.append(Emission(RplMessage.dao(state.node, state.preferred_parent), now))
        while state.dao_next <= now:
            state.dao_next += t.dao_period
    return out


# -- root side -----------------------------------------------------------------


@dataclass
class DaoRoute:
    parent: int
    expires: int


@dataclass
class DaoRouteTable:
    root: int
    route_lifetime: int = 600 * US
    routes: dict[int, DaoRoute] = field(default_factory=dict)
    rejected: int = 0

    def live_parent(self, node: int, now: int) -> int | None:
        r = self.routes.get(node)
        return r.parent if r is not None and r.expires > now else None


@dataclass(frozen=True)
class DaoResult:
    accepted: bool
    newly_reachable: bool


def on_dao(table: DaoRouteTable, dao: RplMessage, now: int) -> DaoResult:
    child, parent = dao.child, dao.parent
    if child == table.root or child == parent or parent == 0:
        table.rejected += 1
        return DaoResult(False, False)
    # walk from the proposed parent toward the root; meeting the child is a loop
    seen = set()
    cur = parent
    while cur != table.root and cur not in seen:
        if cur == child:
            table.rejected += 1
            return DaoResult(False, False)
        seen.add(cur)
        nxt = table.live_parent(cur, now)
        if nxt is None:
            break
        cur = nxt
    newly = table.live_parent(child, now) is None
    table.routes[child] = DaoRoute(parent, now + table.route_lifetime)
    return DaoResult(True, newly)


def root_source_route(table: DaoRouteTable, dest: int, now: int) -> list[int]:
    """Hops from the root to ``dest``, excluding the root and including ``dest``."""
    if dest == table.root:
        return []
    chain = [dest]
    cur = dest
    while True:
        parent = table.live_parent(cur, now)
        if parent is None:
            raise NoRoute(f"no live route entry for {cur}")
        if parent == table.root:
            break
        if parent in chain or len(chain) >= SRH_MAX_HOPS:
            raise NoRoute(f"route to {dest} loops or is too long")
        chain.append(parent)
        cur = parent
    chain.reverse()
    return chain
