"""Control-message codec, simulated frames and the compact source-routing header.

Layouts are big-endian and documented bit-exactly in ``docs/wire-format.md``.
A frame's on-air size is the fixed link/6LoWPAN overhead plus its payload
plus any source-routing header, and may never exceed the 127-byte MTU.
"""

from __future__ import annotations

import enum
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

from .flowtable import (
    EntryDecodeError,
    FlowEntry,
    Match,
    decode_entry,
    encode_entry,
)

MTU = 127
PAYLOAD_BUDGET = 53
LINK_OVERHEAD = MTU - PAYLOAD_BUDGET
HEADER_LEN = 6
NSU_FIXED_LEN = 2
NSU_NEIGHBOR_LEN = 3
NSU_MAX_NEIGHBORS = (PAYLOAD_BUDGET - HEADER_LEN - NSU_FIXED_LEN) // NSU_NEIGHBOR_LEN
SRH_MAX_HOPS = 16
PPQ_MAX_FIELDS = 8
SEQ_MODULO = 1 << 16
DUP_WINDOW = 8

# network view: src(2) dst(2) proto(1) flow_id(1) payload...
OFF_SRC = 0
OFF_DST = 2
OFF_PROTO = 4
OFF_FLOW = 5
OFF_PAYLOAD = 6
DEFAULT_PPQ_FIELDS = ((OFF_DST, 2), (OFF_FLOW, 1))


class WireError(ValueError):
    pass


class BudgetExceeded(WireError):
    pass


class MalformedFrame(WireError):
    pass


class MtuExceeded(WireError):
    pass


class RouteDesync(WireError):
    pass


class Proto(enum.IntEnum):
    APP = 1
    USDN = 2
    RPL = 3


class Category(str, enum.Enum):
    APP = "APP"
    RPL = "RPL"
    SDN_CBR = "SDN_CBR"
    SDN_VBR = "SDN_VBR"


class MsgKind(enum.IntEnum):
    NSU = 1
    FTQ = 2
    FTS = 3
    CONF = 4


class FtqReason(enum.IntEnum):
    TABLE_MISS = 1


def _u8(v: int, what: str) -> int:
    if not 0 <= v <= 0xFF:
        raise ValueError(f"{what} must fit 8 bits, got {v}")
    return v


def _u16(v: int, what: str) -> int:
    if not 0 <= v <= 0xFFFF:
        raise ValueError(f"{what} must fit 16 bits, got {v}")
    return v


def _node(v: int, what: str) -> int:
    if not 1 <= v <= 0xFFFF:
        raise ValueError(f"{what} must be a nonzero 16-bit address, got {v}")
    return v


@dataclass(frozen=True)
class FlowKey:
    dest: int
    flow_id: int

    def match_fields(self) -> tuple[Match, Match]:
        return (
            Match(OFF_DST, 2, struct.pack(">H", self.dest)),
            Match(OFF_FLOW, 1, bytes((self.flow_id,))),
        )


@dataclass(frozen=True)
class NsuBody:
    energy: int
    buffer_occupancy: int
    neighbors: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class FtqBody:
    flow_key: FlowKey
    partial_bytes: tuple[tuple[int, int], ...] = ()
    reason: FtqReason = FtqReason.TABLE_MISS


@dataclass(frozen=True)
class FtsBody:
    entries: tuple[FlowEntry, ...]


@dataclass(frozen=True)
class ConfBody:
    nsu_period: int
    ft_lifetime: int
    ftq_throttle_window: float = 1.0
    ppq_fields: tuple[tuple[int, int], ...] = DEFAULT_PPQ_FIELDS
    default_entries: tuple[FlowEntry, ...] = ()


_BODY_KIND = {NsuBody: MsgKind.NSU, FtqBody: MsgKind.FTQ, FtsBody: MsgKind.FTS, ConfBody: MsgKind.CONF}


@dataclass(frozen=True)
class UsdnMessage:
    seq: int
    src: int
    body: NsuBody | FtqBody | FtsBody | ConfBody

    @property
    def kind(self) -> MsgKind:
        return _BODY_KIND[type(self.body)]


# -- encoding ----------------------------------------------------------------


def _encode_nsu(b: NsuBody) -> bytes:
    out = bytearray((_u8(b.energy, "energy"), _u8(b.buffer_occupancy, "buffer occupancy")))
    for nbr, lq in b.neighbors:
        out += struct.pack(">HB", _node(nbr, "neighbor"), _u8(lq, "link quality"))
    return bytes(out)


def _encode_ftq(b: FtqBody) -> bytes:
    if len(b.partial_bytes) > PPQ_MAX_FIELDS:
        raise ValueError(f"at most {PPQ_MAX_FIELDS} partial bytes per query")
    out = bytearray(
        struct.pack(
            ">HBB",
            _node(b.flow_key.dest, "flow dest"),
            _u8(b.flow_key.flow_id, "flow id"),
            int(FtqReason(b.reason)),
        )
    )
    for off, val in b.partial_bytes:
        out += bytes((_u8(off, "ppq offset"), _u8(val, "ppq byte")))
    return bytes(out)


def _encode_entries(entries: Sequence[FlowEntry]) -> bytes:
    out = bytearray((_u8(len(entries), "entry count"),))
    for e in entries:
        out += encode_entry(e)
    return bytes(out)


def _encode_conf(b: ConfBody) -> bytes:
    if b.nsu_period <= 0 or b.ft_lifetime <= 0:
        raise ValueError("nsu_period and ft_lifetime must be positive")
    throttle_ms = round(b.ftq_throttle_window * 1000)
    if abs(throttle_ms - b.ftq_throttle_window * 1000) > 1e-6:
        raise ValueError("throttle window must be a whole number of milliseconds")
    if sum(length for _, length in b.ppq_fields) > PPQ_MAX_FIELDS:
        raise ValueError(f"ppq fields select more than {PPQ_MAX_FIELDS} bytes")
    out = bytearray(
        struct.pack(
            ">HHHB",
            _u16(b.nsu_period, "nsu period"),
            _u16(b.ft_lifetime, "flowtable lifetime"),
            _u16(throttle_ms, "throttle window"),
            len(b.ppq_fields),
        )
    )
    for off, length in b.ppq_fields:
        if length < 1:
            raise ValueError("ppq field length must be positive")
        out += bytes((_u8(off, "ppq offset"), _u8(length, "ppq length")))
    out += _encode_entries(b.default_entries)
    return bytes(out)


_ENCODERS = {
    MsgKind.NSU: _encode_nsu,
    MsgKind.FTQ: _encode_ftq,
    MsgKind.FTS: lambda b: _encode_entries(b.entries),
    MsgKind.CONF: _encode_conf,
}


def encode(msg: UsdnMessage) -> bytes:
    """Serialize ``msg``; raises BudgetExceeded past PAYLOAD_BUDGET bytes."""
    body = _ENCODERS[msg.kind](msg.body)
    total = HEADER_LEN + len(body)
    if total > PAYLOAD_BUDGET:
        raise BudgetExceeded(f"{msg.kind.name} encodes to {total} bytes > {PAYLOAD_BUDGET}")
    head = struct.pack(
        ">BHHB", int(msg.kind), _u16(msg.seq, "seq"), _node(msg.src, "src"), len(body)
    )
    return head + body


def encoded_len(msg: UsdnMessage) -> int:
    return HEADER_LEN + len(_ENCODERS[msg.kind](msg.body))


# -- decoding ----------------------------------------------------------------


def _decode_nsu(body: bytes) -> NsuBody:
    if len(body) < NSU_FIXED_LEN or (len(body) - NSU_FIXED_LEN) % NSU_NEIGHBOR_LEN:
        raise MalformedFrame(f"NSU body length {len(body)} is not 2 + 3n")
    nbrs = []
    for pos in range(NSU_FIXED_LEN, len(body), NSU_NEIGHBOR_LEN):
        nbr, lq = struct.unpack_from(">HB", body, pos)
        if nbr == 0:
            raise MalformedFrame("NSU neighbor is the unassigned address")
        nbrs.append((nbr, lq))
    return NsuBody(body[0], body[1], tuple(nbrs))


def _decode_ftq(body: bytes) -> FtqBody:
    if len(body) < 4 or (len(body) - 4) % 2:
        raise MalformedFrame(f"FTQ body length {len(body)} is not 4 + 2n")
    dest, flow_id, reason = struct.unpack_from(">HBB", body, 0)
    if dest == 0:
        raise MalformedFrame("FTQ for the unassigned address")
    try:
        reason = FtqReason(reason)
    except ValueError:
        raise MalformedFrame(f"unknown FTQ reason {reason}") from None
    pairs = tuple((body[i], body[i + 1]) for i in range(4, len(body), 2))
    if len(pairs) > PPQ_MAX_FIELDS:
        raise MalformedFrame("too many partial bytes")
    return FtqBody(FlowKey(dest, flow_id), pairs, reason)


def _decode_entries(body: bytes, pos: int) -> tuple[tuple[FlowEntry, ...], int]:
    if pos >= len(body):
        raise MalformedFrame("missing entry count")
    count = body[pos]
    pos += 1
    entries = []
    try:
        for _ in range(count):
            entry, pos = decode_entry(body, pos)
            entries.append(entry)
    except (EntryDecodeError, ValueError) as exc:
        raise MalformedFrame(str(exc)) from None
    return tuple(entries), pos


def _decode_fts(body: bytes) -> FtsBody:
    entries, pos = _decode_entries(body, 0)
    if pos != len(body):
        raise MalformedFrame("trailing bytes after FTS entries")
    return FtsBody(entries)


def _decode_conf(body: bytes) -> ConfBody:
    if len(body) < 7:
        raise MalformedFrame("CONF body truncated")
    nsu, life, throttle_ms, n_ppq = struct.unpack_from(">HHHB", body, 0)
    if nsu == 0 or life == 0:
        raise MalformedFrame("CONF period or lifetime is zero")
    pos = 7
    if pos + 2 * n_ppq > len(body):
        raise MalformedFrame("CONF ppq fields truncated")
    fields = tuple((body[pos + 2 * i], body[pos + 2 * i + 1]) for i in range(n_ppq))
    pos += 2 * n_ppq
    if any(length == 0 for _, length in fields) or sum(l for _, l in fields) > PPQ_MAX_FIELDS:
        raise MalformedFrame("CONF ppq fields invalid")
    entries, pos = _decode_entries(body, pos)
    if pos != len(body):
        raise MalformedFrame("trailing bytes after CONF entries")
    return ConfBody(nsu, life, throttle_ms / 1000, fields, entries)


_DECODERS = {
    MsgKind.NSU: _decode_nsu,
    MsgKind.FTQ: _decode_ftq,
    MsgKind.FTS: _decode_fts,
    MsgKind.CONF: _decode_conf,
}


def decode(data: bytes) -> UsdnMessage:
    if len(data) < HEADER_LEN:
        raise MalformedFrame(f"{len(data)} bytes is shorter than the header")
    if len(data) > PAYLOAD_BUDGET:
        raise MalformedFrame(f"{len(data)} bytes exceeds the payload budget")
    raw_kind, seq, src, body_len = struct.unpack_from(">BHHB", data, 0)
    try:
        kind = MsgKind(raw_kind)
    except ValueError:
        raise MalformedFrame(f"unknown message kind {raw_kind}") from None
    if src == 0:
        raise MalformedFrame("source is the unassigned address")
    if HEADER_LEN + body_len != len(data):
        raise MalformedFrame(f"body length field {body_len} disagrees with frame length")
    body = _DECODERS[kind](bytes(data[HEADER_LEN:]))
    return UsdnMessage(seq, src, body)


class SeqTracker:
    """Per-source duplicate filter over the last DUP_WINDOW sequence numbers."""

    def __init__(self, window: int = DUP_WINDOW) -> None:
        self.window = window
        self._seen: dict[int, deque[int]] = {}

    def is_duplicate(self, src: int, seq: int) -> bool:
        recent = self._seen.setdefault(src, deque(maxlen=self.window))
        if seq in recent:
            return True
        recent.append(seq)
        return False


def next_seq(seq: int) -> int:
    return (seq + 1) % SEQ_MODULO


def extract_ppq(view: bytes, fields: Sequence[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    """Pick the configured (offset, length) windows out of a frame view, byte by byte."""
    out = []
    for off, length in fields:
        for i in range(off, off + length):
            if i < len(view) and i <= 0xFF:
                out.append((i, view[i]))
    return tuple(out[:PPQ_MAX_FIELDS])


# -- source routing header -----------------------------------------------------


@dataclass(frozen=True)
class SourceRouteHeader:
    """Hops still to visit plus a cursor.

    ``segments_left`` counts transmissions still to make. ``origin`` is the node
    that inserted the header; on air it is the link-layer source of the first
    transmission, so it is not part of the encoded header.
    """

    hops: tuple[int, ...]
    segments_left: int
    origin: int = field(default=0, compare=False)

    @property
    def cost(self) -> int:
        return 2 + 2 * len(self.hops)


def srh_cost(n_hops: int) -> int:
    return 2 + 2 * n_hops


def encode_srh(srh: SourceRouteHeader) -> bytes:
    return struct.pack(f">BB{len(srh.hops)}H", srh.segments_left, len(srh.hops), *srh.hops)


def decode_srh(data: bytes) -> SourceRouteHeader:
    if len(data) < 2:
        raise MalformedFrame("SRH truncated")
    left, count = data[0], data[1]
    if not 1 <= count <= SRH_MAX_HOPS or left > count or len(data) != srh_cost(count):
        raise MalformedFrame("SRH header fields inconsistent")
    hops = struct.unpack_from(f">{count}H", data, 2)
    if 0 in hops:
        raise MalformedFrame("SRH hop is unassigned")
    return SourceRouteHeader(hops, left)


class SrhStep(enum.Enum):
    DELIVERED = "delivered"


DELIVERED = SrhStep.DELIVERED


@dataclass(eq=False)
class Frame:
    uid: int
    src: int
    dst: int
    proto: Proto
    kind: str
    category: Category
    payload: bytes = b""
    flow_id: int = 0
    key: tuple = ()
    created_at: int = 0
    srh: SourceRouteHeader | None = None
    hops: int = 0
    priority: int = 0
    rpl: object = None
    _view: bytes | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return LINK_OVERHEAD + len(self.payload) + (self.srh.cost if self.srh else 0)

    def view(self) -> bytes:
        if self._view is None:
            self._view = (
                struct.pack(">HHBB", self.src, self.dst, int(self.proto), self.flow_id)
                + self.payload
            )
        return self._view

    @property
    def flow_key(self) -> FlowKey:
        return FlowKey(self.dst, self.flow_id)


def srh_insert(frame: Frame, hops: Sequence[int], origin: int | None = None) -> Frame:
    """Return a copy of ``frame`` carrying a fresh header routed over ``hops``."""
    if frame.srh is not None:
        raise ValueError("frame already carries a source-routing header")
    hops = tuple(hops)
    if not 1 <= len(hops) <= SRH_MAX_HOPS:
        raise ValueError(f"route must have 1..{SRH_MAX_HOPS} hops, got {len(hops)}")
    for h in hops:
        _node(h, "route hop")
    size = frame.size + srh_cost(len(hops))
    if size > MTU:
        raise MtuExceeded(f"frame would be {size} bytes with a {len(hops)}-hop header")
    srh = SourceRouteHeader(hops, len(hops), frame.src if origin is None else origin)
    return replace(frame, srh=srh)


def srh_next(frame: Frame, self_id: int) -> int | SrhStep:
    """Advance the header at ``self_id``; returns the next hop or DELIVERED.

    The node that inserted the header makes the first call and each later hop
    consumes one segment. Reaching the last listed hop is delivery whatever
    the remaining count says.
    """
    srh = frame.srh
    if srh is None:
        raise ValueError("frame has no source-routing header")
    if self_id == srh.hops[-1]:
        if srh.segments_left:
            frame.srh = replace(srh, segments_left=0)
        return DELIVERED
    n = len(srh.hops)
    pos = n - srh.segments_left
    if pos == n:
        raise RouteDesync(f"node {self_id} got a frame routed to {srh.hops[-1]}")
    holder = srh.origin if pos == 0 else srh.hops[pos - 1]
    if self_id != holder:
        raise RouteDesync(f"node {self_id} is not hop {holder} of {srh.hops}")
    frame.srh = replace(srh, segments_left=srh.segments_left - 1)
    return srh.hops[pos]
