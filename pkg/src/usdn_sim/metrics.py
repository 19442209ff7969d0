"""Event log and the aggregates derived from it.

Latency of a delivered frame is deliver time minus send time. Jitter is the
mean absolute difference between consecutive latencies of the same flow, in
send order. Hop rings group nodes by their final DODAG depth.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .simkernel import MacState, radio_on_time

US = 1_000_000


class RecordKind(str, enum.Enum):
    SEND = "SEND"
    DELIVER = "DELIVER"
    DROP = "DROP"
    RADIO_ON = "RADIO_ON"
    JOIN_DAG = "JOIN_DAG"
    JOIN_CTRL = "JOIN_CTRL"
    HOP = "HOP"
    LOSS = "LOSS"


CATEGORIES = ("APP", "RPL", "SDN_CBR", "SDN_VBR")
DROP_REASONS = (
    "ExceededRetries", "LostInterference", "LostChannel", "QueueFull", "BufferFull",
    "QueryTimeout", "Policy", "NoRoute", "RouteDesync", "MtuExceeded", "Unfinished",
)


class InconsistentLog(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Record:
    t: int
    kind: RecordKind
    node: int
    uid: int = 0
    category: str = ""
    msg: str = ""
    flow: tuple[int, int, int] | None = None  # (source, dest, flow_id)
    bytes: int = 0
    hops: int | None = None
    reason: str = ""
    peer: int | None = None
    until: int | None = None


@dataclass
class MetricsLog:
    records: list[Record] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: Record) -> None:
        self.records.append(rec)

    def of(self, kind: RecordKind) -> list[Record]:
        return [r for r in self.records if r.kind == kind]


@dataclass
class MetricsReport:
    scenario: str = ""
    seed: int = 0
    duration: int = 0
    summary: dict = field(default_factory=dict)
    per_node: list[dict] = field(default_factory=list)
    per_ring: list[dict] = field(default_factory=list)
    per_flow: list[dict] = field(default_factory=list)
    traffic: list[dict] = field(default_factory=list)

    def node(self, n: int) -> dict:
        for row in self.per_node:
            if row["node"] == n:
                return row
        raise KeyError(n)

    def flow(self, source: int, flow_id: int) -> dict:
        for row in self.per_flow:
            if row["source"] == source and row["flow_id"] == flow_id:
                return row
        raise KeyError((source, flow_id))

    def ring(self, h: int) -> dict:
        for row in self.per_ring:
            if row["ring"] == h:
                return row
        raise KeyError(h)


def jitter(latencies: Sequence[float]) -> float | None:
    if len(latencies) < 2:
        return None
    return sum(abs(b - a) for a, b in zip(latencies, latencies[1:])) / (len(latencies) - 1)


def percentile(xs: Sequence[float], q: float) -> float | None:
    """Linear-interpolated percentile, q in [0, 100]."""
    if not xs:
        return None
    s = sorted(xs)
    if len(s) == 1:
        return s[0]
    pos = (len(s) - 1) * q / 100
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def _mean(xs: Iterable[float]) -> float | None:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else None


def check_conservation(log: MetricsLog) -> dict[int, Record]:
    """Every APP send has exactly one terminal record. Returns uid -> SEND."""
    sends: dict[int, Record] = {}
    ends: dict[int, Record] = {}
    for r in log.records:
        if r.category != "APP":
            continue
        if r.kind == RecordKind.SEND:
            if r.uid in sends:
                raise InconsistentLog(f"frame {r.uid} sent twice")
            sends[r.uid] = r
        elif r.kind in (RecordKind.DELIVER, RecordKind.DROP):
            if r.uid in ends:
                raise InconsistentLog(f"frame {r.uid} has two terminal records")
            if r.uid not in sends:
                raise InconsistentLog(f"frame {r.uid} ends without a send")
            ends[r.uid] = r
    missing = set(sends) - set(ends)
    if missing:
        raise InconsistentLog(f"{len(missing)} APP frames never delivered or dropped, e.g. {min(missing)}")
    return sends


def compute_metrics(log: MetricsLog, config=None) -> MetricsReport:
    meta = log.meta
    duration = meta.get("duration", 0)
    nodes: list[int] = sorted(meta.get("nodes", []))
    root = meta.get("root")
    hops: dict[int, int | None] = meta.get("hops", {})
    sends = check_conservation(log)

    radio: dict[int, list[tuple[int, int]]] = defaultdict(list)
    join_dag: dict[int, int] = {}
    join_ctrl: dict[int, int] = {}
    traffic_pk = {c: 0 for c in CATEGORIES}
    traffic_b = {c: 0 for c in CATEGORIES}
    msg_counts: dict[str, int] = defaultdict(int)
    originated: dict[int, dict[str, int]] = defaultdict(lambda: {c: 0 for c in CATEGORIES})
    delivered: dict[int, Record] = {}
    drops: dict[str, int] = defaultdict(int)
    for r in log.records:
        k = r.kind
        if k == RecordKind.SEND:
            traffic_pk[r.category] += 1
            traffic_b[r.category] += r.bytes
            msg_counts[r.msg] += 1
            originated[r.node][r.category] += 1
        elif k == RecordKind.DELIVER and r.category == "APP":
            delivered[r.uid] = r
        elif k == RecordKind.DROP and r.category == "APP":
            drops[r.reason] += 1
        elif k == RecordKind.RADIO_ON:
            radio[r.node].append((r.t, r.until))
        elif k == RecordKind.JOIN_DAG:
            join_dag.setdefault(r.node, r.t)
        elif k == RecordKind.JOIN_CTRL:
            join_ctrl.setdefault(r.node, r.t)

    # per-flow latency series in send order
    series: dict[tuple[int, int, int], list[tuple[int, float]]] = defaultdict(list)
    sent_by_flow: dict[tuple[int, int, int], int] = defaultdict(int)
    for uid, s in sends.items():
        sent_by_flow[s.flow] += 1
        d = delivered.get(uid)
        if d is not None:
            series[s.flow].append((s.t, (d.t - s.t) / US))
    for v in series.values():
        v.sort()

    per_flow = []
    flow_jitter: dict[tuple[int, int, int], float | None] = {}
    for f in sorted(sent_by_flow):
        lat = [x for _, x in series.get(f, [])]
        j = jitter(lat)
        flow_jitter[f] = j
        per_flow.append({
            "source": f[0], "dest": f[1], "flow_id": f[2],
            "ring": hops.get(f[0]),
            "sent": sent_by_flow[f], "delivered": len(lat),
            "pdr": len(lat) / sent_by_flow[f],
            "mean_latency_s": _mean(lat),
            "median_latency_s": percentile(lat, 50),
            "p95_latency_s": percentile(lat, 95),
            "jitter_s": j,
        })

    wake = meta.get("wake_interval", 125_000)
    check = meta.get("channel_check", 2_000)
    phases = meta.get("phases", {})
    rdc_of: dict[int, float] = {}
    on_of: dict[int, int] = {}
    for n in nodes:
        mac = MacState(wake, check, phases.get(n, 0), radio.get(n, []))
        on = radio_on_time(mac, 0, duration) if duration > 0 else 0
        on_of[n] = on
        rdc_of[n] = on / duration if duration > 0 else 0.0

    per_node = []
    for n in nodes:
        flows = [f for f in sent_by_flow if f[0] == n]
        lat = [x for f in flows for _, x in series.get(f, [])]
        sent = sum(sent_by_flow[f] for f in flows)
        js = [flow_jitter[f] for f in flows if flow_jitter[f] is not None]
        per_node.append({
            "node": n,
            "ring": hops.get(n),
            "is_root": n == root,
            "app_sent": sent,
            "app_delivered": len(lat),
            "pdr": len(lat) / sent if sent else None,
            "mean_latency_s": _mean(lat),
            "p95_latency_s": percentile(lat, 95),
            "jitter_s": _mean(js),
            "rdc": rdc_of[n],
            "radio_on_s": on_of[n] / US,
            "join_dag_s": None if n not in join_dag else join_dag[n] / US,
            "join_ctrl_s": None if n not in join_ctrl else join_ctrl[n] / US,
            "tx_app": originated[n]["APP"],
            "tx_rpl": originated[n]["RPL"],
            "tx_sdn_cbr": originated[n]["SDN_CBR"],
            "tx_sdn_vbr": originated[n]["SDN_VBR"],
        })

    per_ring = []
    rings = sorted({h for n, h in hops.items() if h is not None and n != root and n in nodes})
    for h in rings:
        members = [n for n in nodes if hops.get(n) == h and n != root]
        flows = [f for f in sent_by_flow if f[0] in members]
        lat = [x for f in flows for _, x in series.get(f, [])]
        sent = sum(sent_by_flow[f] for f in flows)
        js = [flow_jitter[f] for f in flows if flow_jitter[f] is not None]
        per_ring.append({
            "ring": h,
            "nodes": len(members),
            "app_sent": sent,
            "app_delivered": len(lat),
            "pdr": len(lat) / sent if sent else None,
            "mean_latency_s": _mean(lat),
            "p95_latency_s": percentile(lat, 95),
            "jitter_s": _mean(js),
            "mean_rdc": _mean(rdc_of[n] for n in members),
        })

    total_pk = sum(traffic_pk.values())
    total_b = sum(traffic_b.values())
    traffic = [
        {
            "category": c,
            "packets": traffic_pk[c],
            "bytes": traffic_b[c],
            "packet_fraction": traffic_pk[c] / total_pk if total_pk else 0.0,
            "byte_fraction": traffic_b[c] / total_b if total_b else 0.0,
        }
        for c in CATEGORIES
    ]

    non_root = [n for n in nodes if n != root]
    all_lat = [x for v in series.values() for _, x in v]
    sdn = bool(meta.get("sdn_enabled", False))
    summary = {
        "scenario": meta.get("scenario", ""),
        "seed": meta.get("seed", 0),
        "sdn_enabled": sdn,
        "duration_s": duration / US,
        "nodes": len(nodes),
        "app_sent": len(sends),
        "app_delivered": len(delivered),
        "app_dropped": sum(drops.values()),
        "pdr": len(delivered) / len(sends) if sends else None,
        "mean_latency_s": _mean(all_lat),
        "median_latency_s": percentile(all_lat, 50),
        "p95_latency_s": percentile(all_lat, 95),
        "mean_jitter_s": _mean(j for j in flow_jitter.values() if j is not None),
        "mean_rdc": _mean(rdc_of[n] for n in non_root),
        "joined_dag": sum(1 for n in non_root if n in join_dag),
        "joined_ctrl": sum(1 for n in non_root if n in join_ctrl),
        "max_join_dag_s": max((join_dag[n] for n in non_root if n in join_dag), default=None),
        "max_join_ctrl_s": max((join_ctrl[n] for n in non_root if n in join_ctrl), default=None),
        "dis": msg_counts.get("DIS", 0),
        "dio": msg_counts.get("DIO", 0),
        "dao": msg_counts.get("DAO", 0),
        "nsu": msg_counts.get("NSU", 0),
        "ftq": msg_counts.get("FTQ", 0),
        "fts": msg_counts.get("FTS", 0),
        "conf": msg_counts.get("CONF", 0),
    }
    for k in ("max_join_dag_s", "max_join_ctrl_s"):
        if summary[k] is not None:
            summary[k] = summary[k] / US
    for reason in DROP_REASONS:
        summary[f"drop_{reason}"] = drops.get(reason, 0)
    unknown = set(drops) - set(DROP_REASONS)
    if unknown:
        raise InconsistentLog(f"unknown drop reasons {sorted(unknown)}")

    return MetricsReport(
        scenario=meta.get("scenario", ""), seed=meta.get("seed", 0), duration=duration,
        summary=summary, per_node=per_node, per_ring=per_ring, per_flow=per_flow, traffic=traffic,
    )
