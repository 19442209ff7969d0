"""CSV writers for single runs and long-format sweeps."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import DROP_REASONS, MetricsLog, MetricsReport

SUMMARY_COLUMNS = (
    "scenario", "seed", "sdn_enabled", "duration_s", "nodes",
    "app_sent", "app_delivered", "app_dropped", "pdr",
    "mean_latency_s", "median_latency_s", "p95_latency_s", "mean_jitter_s", "mean_rdc",
    "joined_dag", "joined_ctrl", "max_join_dag_s", "max_join_ctrl_s",
    "dis", "dio", "dao", "nsu", "ftq", "fts", "conf",
) + tuple(f"drop_{r}" for r in DROP_REASONS)

PER_NODE_COLUMNS = (
    "node", "ring", "is_root", "app_sent", "app_delivered", "pdr",
    "mean_latency_s", "p95_latency_s", "jitter_s", "rdc", "radio_on_s",
    "join_dag_s", "join_ctrl_s", "tx_app", "tx_rpl", "tx_sdn_cbr", "tx_sdn_vbr",
)

PER_RING_COLUMNS = (
    "ring", "nodes", "app_sent", "app_delivered", "pdr",
    "mean_latency_s", "p95_latency_s", "jitter_s", "mean_rdc",
)

PER_FLOW_COLUMNS = (
    "source", "dest", "flow_id", "ring", "sent", "delivered", "pdr",
    "mean_latency_s", "median_latency_s", "p95_latency_s", "jitter_s",
)

TRAFFIC_COLUMNS = ("category", "packets", "bytes", "packet_fraction", "byte_fraction")

EVENT_COLUMNS = (
    "t_s", "kind", "node", "uid", "category", "msg", "source", "dest", "flow_id",
    "bytes", "hops", "reason", "peer", "until_s",
)

TABLES = {
    "summary.csv": SUMMARY_COLUMNS,
    "per_node.csv": PER_NODE_COLUMNS,
    "per_ring.csv": PER_RING_COLUMNS,
    "per_flow.csv": PER_FLOW_COLUMNS,
    "traffic_ratio.csv": TRAFFIC_COLUMNS,
}


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _rows(report: MetricsReport, name: str) -> list[dict]:
    if name == "summary.csv":
        return [report.summary] if report.summary else []
    return {
        "per_node.csv": report.per_node,
        "per_ring.csv": report.per_ring,
        "per_flow.csv": report.per_flow,
        "traffic_ratio.csv": report.traffic,
    }[name]


def write_table(path: Path, columns: Sequence[str], rows: Iterable[dict], prefix: dict | None = None) -> int:
    prefix = prefix or {}
    cols = list(prefix) + list(columns)
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(prefix[c]) if c in prefix else fmt(row.get(c)) for c in cols])
            n += 1
    return n


def event_rows(log: MetricsLog) -> Iterable[dict]:
    for r in log.records:
        src, dst, fid = r.flow if r.flow is not None else (None, None, None)
        yield {
            "t_s": r.t / 1e6, "kind": r.kind.value, "node": r.node, "uid": r.uid or None,
            "category": r.category, "msg": r.msg, "source": src, "dest": dst, "flow_id": fid,
            "bytes": r.bytes or None, "hops": r.hops, "reason": r.reason, "peer": r.peer,
            "until_s": None if r.until is None else r.until / 1e6,
        }


def emit_csv(report: MetricsReport, out_dir: str | Path, log: MetricsLog | None = None,
             events: bool = False) -> list[Path]:
    """Write one run's tables into ``out_dir``; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, cols in TABLES.items():
        write_table(out / name, cols, _rows(report, name))
        written.append(out / name)
    if events:
        if log is None:
            raise ValueError("events.csv needs the run's log")
        write_table(out / "events.csv", EVENT_COLUMNS, event_rows(log))
        written.append(out / "events.csv")
    return written


def emit_sweep_csv(results: Sequence[tuple[object, int, MetricsReport]], axis: str,
                   out_dir: str | Path) -> list[Path]:
    """Long format: every table gains leading ``axis``/``value``/``seed`` columns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=lambda r: (r[0], r[1]))
    written = []
    for name, cols in TABLES.items():
        path = out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axis", "value", "seed"] + list(cols))
            for value, seed, rep in ordered:
                for row in _rows(rep, name):
                    w.writerow([axis, fmt(value), str(seed)] + [fmt(row.get(c)) for c in cols])
        written.append(path)
    return written
