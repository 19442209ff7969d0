"""Scenario files: TOML with strict key checking and field-level errors.

Times in files are seconds; they become integer microseconds on load.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import FlowPolicy, PolicyMode, PolicyRule
from .node import AppFlowSpec, Features, Priority
from .rpl import RplTimers
from .simkernel import InterferenceSource, MacConfig
from .wire import DEFAULT_PPQ_FIELDS, PPQ_MAX_FIELDS, FlowKey

US = 1_000_000


class ConfigInvalid(ValueError):
    def __init__(self, errors: list[tuple[str, str]]) -> None:
        self.errors = errors
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "ring"
    nodes: int = 30
    max_hops: int = 5
    root: int = 1
    layout_seed: int | None = None
    positions: tuple[tuple[int, tuple[float, float]], ...] = ()

    def node_ids(self) -> list[int]:
        if self.kind == "explicit":
            return sorted(n for n, _ in self.positions)
        return list(range(self.root, self.root + self.nodes))


SWEEP_AXES = ("nsu_period", "ft_lifetime", "throttle_window", "flowtable_capacity")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple


@dataclass(frozen=True)
class SdnConfig:
    enabled: bool = True
    nsu_period: int = 180
    ft_lifetime: int = 600
    throttle_window: float = 1.0
    features: Features = field(default_factory=Features)
    ppq_fields: tuple[tuple[int, int], ...] = DEFAULT_PPQ_FIELDS
    flowtable_capacity: int = 16
    lookup_cost: int = 200
    pending_cap: int = 4
    pending_timeout: int = 5 * US
    weighted_paths: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    duration: int = 3600 * US
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    tx_range: float = 100.0
    link_success: float = 0.9
    mac: MacConfig = field(default_factory=MacConfig)
    processing_delay: int = 500
    rpl: RplTimers = field(default_factory=RplTimers)
    sdn: SdnConfig = field(default_factory=SdnConfig)
    flows: tuple[AppFlowSpec, ...] = ()
    policy: FlowPolicy = field(default_factory=FlowPolicy)
    interferers: tuple[InterferenceSource, ...] = ()
    seeds: tuple[int, ...] = (1,)
    app_tail: int = 30 * US
    sweep: "SweepSpec | None" = None

    def with_sdn(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, sdn=dataclasses.replace(self.sdn, **changes))


_SECTIONS = {
    "": {"name", "duration", "seeds", "app_tail", "topology", "radio", "mac", "rpl", "sdn",
         "flows", "policies", "interferers", "sweep"},
    "topology": {"kind", "nodes", "max_hops", "root", "layout_seed", "positions"},
    "radio": {"tx_range", "link_success"},
    "mac": {"wake_interval", "channel_check", "byte_time", "max_retries", "backoff",
            "queue_capacity", "processing_delay", "half_duplex"},
    "rpl": {"dis_period", "dio_period", "dao_period", "route_lifetime", "dis_response", "dao_delay"},
    "sdn": {"enabled", "nsu_period", "ft_lifetime", "throttle_window", "features", "ppq_fields",
            "flowtable_capacity", "lookup_cost", "pending_cap", "pending_timeout", "weighted_paths"},
    "flows": {"flow_id", "source", "dest", "interval", "priority", "payload", "start", "stop"},
    "policies": {"flow", "mode", "path", "avoid", "priority"},
    "interferers": {"position", "range", "period", "duration", "phase"},
    "sweep": {"axis", "values"},
}
_FEATURES = {"SRHI": "srhi", "CMQ": "cmq", "PPQ": "ppq", "FR": "fr"}


class _Reader:
    def __init__(self) -> None:
        self.errors: list[tuple[str, str]] = []

    def err(self, path: str, msg: str) -> None:
        self.errors.append((path, msg))

    def keys(self, table: Any, section: str, path: str) -> dict:
        if not isinstance(table, dict):
            self.err(path or "<root>", "expected a table")
            return {}
        for k in table:
            if k not in _SECTIONS[section]:
                self.err(f"{path}.{k}" if path else k, "unknown key")
        return table

    def num(self, t: dict, key: str, path: str, default, *, lo=None, hi=None, integer=False,
            lo_open=False):
        if key not in t:
            return default
        v = t[key]
        p = f"{path}.{key}" if path else key
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.err(p, f"expected a number, got {v!r}")
            return default
        if integer and not (isinstance(v, int) or float(v).is_integer()):
            self.err(p, f"expected an integer, got {v!r}")
            return default
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.err(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
            return default
        if hi is not None and v > hi:
            self.err(p, f"must be <= {hi}, got {v}")
            return default
        return int(v) if integer else v

    def boolean(self, t: dict, key: str, path: str, default: bool) -> bool:
        if key not in t:
            return default
        v = t[key]
        if not isinstance(v, bool):
            self.err(f"{path}.{key}", f"expected true/false, got {v!r}")
            return default
        return v

    def pair(self, t: dict, key: str, path: str, default, *, lo_open=0.0):
        """A number (fixed) or [lo, hi] range, both positive."""
        if key not in t:
            return default
        v = t[key]
        p = f"{path}.{key}"
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v, v]
        if (
            not isinstance(v, list) or len(v) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
        ):
            self.err(p, "expected a number or a [lo, hi] pair")
            return default
        lo, hi = v
        if lo <= lo_open or hi < lo:
            self.err(p, f"need {lo_open} < lo <= hi, got {v}")
            return default
        return float(lo), float(hi)


def _us(seconds: float) -> int:
    return round(seconds * US)


def parse_scenario(data: dict, name: str = "scenario") -> ScenarioConfig:
    r = _Reader()
    top = r.keys(data, "", "")

    nm = top.get("name", name)
    if not isinstance(nm, str) or not nm:
        r.err("name", "expected a non-empty string")
        nm = name
    duration = r.num(top, "duration", "", 3600, lo=0, lo_open=True)
    app_tail = r.num(top, "app_tail", "", 30, lo=0)
    seeds = top.get("seeds", [1])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = list(range(1, seeds + 1))
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        r.err("seeds", "expected a count or a non-empty list of non-negative integers")
        seeds = [1]

    # topology
    tt = r.keys(top.get("topology", {}), "topology", "topology")
    kind = tt.get("kind", "ring")
    if kind not in ("ring", "explicit"):
        r.err("topology.kind", f"expected 'ring' or 'explicit', got {kind!r}")
        kind = "ring"
    root = r.num(tt, "root", "topology", 1, lo=1, hi=0xFFFF, integer=True)
    positions: list[tuple[int, tuple[float, float]]] = []
    if kind == "explicit":
        raw = tt.get("positions")
        if not isinstance(raw, dict) or not raw:
            r.err("topology.positions", "explicit topology needs a positions table")
        else:
            for k, v in raw.items():
                p = f"topology.positions.{k}"
                try:
                    nid = int(k)
                except ValueError:
                    r.err(p, "node ids must be integers")
                    continue
                if not 1 <= nid <= 0xFFFF:
                    r.err(p, "node id must be in 1..65535")
                    continue
                if (
                    not isinstance(v, list) or len(v) != 2
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
                ):
                    r.err(p, "expected [x, y]")
                    continue
                positions.append((nid, (float(v[0]), float(v[1]))))
            positions.sort()
            if positions and root not in {n for n, _ in positions}:
                r.err("topology.root", f"root {root} has no position")
    elif "positions" in tt:
        r.err("topology.positions", "only valid for kind = 'explicit'")
    n_nodes = r.num(tt, "nodes", "topology", 30, lo=2, hi=255, integer=True)
    max_hops = r.num(tt, "max_hops", "topology", 5, lo=1, hi=15, integer=True)
    if kind == "ring" and n_nodes - 1 < max_hops:
        r.err("topology.nodes", f"{n_nodes} nodes cannot fill {max_hops} hop rings")
    layout_seed = tt.get("layout_seed")
    if layout_seed is not None and (not isinstance(layout_seed, int) or isinstance(layout_seed, bool)):
        r.err("topology.layout_seed", "expected an integer")
        layout_seed = None
    topo = TopologyConfig(
        kind, n_nodes if kind == "ring" else len(positions), max_hops, root, layout_seed,
        tuple(positions),
    )
    ids = set(topo.node_ids())

    rt = r.keys(top.get("radio", {}), "radio", "radio")
    tx_range = r.num(rt, "tx_range", "radio", 100.0, lo=0, lo_open=True)
    link_success = r.num(rt, "link_success", "radio", 0.9, lo=0, hi=1, lo_open=True)

    mt = r.keys(top.get("mac", {}), "mac", "mac")
    bo = r.pair(mt, "backoff", "mac", (0.002, 0.008), lo_open=-1e-12)
    mac = MacConfig(
        wake_interval=_us(r.num(mt, "wake_interval", "mac", 0.125, lo=0, lo_open=True)),
        channel_check=_us(r.num(mt, "channel_check", "mac", 0.002, lo=0)),
        byte_time=_us(r.num(mt, "byte_time", "mac", 32e-6, lo=0, lo_open=True)),
        max_retries=r.num(mt, "max_retries", "mac", 3, lo=0, hi=15, integer=True),
        backoff_min=_us(bo[0]),
        backoff_max=_us(bo[1]),
        queue_capacity=r.num(mt, "queue_capacity", "mac", 8, lo=1, integer=True),
        half_duplex=r.boolean(mt, "half_duplex", "mac", True),
    )
    if mac.channel_check > mac.wake_interval:
        r.err("mac.channel_check", "cannot exceed wake_interval")
    proc = _us(r.num(mt, "processing_delay", "mac", 0.0005, lo=0))

    pt = r.keys(top.get("rpl", {}), "rpl", "rpl")
    dis_resp = r.pair(pt, "dis_response", "rpl", (0.1, 0.5), lo_open=-1e-12)
    rpl = RplTimers(
        dis_period=_us(r.num(pt, "dis_period", "rpl", 10, lo=0, lo_open=True)),
        dio_period=_us(r.num(pt, "dio_period", "rpl", 60, lo=0, lo_open=True)),
        dao_period=_us(r.num(pt, "dao_period", "rpl", 300, lo=0, lo_open=True)),
        route_lifetime=_us(r.num(pt, "route_lifetime", "rpl", 600, lo=0, lo_open=True)),
        dis_response_min=_us(dis_resp[0]),
        dis_response_max=_us(dis_resp[1]),
        dao_delay_max=_us(r.num(pt, "dao_delay", "rpl", 4.0, lo=0)),
    )
    if rpl.dao_period >= rpl.route_lifetime:
        r.err("rpl.dao_period", "must be shorter than route_lifetime or routes lapse")

    st = r.keys(top.get("sdn", {}), "sdn", "sdn")
    feats = st.get("features", list(_FEATURES))
    if not isinstance(feats, list) or not all(isinstance(f, str) and f.upper() in _FEATURES for f in feats):
        r.err("sdn.features", f"expected a list drawn from {sorted(_FEATURES)}")
        feats = list(_FEATURES)
    features = Features(**{v: k in {f.upper() for f in feats} for k, v in _FEATURES.items()})
    ppq_raw = st.get("ppq_fields", [list(p) for p in DEFAULT_PPQ_FIELDS])
    ppq: tuple[tuple[int, int], ...] = DEFAULT_PPQ_FIELDS
    if (
        not isinstance(ppq_raw, list)
        or not all(
            isinstance(p, list) and len(p) == 2
            and all(isinstance(x, int) and not isinstance(x, bool) for x in p)
            and 0 <= p[0] <= 255 and p[1] >= 1
            for p in ppq_raw
        )
        or sum(p[1] for p in ppq_raw) > PPQ_MAX_FIELDS
    ):
        r.err("sdn.ppq_fields", f"expected [[offset, length], ...] selecting at most {PPQ_MAX_FIELDS} bytes")
    else:
        ppq = tuple((p[0], p[1]) for p in ppq_raw)
    throttle = r.num(st, "throttle_window", "sdn", 1.0, lo=0.001, hi=65.535)
    if abs(throttle * 1000 - round(throttle * 1000)) > 1e-9:
        r.err("sdn.throttle_window", "must be a whole number of milliseconds")
    sdn = SdnConfig(
        enabled=r.boolean(st, "enabled", "sdn", True),
        nsu_period=r.num(st, "nsu_period", "sdn", 180, lo=1, hi=0xFFFF, integer=True),
        ft_lifetime=r.num(st, "ft_lifetime", "sdn", 600, lo=1, hi=0xFFFE, integer=True),
        throttle_window=float(throttle),
        features=features,
        ppq_fields=ppq,
        flowtable_capacity=r.num(st, "flowtable_capacity", "sdn", 16, lo=3, integer=True),
        lookup_cost=_us(r.num(st, "lookup_cost", "sdn", 0.0002, lo=0)),
        pending_cap=r.num(st, "pending_cap", "sdn", 4, lo=0, integer=True),
        pending_timeout=_us(r.num(st, "pending_timeout", "sdn", 5.0, lo=0, lo_open=True)),
        weighted_paths=r.boolean(st, "weighted_paths", "sdn", False),
    )

    flows = _parse_flows(r, top.get("flows", []), topo, ids)
    policy = _parse_policies(r, top.get("policies", []), ids)
    interferers = _parse_interferers(r, top.get("interferers", []))
    sweep = _parse_sweep(r, top["sweep"]) if "sweep" in top else None

    if r.errors:
        raise ConfigInvalid(r.errors)
    return ScenarioConfig(
        name=nm, duration=_us(duration), topology=topo, tx_range=float(tx_range),
        link_success=float(link_success), mac=mac, processing_delay=proc, rpl=rpl, sdn=sdn,
        flows=tuple(flows), policy=policy, interferers=tuple(interferers),
        seeds=tuple(seeds), app_tail=_us(app_tail), sweep=sweep,
    )


def _parse_sweep(r: _Reader, raw) -> SweepSpec | None:
    t = r.keys(raw, "sweep", "sweep")
    axis = t.get("axis")
    if axis not in SWEEP_AXES:
        r.err("sweep.axis", f"expected one of {', '.join(SWEEP_AXES)}, got {axis!r}")
        return None
    values = t.get("values")
    if (
        not isinstance(values, list) or not values
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in values)
    ):
        r.err("sweep.values", "expected a non-empty list of positive numbers")
        return None
    return SweepSpec(axis, tuple(values))


def _priority(r: _Reader, t: dict, path: str) -> Priority:
    v = t.get("priority", "LOW")
    if not isinstance(v, str) or v.upper() not in Priority.__members__:
        r.err(f"{path}.priority", "expected 'LOW' or 'HIGH'")
        return Priority.LOW
    return Priority[v.upper()]


def _parse_flows(r: _Reader, raw, topo: TopologyConfig, ids: set[int]) -> list[AppFlowSpec]:
    if not isinstance(raw, list):
        r.err("flows", "expected an array of tables ([[flows]])")
        return []
    out: list[AppFlowSpec] = []
    for i, ft in enumerate(raw):
        p = f"flows[{i}]"
        ft = r.keys(ft, "flows", p)
        if not ft:
            continue
        dest = ft.get("dest", topo.root)
        if not isinstance(dest, int) or dest not in ids:
            r.err(f"{p}.dest", f"unknown node {dest!r}")
            continue
        src = ft.get("source")
        if src == "all":
            sources = [n for n in sorted(ids) if n != dest]
        elif isinstance(src, int) and not isinstance(src, bool) and src in ids and src != dest:
            sources = [src]
        else:
            r.err(f"{p}.source", f"expected a node id other than dest, or 'all'; got {src!r}")
            continue
        fid = ft.get("flow_id", "source")
        if fid != "source" and (not isinstance(fid, int) or not 0 <= fid <= 255):
            r.err(f"{p}.flow_id", "expected 0..255 or 'source'")
            continue
        interval = r.pair(ft, "interval", p, None)
        if interval is None:
            if "interval" not in ft:
                r.err(f"{p}.interval", "required")
            continue
        payload = r.num(ft, "payload", p, 20, lo=0, hi=53, integer=True)
        start = r.num(ft, "start", p, 0.0, lo=0)
        stop = r.num(ft, "stop", p, None, lo=0)
        prio = _priority(r, ft, p)
        for s in sources:
            flow_id = s & 0xFF if fid == "source" else fid
            out.append(AppFlowSpec(flow_id, s, dest, interval, prio, payload, float(start),
                                   None if stop is None else float(stop)))
    seen = {}
    for f in out:
        k = (f.dest, f.flow_id)
        if k in seen:
            r.err("flows", f"flow id {f.flow_id} to {f.dest} is used twice")
        seen[k] = f
    return out


def _node_list(r: _Reader, v, path: str, ids: set[int]) -> tuple[int, ...] | None:
    if not isinstance(v, list) or not all(isinstance(x, int) and x in ids for x in v):
        r.err(path, "expected a list of known node ids")
        return None
    return tuple(v)


def _parse_policies(r: _Reader, raw, ids: set[int]) -> FlowPolicy:
    if not isinstance(raw, list):
        r.err("policies", "expected an array of tables ([[policies]])")
        return FlowPolicy()
    rules = []
    for i, pt in enumerate(raw):
        p = f"policies[{i}]"
        pt = r.keys(pt, "policies", p)
        if not pt:
            continue
        flow = pt.get("flow", "*")
        key = None
        if flow != "*":
            if (
                not isinstance(flow, dict) or set(flow) != {"dest", "flow_id"}
                or not all(isinstance(x, int) for x in flow.values())
            ):
                r.err(f"{p}.flow", "expected '*' or {dest = <id>, flow_id = <id>}")
                continue
            key = FlowKey(flow["dest"], flow["flow_id"])
        mode = pt.get("mode", "SHORTEST")
        if not isinstance(mode, str) or mode.upper() not in PolicyMode.__members__:
            r.err(f"{p}.mode", "expected SHORTEST, PIN or AVOID")
            continue
        mode = PolicyMode[mode.upper()]
        path: tuple[int, ...] = ()
        avoid: frozenset[int] = frozenset()
        if mode == PolicyMode.PIN:
            path = _node_list(r, pt.get("path"), f"{p}.path", ids) or ()
            if not path:
                r.err(f"{p}.path", "PIN needs a non-empty path")
                continue
        elif "path" in pt:
            r.err(f"{p}.path", "only valid with mode = 'PIN'")
        if mode == PolicyMode.AVOID:
            avoid = frozenset(_node_list(r, pt.get("avoid"), f"{p}.avoid", ids) or ())
        elif "avoid" in pt:
            r.err(f"{p}.avoid", "only valid with mode = 'AVOID'")
        rules.append(PolicyRule(key, mode, path, avoid, _priority(r, pt, p)))
    return FlowPolicy(tuple(rules))


def _parse_interferers(r: _Reader, raw) -> list[InterferenceSource]:
    if not isinstance(raw, list):
        r.err("interferers", "expected an array of tables ([[interferers]])")
        return []
    out = []
    for i, it in enumerate(raw):
        p = f"interferers[{i}]"
        it = r.keys(it, "interferers", p)
        if not it:
            continue
        pos = it.get("position")
        if (
            not isinstance(pos, list) or len(pos) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in pos)
        ):
            r.err(f"{p}.position", "expected [x, y]")
            continue
        period = _us(r.num(it, "period", p, 0.1, lo=0, lo_open=True))
        duration = _us(r.num(it, "duration", p, 0.015, lo=0))
        if duration > period:
            r.err(f"{p}.duration", "cannot exceed period")
        out.append(InterferenceSource(
            (float(pos[0]), float(pos[1])),
            float(r.num(it, "range", p, 50.0, lo=0)),
            period, duration,
            _us(r.num(it, "phase", p, 0.0, lo=0)),
        ))
    return out


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid([("<file>", f"{path}: {exc}")]) from None
    return parse_scenario(data, path.stem)
