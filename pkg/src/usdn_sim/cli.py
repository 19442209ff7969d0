"""Command line: run one scenario, sweep a parameter, or validate a file."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import SWEEP_AXES, ConfigInvalid, ScenarioConfig, load_scenario
from .output import emit_csv, emit_sweep_csv
from .sim import run_scenario

log = logging.getLogger("usdn_sim")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2


def _setup_logging() -> None:
    level = os.environ.get("USDN_SIM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _values(text: str) -> list[float | int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        v = float(part)
        out.append(int(v) if v.is_integer() else v)
    if not out:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    return out


def _sweep_one(args: tuple[ScenarioConfig, str, object, int]):
    cfg, axis, value, seed = args
    rep, _ = run_scenario(cfg.with_sdn(**{axis: value}), seed)
    return value, seed, rep


def cmd_run(a: argparse.Namespace) -> int:
    cfg = load_scenario(a.scenario)
    seed = cfg.seeds[0] if a.seed is None else a.seed
    log.info("running %s seed %d", cfg.name, seed)
    rep, mlog = run_scenario(cfg, seed)
    files = emit_csv(rep, a.out, mlog, events=a.events)
    s = rep.summary
    print(f"{cfg.name} seed {seed}: pdr={s['pdr']:.4f} "
          f"latency={s['mean_latency_s'] or 0:.4f}s rdc={s['mean_rdc']:.4f}")
    for f in files:
        print(f"  wrote {f}")
    return EXIT_OK


def cmd_sweep(a: argparse.Namespace) -> int:
    cfg = load_scenario(a.scenario)
    axis = a.axis or (cfg.sweep.axis if cfg.sweep else None)
    values = a.values or (list(cfg.sweep.values) if cfg.sweep else None)
    if axis is None or values is None:
        raise ConfigInvalid([("sweep", "give --axis and --values or a [sweep] section")])
    if axis not in SWEEP_AXES:
        raise ConfigInvalid([("sweep.axis", f"expected one of {', '.join(SWEEP_AXES)}")])
    if any(v <= 0 for v in values):
        raise ConfigInvalid([("sweep.values", "axis values must be positive")])
    seeds = list(range(1, a.seeds + 1)) if a.seeds else list(cfg.seeds)
    jobs = [(cfg, axis, v, s) for v in values for s in seeds]
    log.info("sweeping %s over %s with %d seeds", axis, values, len(seeds))
    if a.jobs > 1:
        with ProcessPoolExecutor(a.jobs) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    files = emit_sweep_csv(results, axis, a.out)
    print(f"{cfg.name}: {len(results)} runs over {axis}")
    for f in files:
        print(f"  wrote {f}")
    return EXIT_OK


def cmd_validate(a: argparse.Namespace) -> int:
    cfg = load_scenario(a.scenario)
    print(f"{a.scenario}: ok ({cfg.name}, {len(cfg.topology.node_ids())} nodes, "
          f"{len(cfg.flows)} flows, sdn {'on' if cfg.sdn.enabled else 'off'})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="usdn-sim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario with one seed")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--seed", type=int, default=None, help="defaults to the file's first seed")
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--events", action="store_true", help="also write events.csv")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a range of one SDN parameter")
    s.add_argument("--scenario", required=True, type=Path)
    s.add_argument("--axis", choices=SWEEP_AXES, default=None)
    s.add_argument("--values", type=_values, default=None, help="comma-separated, e.g. 60,180,600")
    s.add_argument("--seeds", type=int, default=None, help="use seeds 1..N")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(fn=cmd_sweep)

    v = sub.add_parser("validate", help="check a scenario file and exit")
    v.add_argument("--scenario", required=True, type=Path)
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    a = build_parser().parse_args(argv)
    try:
        return a.fn(a)
    except ConfigInvalid as e:
        for path, msg in e.errors:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - report and map to the generic exit code
        log.debug("failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
