"""Per-seed F0/F1 delay and jitter, RPL-only vs re-routed, for the interference scenario."""

import argparse
from pathlib import Path
from statistics import median

from usdn_sim.config import load_scenario
from usdn_sim.sim import run_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def flow_stats(cfg, seed, source=7):
    rep, _ = run_scenario(cfg, seed)
    return {fid: rep.flow(source, fid) for fid in (0, 1)}


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    a = p.parse_args()
    rpl = load_scenario(SCENARIOS / "interference-rpl.cfg")
    sdn = load_scenario(SCENARIOS / "interference-usdn.cfg")
    print("seed  F1 delay rpl/sdn     F1 jitter rpl/sdn    F0 delay rpl/sdn")
    cols = {k: [] for k in ("d1b", "d1u", "j1b", "j1u", "d0b", "d0u")}
    for s in range(1, a.seeds + 1):
        b, u = flow_stats(rpl, s), flow_stats(sdn, s)
        row = (b[1]["median_latency_s"], u[1]["median_latency_s"], b[1]["jitter_s"], u[1]["jitter_s"],
               b[0]["median_latency_s"], u[0]["median_latency_s"])
        for k, v in zip(cols, row):
            cols[k].append(v)
        print(f"{s:4d}  {row[0]:.3f} / {row[1]:.3f}     {row[2]:.3f} / {row[3]:.3f}     {row[4]:.3f} / {row[5]:.3f}")
    m = {k: median(v) for k, v in cols.items()}
    print(f"median F1 delay {m['d1b']:.3f} -> {m['d1u']:.3f} s, "
          f"F1 jitter {m['j1b']:.3f} -> {m['j1u']:.3f} s, F0 delay {m['d0b']:.3f} -> {m['d0u']:.3f} s")


if __name__ == "__main__":
    main()
