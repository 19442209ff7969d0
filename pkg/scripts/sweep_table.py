"""Pivot a sweep's summary.csv: one row per axis value, mean and per-seed columns."""

import argparse
import csv
from collections import defaultdict
from pathlib import Path
from statistics import mean


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("sweep_dir", type=Path, help="directory written by `usdn-sim sweep`")
    p.add_argument("--metric", default="mean_latency_s")
    a = p.parse_args()
    by_value = defaultdict(dict)
    with open(a.sweep_dir / "summary.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row[a.metric]:
                by_value[float(row["value"])][int(row["seed"])] = float(row[a.metric])
    seeds = sorted({s for v in by_value.values() for s in v})
    print("value,mean," + ",".join(f"seed{s}" for s in seeds))
    for v in sorted(by_value):
        vals = by_value[v]
        cells = ",".join(f"{vals[s]:.6f}" if s in vals else "" for s in seeds)
        print(f"{v:g},{mean(vals.values()):.6f},{cells}")


if __name__ == "__main__":
    main()
