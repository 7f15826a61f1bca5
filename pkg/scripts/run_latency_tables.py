#!/usr/bin/env python3
"""Latency experiment: measure E2E and per-stage statistics under CPU load.

Runs the shadowing pipeline under idle / 50% / 90% synthetic CPU load and
prints one row per condition (mean/std/P95/P99/max) plus the per-stage
budget table from the idle runs.  Results land in a JSON file.
"""

import argparse
import json
from pathlib import Path

from faceshadow.latency import bench_report
from faceshadow.pipeline import RunConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=10.0, help="seconds per repeat")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--fps", type=float, default=30.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="latency_report.json")
    args = ap.parse_args()

    config = RunConfig(fps=args.fps, seed=args.seed)
    reports = {}
    for load in ("idle", "50", "90"):
        print(f"running condition {load!r} "
              f"({args.repeats} x {args.duration:.0f}s at {args.fps:.0f} FPS)...")
        reports[load] = bench_report(
            config, load, duration_s=args.duration, repeats=args.repeats
        )

    print("\ncondition   mean      std       p95       p99       max     samples")
    for load, rep in reports.items():
        row = rep["latency"]
        print(
            f"{rep['condition']:<10}  {row['mean']:.4f}    {row['std']:.4f}    "
            f"{row['p95']:.4f}    {row['p99']:.4f}    {row['max']:.4f}  {row['count']:>7}"
        )

    print("\nstage (idle)         budget    mean      p95       max     within budget")
    idle = reports["idle"]
    for stage, row in idle["stages"].items():
        verdict = idle["budget_verdicts"][stage]
        print(
            f"{stage:<20} {row['budget']:.4f}    {row['mean']:.4f}    "
            f"{row['p95']:.4f}    {row['max']:.4f}   {verdict['passed']}"
        )

    Path(args.out).write_text(json.dumps(reports, indent=1))
    print(f"\nfull report -> {args.out}")


if __name__ == "__main__":
    main()
