#!/usr/bin/env python3
"""Time the 1000-agreement x 300-month runs and check that reruns export identical bytes.

Usage: python scripts/desk_benchmark.py [1 2 3] [--repeat 2] [--out runs/desk]
"""
from __future__ import annotations

import argparse
import hashlib
import time
from pathlib import Path

from solarcycle.ledger import verify_signature
from solarcycle.scenario import load_scenario
from solarcycle.sim import Simulation, write_outputs


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("solutions", nargs="*", type=int, default=[1, 2, 3])
    ap.add_argument("--repeat", type=int, default=2)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()

    for s in args.solutions:
        seen = set()
        for k in range(args.repeat):
            sc = load_scenario(f"desk_solution{s}")
            # start each run cold so repeats pay for verification too
            verify_signature.cache_clear()
            t0 = time.perf_counter()
            sim = Simulation(sc)
            report = sim.run()
            t_run = time.perf_counter() - t0
            paths = write_outputs(report, sim.chain, Path(args.out) / f"s{s}-{k}")
            total = time.perf_counter() - t0
            sums = tuple(digest(p) for p in paths.values())
            seen.add(sums)
            print(
                f"solution {s} run {k}: {len(sc.agreements)} agreements, {report.transactions} txs, "
                f"simulate {t_run:.1f}s, with export {total:.1f}s, chain {sums[0]}, report {sums[1]}"
            )
            del sim, report
        print(f"solution {s}: {'identical' if len(seen) == 1 else 'DIFFERENT'} exports across {args.repeat} runs")


if __name__ == "__main__":
    main()
