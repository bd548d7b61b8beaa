#!/usr/bin/env python3
"""Run every small bundled scenario and print a one-line summary each.

Usage: python scripts/run_fixtures.py [--out runs] [--solution N]

``--solution`` reruns each fixture under another settlement solution, which
is how the cross-solution payouts can be compared by eye.
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from solarcycle.money import fmt_micro
from solarcycle.scenario import bundled_fixtures, load_scenario, scenario_from_dict
from solarcycle.sim import run, write_outputs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--solution", type=int, choices=(1, 2, 3))
    ap.add_argument("--include-desk", action="store_true", help="also run the 1000-agreement fixtures")
    args = ap.parse_args()

    for name in bundled_fixtures():
        if name.startswith("desk_") and not args.include_desk:
            continue
        sc = load_scenario(name)
        if args.solution and args.solution != sc.solution:
            doc = json.loads(Path(sc.source).read_text())
            doc["solution"] = args.solution
            sc = scenario_from_dict(doc, sc.source)
        t0 = time.perf_counter()
        report, chain = run(sc)
        write_outputs(report, chain, Path(args.out) / f"{name}-s{sc.solution}")
        paid = sum(s["recycler_paid"] for s in report.settlements)
        print(
            f"{name:<18} solution {sc.solution}  {report.blocks:>4} blocks {report.transactions:>7} txs  "
            f"recycler paid {fmt_micro(paid):>14}  audit {len(report.audit)}  "
            f"flags {len(report.compliance)}  {time.perf_counter() - t0:5.1f}s"
        )


if __name__ == "__main__":
    main()
