#!/usr/bin/env python3
"""Yearly RC-coin issuance under fleet growth, with and without the annual policy adjustment.

Usage: python scripts/supply_control_demo.py [--growth 1.25] [--years 5]

Prints coins minted per year for a fleet whose generation grows by the given
factor each year: once with a fixed award, once with approach A (fewer coins
per batch) and once with approach B (more energy per batch).
"""
from __future__ import annotations

import argparse
from fractions import Fraction

from solarcycle.money import MICRO, fmt_micro
from solarcycle.rccoin import Approach, SupplyPolicy, annual_policy_adjustment, mint_split

KWH = 1000


def yearly(policy: SupplyPolicy, base_kwh: int, growth: Fraction, years: int, adjust: bool) -> list[int]:
    out, rem = [], 0
    for year in range(years):
        if year and adjust:
            policy = annual_policy_adjustment(policy, growth)
        monthly = int(base_kwh * growth**year) * KWH
        minted = 0
        for _ in range(12):
            batches, esc, res, rem = mint_split(rem, monthly, policy)
            minted += esc + res
        out.append(minted)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--growth", default="1.25")
    ap.add_argument("--years", type=int, default=5)
    ap.add_argument("--monthly-kwh", type=int, default=64_000)
    args = ap.parse_args()
    g = Fraction(args.growth)
    base = SupplyPolicy(100 * MICRO, 1000 * KWH)
    rows = {
        "fixed award": yearly(base, args.monthly_kwh, g, args.years, adjust=False),
        "approach A": yearly(base, args.monthly_kwh, g, args.years, adjust=True),
        "approach B": yearly(
            SupplyPolicy(100 * MICRO, 1000 * KWH, approach=Approach.GROW_UNITS), args.monthly_kwh, g, args.years, True
        ),
    }
    print(f"{'year':<12}" + "".join(f"{y:>16}" for y in range(args.years)))
    for name, vals in rows.items():
        print(f"{name:<12}" + "".join(f"{fmt_micro(v):>16}" for v in vals))


if __name__ == "__main__":
    main()
