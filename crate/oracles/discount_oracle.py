#!/usr/bin/env python3
"""Discount oracle: writes seeded random cases with the expected discount in
both modes, using exact rational arithmetic and half-even rounding to 4 dp.

usage: discount_oracle.py [--seed N] [--cases N] > discount_oracle.csv
"""
import argparse
import csv
import random
import sys
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction


def discount(m, i, b, d, mode):
    total = Fraction(0)
    if m > 12:
        total += (m - 12) * 4
    if i > 3:
        total += (i - 3) * Fraction(5, 2)
    if b > 5:
        total += (b - 5) if mode == "corrected" else (m - 5)
    if d > 3:
        total += ((d - 3) if mode == "corrected" else (i - 3)) * Fraction(7, 2)
    return total


def fmt(x):
    q = Decimal(x.numerator) / Decimal(x.denominator)
    return str(q.quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def draw(rng):
    # Mix coarse values that land on thresholds with fine-grained ones.
    if rng.random() < 0.2:
        return Decimal(rng.choice(["0", "3", "5", "12", "3.0001", "5.0001", "12.0001", "100"]))
    scale = rng.choice([1, 2, 4])
    return Decimal(rng.randint(0, 30 * 10**scale)).scaleb(-scale)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--cases", type=int, default=1000)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["M", "I", "B", "D", "corrected", "verbatim"])
    for _ in range(args.cases):
        m, i, b, d = (draw(rng) for _ in range(4))
        fm, fi, fb, fd = (Fraction(x) for x in (m, i, b, d))
        out.writerow([m, i, b, d, fmt(discount(fm, fi, fb, fd, "corrected")), fmt(discount(fm, fi, fb, fd, "verbatim"))])


if __name__ == "__main__":
    main()
