#!/usr/bin/env python3
"""Reproduce the decay-benchmark error table and print it."""

import sys

from mpode.runners import ErrorRow, ExperimentConfig, run_table


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else "table.csv"
    rows = run_table(ExperimentConfig(n=400, scheme="rk4", out=out))
    print(ErrorRow.HEADER)
    for row in rows:
        print(row.to_csv_line())
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
