#!/usr/bin/env python3
"""Render a study CSV (as written by `odebayes_cli study`) as a Markdown table."""

import argparse
import csv
import sys


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv", nargs="+", help="table_n*.csv files")
    args = parser.parse_args()

    rows = []
    for path in args.csv:
        with open(path, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    if not rows:
        print("no rows", file=sys.stderr)
        return 1

    print("| n | param | arm | coverage (se) | length (se) | failures |")
    print("|---|---|---|---|---|---|")
    for r in rows:
        print(
            f"| {r['n']} | {r['param']} | {r['arm']} | {float(r['coverage']):.1f} ({float(r['cov_se']):.1f}) "
            f"| {float(r['length']):.2f} ({float(r['len_se']):.2f}) | {r['failures']} |"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
