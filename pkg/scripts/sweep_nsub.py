#!/usr/bin/env python3
"""Golden-value error against n_sub; writes a TSV table."""

import argparse
from pathlib import Path

from openarc import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--range", default="1:60")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "sweep_nsub")
    args = ap.parse_args()
    raise SystemExit(cli.main(["sweep-nsub", str(ROOT / "problems" / "golden_segment.yaml"),
                               "--range", args.range, "--out", str(args.out)]))


if __name__ == "__main__":
    main()
