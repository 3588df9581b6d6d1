#!/usr/bin/env python3
"""GMRES iterations and E2 against L/lambda for the segment, Y-shape or spiral."""

import argparse
from pathlib import Path

from openarc import cli

ROOT = Path(__file__).resolve().parents[1]
FILES = {"segment": "segment_wavelength.yaml", "y-shape": "y_shape.yaml", "spiral": "spiral.yaml"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("case", choices=sorted(FILES), nargs="?", default="segment")
    ap.add_argument("--ratios", default=None, help="comma list, default from the problem file")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    out = args.out or ROOT / "runs" / f"wavelength_{args.case}"
    argv = ["sweep-wavelength", str(ROOT / "problems" / FILES[args.case]), "--out", str(out),
            "--threads", str(args.threads)]
    if args.ratios:
        argv += ["--ratios", args.ratios]
    raise SystemExit(cli.main(argv))


if __name__ == "__main__":
    main()
