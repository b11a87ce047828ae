#!/usr/bin/env python3
"""Process-weight curves for the five reference (gamma, delta) settings.

    python scripts/process_weight_curves.py --n 100 > weights.csv

Same output as ``riskforge curves --what process-weight`` without the sidecar.
"""

from __future__ import annotations

import argparse
import sys

from riskforge.cli import REFERENCE_CURVES, process_weight_csv


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100, help="steps per trajectory (default: 100)")
    ap.add_argument("--normalize", action="store_true", help="rescale each curve to span [gamma, 1]")
    args = ap.parse_args(argv)
    sys.stdout.write(process_weight_csv(args.n, REFERENCE_CURVES, args.normalize))
    return 0


if __name__ == "__main__":
    sys.exit(main())
