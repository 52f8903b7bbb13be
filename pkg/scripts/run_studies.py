#!/usr/bin/env python3
"""Run every shipped study configuration through the CLI.

Usage: python scripts/run_studies.py [--out DIR]

Each config writes into DIR/<config name>; the exit code is the worst one seen.
"""
import argparse
import sys
from pathlib import Path

from proxgal.cli import main

ROOT = Path(__file__).resolve().parents[1]
RUNS = [
    ("study", "benchmark_1d"),
    ("study", "radial_2d"),
    ("study", "radial_2d_p1p1"),
    ("study", "signorini"),
    ("verify-operators", "verify"),
]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", type=Path, default=Path("out"))
    args = ap.parse_args()
    worst = 0
    for command, name in RUNS:
        print(f"== {command} {name}")
        code = main([command, "--config", str(ROOT / "configs" / f"{name}.toml"), "--out", str(args.out / name)])
        worst = max(worst, code)
    sys.exit(worst)
