"""Regenerate the CSV data behind the four figures.

Usage: python scripts/figures.py [--out-dir artifacts/figures] [--seed 0] [--set section.key=value ...]
Each figure is one ``ossbb figures figN`` run; extra ``--set`` overrides are
passed to every run.
"""
import argparse
import sys
import time
from pathlib import Path

from ossbb.cli import FIGURES, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("artifacts/figures"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("figures", nargs="*", default=list(FIGURES))
    args = ap.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for fig in args.figures:
        out = args.out_dir / f"{fig}.csv"
        argv = ["figures", fig, "--seed", str(args.seed), "--out", str(out)]
        for item in args.set:
            argv += ["--set", item]
        t = time.perf_counter()
        code = run(argv)
        print(f"{fig}: exit {code}, {time.perf_counter() - t:.1f}s -> {out}")
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
