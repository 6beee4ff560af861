"""Empirical weak orders of the three estimators against the closed-form price.

Usage: python scripts/weak_orders.py [--paths 1000000] [--cap 4000000]
"""
import argparse

from ossbb import weak_order
from ossbb.model import reference_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=10**6)
    ap.add_argument("--cap", type=int, default=4 * 10**6)
    args = ap.parse_args()

    model, opt, s0 = reference_case()
    grids = {"baseline": [8 * 2**k for k in range(7)], "bb": [8 * 2**k for k in range(5)],
             "oss_bb": [8 * 2**k for k in range(5)]}
    for seed, (est, grid) in enumerate(grids.items(), start=202):
        fit = weak_order(est, model, opt, s0, grid, M=args.paths, M_cap=args.cap, seed=seed)
        print(f"{est}: slope {fit.slope:.3f}, C {fit.bias_bound(1.0):.3e}")
        for p in fit.points:
            mark = "*" if p.resolved else " "
            print(f"  {mark} N={p.N:>4} bias={p.bias:+.3e} se={p.std_error:.2e} M={p.M}")


if __name__ == "__main__":
    main()
