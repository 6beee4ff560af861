"""Level-variance decay and cost-versus-accuracy of the multilevel estimator.

Usage: python scripts/mlmc_study.py [--samples 50000] [--seeds 16]
"""
import argparse

import numpy as np

from ossbb import MlmcConfig, mlmc_price, reference_price
from ossbb.mlmc import fit_beta, variance_decay
from ossbb.model import reference_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=50_000)
    ap.add_argument("--seeds", type=int, default=16)
    ap.add_argument("--eps", type=float, nargs="+", default=[4e-4, 2e-4, 1e-4])
    args = ap.parse_args()

    model, opt, s0 = reference_case()
    stats = variance_decay(model, opt, s0, levels=range(0, 9), n_samples=args.samples, seed=707)
    print(f"{'l':>2} {'h_l':>10} {'mean Y_l':>12} {'var Y_l':>12} {'var P_l':>12} {'log2 var Y_l':>12}")
    for s in stats:
        print(f"{s.level:>2} {s.h:>10.3e} {s.mean:>12.4e} {s.variance:>12.4e} {s.variance_fine:>12.4e} "
              f"{np.log2(s.variance):>12.3f}")
    print(f"beta over levels 3..8: {fit_beta(stats, 3, 8):.3f}")

    oracle = reference_price(model, opt, s0)
    costs = []
    for eps in args.eps:
        runs = [mlmc_price(model, opt, s0, MlmcConfig(eps=eps, seed=seed)) for seed in range(args.seeds)]
        c = np.array([r.total_cost for r in runs])
        err = np.array([r.price - oracle for r in runs])
        costs.append(c.mean())
        print(f"eps={eps:.1e}: mean cost {c.mean():.3e} (min {c.min():.2e}, max {c.max():.2e}), "
              f"rms error {np.sqrt(np.mean(err**2)):.2e}, levels {max(len(r.levels) for r in runs)}")
    slope = np.polyfit(np.log(args.eps), np.log(costs), 1)[0]
    print(f"log-log slope of mean cost against eps: {slope:.3f}")


if __name__ == "__main__":
    main()
