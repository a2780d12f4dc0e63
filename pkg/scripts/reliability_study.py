"""Spread of the diagonal of n * cov(theta_hat) across independent repeats.

    python scripts/reliability_study.py --repeats 20 --reps 200 --n 100
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from fisherci.config import load_experiment
from fisherci.montecarlo import covariance_reliability


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experiment", default="table5_case2")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    config, _ = load_experiment(args.experiment)
    config = replace(config, replications=args.reps, n=args.n)
    t0 = time.perf_counter()
    rel = covariance_reliability(config, args.repeats, workers=args.threads)
    print(f"{args.experiment}: n={args.n} R={args.reps} repeats={args.repeats}")
    print("mean relative error of diag(V_n):", np.array2string(rel, precision=4))
    print(f"{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
