"""Weak order of the geodesic random walk on the unit sphere via its exact transfer operator.

    python3 scripts/weak_order_study.py [--t 0.5] [--levels 16 32 64 128]
"""
import argparse

import numpy as np

from spinscatter.stochastic import sphere_weak_errors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--levels", type=int, nargs="+", default=[16, 32, 64, 128])
    args = ap.parse_args()
    print(f"{'k':>2} " + " ".join(f"{'n=' + str(n):>11}" for n in args.levels) + "   slopes")
    for k in range(3):
        e = sphere_weak_errors(args.t, tuple(args.levels), k=k)
        slopes = np.log2(e[:-1] / e[1:]) / np.log2(np.array(args.levels[1:]) / np.array(args.levels[:-1]))
        print(f"{k:>2} " + " ".join(f"{v:11.3e}" for v in e) + "   " + " ".join(f"{s:.3f}" for s in slopes))


if __name__ == "__main__":
    main()
