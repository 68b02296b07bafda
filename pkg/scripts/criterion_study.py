"""Criterion integrals of the hyperbolic bump against amplitude, with the fixed-grid oracle.

    python3 scripts/criterion_study.py [--radius 2] [--amplitudes 0.1 0.25 0.5]
"""
import argparse

from spinscatter.criteria import MetricPairSpec, evaluate_main_criterion, fixed_grid_oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--radius", type=float, default=2.0)
    ap.add_argument("--amplitudes", type=float, nargs="+", default=[0.1, 0.25, 0.5])
    ap.add_argument("--panels", type=int, default=48)
    args = ap.parse_args()
    print(f"{'A':>6} {'w':>2} {'integral':>14} {'+-':>9} {'oracle':>14} {'rel diff':>9}")
    for A in args.amplitudes:
        spec = MetricPairSpec("hyperbolic_disk_2", {"kind": "bump", "amplitude": A, "radius": args.radius})
        for w in (1, 2):
            r = evaluate_main_criterion(spec, w)
            o = fixed_grid_oracle(spec, w, panels=args.panels)
            print(f"{A:6.3f} {w:>2} {r.value:14.8g} {r.error_estimate:9.2e} {o:14.8g} {abs(r.value - o) / o:9.2e}")


if __name__ == "__main__":
    main()
