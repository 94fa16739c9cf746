"""Empirical reconstruction error vs the expected-error bounds on flat, linear
and step spectra, plus the split-index scan behind each bound.

    python scripts/bounds_suite.py --p 200 --k 20 --trials 300
"""
import argparse

import numpy as np

from sketchogd.bounds import bound_method1, bound_method2_expected, method2_expected_term, verify_bound_montecarlo
from sketchogd.cli import matrix_with_spectrum, spectrum_values
from sketchogd.linalg import derive_seed
from sketchogd.sketch import SketchMethod


def scan(lam, k):
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    for gamma in range(k - 1):
        b1 = (1 + gamma / (k - gamma - 1)) * tail[gamma]
        b2 = method2_expected_term(lam, gamma, k) if gamma == 0 or lam[gamma - 1] > 0 else np.inf
        yield gamma, b1, b2


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--p", type=int, default=200)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--l", type=int, default=22)
    ap.add_argument("--trials", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--show-scan", action="store_true")
    args = ap.parse_args()

    for name in ("flat", "linear", "step"):
        lam = spectrum_values(name, args.p)
        g = matrix_with_spectrum(lam, args.p, derive_seed(args.seed, 30))
        print(f"== {name} spectrum, trace {lam.sum():.4g}")
        print(f"   bound1 {bound_method1(lam, args.k)}  bound2 {bound_method2_expected(lam, args.k)}")
        for method in SketchMethod:
            r = verify_bound_montecarlo(g, method, args.k, args.l, args.trials,
                                        derive_seed(args.seed, method.value), lam)
            flag = "ok" if r.holds else "VIOLATED"
            print(f"   method{method.value}: E = {r.empirical_mean:.5g} +- {r.empirical_stderr:.2g}"
                  f"  bound {r.bound_value:.5g} (gamma* {r.optimal_gamma})  {flag}")
        if args.show_scan:
            for gamma, b1, b2 in scan(lam, args.k):
                print(f"     gamma {gamma:3d}  method1 {b1:10.4f}  method2 {b2:10.4f}")

    # the linear spectrum in the regime 2k - 2 - p >= 0 has an interior optimum
    p, k = 30, 20
    lam = np.linspace(2.0, 0.0, p)
    v, gamma = bound_method1(lam, k)
    approx = 4.0 / p * (k - 1) * (p - k + 1)
    print(f"linear p={p} k={k}: gamma* {gamma} (2k-2-p = {2 * k - 2 - p}), bound {v:.4f}, "
          f"continuous approx {approx:.4f}")


if __name__ == "__main__":
    main()
