"""Singular values of the correct-logit gradients stored during a short rotated
run, and how well each sketch captures them at a given width.

    python scripts/gradient_spectrum.py --out out/spectrum.csv
"""
import argparse
from pathlib import Path

import numpy as np

from sketchogd.bounds import bound_method1, bound_method2_expected, reconstruction_error, sketch_basis, spectrum_of, stable_rank
from sketchogd.continual import LearnerConfig, train_continual
from sketchogd.data import BenchmarkSpec, build_tasks, synthetic_clusters
from sketchogd.model import init_mlp
from sketchogd.sketch import SketchMethod


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tasks", type=int, default=3)
    ap.add_argument("--s", type=int, default=200)
    ap.add_argument("--k", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/spectrum.csv")
    args = ap.parse_args()

    base = synthetic_clusters(args.seed, 16, 10, 100)
    tasks = build_tasks(BenchmarkSpec("rotated", args.tasks, 30.0, args.seed), base)
    model = init_mlp([16, 100, 100, 10], args.seed)
    cfg = LearnerConfig("sgd", s=args.s, seed=args.seed, keep_gradients=True)
    res = train_continual(model, tasks, cfg)
    g = res.gradients.T
    s = np.linalg.svd(g, compute_uv=False)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["index,singular_value"] + [f"{i},{v!r}" for i, v in enumerate(s, 1)]
    lines.append(f"stable_rank,{stable_rank(s)!r}")
    out.write_text("\n".join(lines) + "\n")
    print(f"{g.shape[1]} gradients of length {g.shape[0]}; stable rank {stable_rank(s):.3f} -> {out}")

    lam = spectrum_of(g)
    total = float(np.sum(g * g))
    print(f"bounds at k={args.k}: method1 {bound_method1(lam, args.k)[0] / total:.4f}, "
          f"method2 {bound_method2_expected(lam, args.k)[0] / total:.4f} (fraction of |G|^2)")
    for method in SketchMethod:
        e = reconstruction_error(g, sketch_basis(g, method, args.k, args.k + 2, args.seed))
        print(f"method{method.value}: E_G / |G|^2 = {e / total:.4f}")


if __name__ == "__main__":
    main()
