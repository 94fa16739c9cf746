"""Forgetting order of the OGD variants on the synthetic rotated benchmark.

Runs configs/rotated_ordering.cfg (or another run config) through the ``bench``
machinery and prints the seed-averaged final accuracy per learner.

    python scripts/rotated_ordering.py [config]
"""
import argparse
from pathlib import Path

import numpy as np

from sketchogd.cli import read_summary, run_benchmark

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default=str(ROOT / "configs" / "rotated_ordering.cfg"))
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    manifest = run_benchmark(args.config, threads=args.threads)
    summary = next(p for p in manifest["outputs"] if p.endswith("summary.csv"))
    rows = read_summary(summary)
    kinds = sorted({r["kind"] for r in rows})
    table = []
    for kind in kinds:
        acc = [r["final_average"] for r in rows if r["kind"] == kind]
        peak = max(r["peak_memory_vectors"] for r in rows if r["kind"] == kind)
        table.append((np.mean(acc), np.std(acc), kind, peak))
    print(f"{'learner':<12}{'mean acc':>10}{'std':>8}{'peak mem':>10}")
    for mean, std, kind, peak in sorted(table, reverse=True):
        print(f"{kind:<12}{mean:>10.4f}{std:>8.4f}{peak:>10d}")
    print(f"summary: {summary}")


if __name__ == "__main__":
    main()
