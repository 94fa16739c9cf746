"""``bench`` command line: benchmark runs, bound verification, spectrum export.

Config files are flat ``key = value`` lines with ``#`` comments.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 acceptance
violation (``bounds`` and ``selftest``).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    BoundReport,
    bound_method1,
    bound_method2_expected,
    stable_rank,
    verify_bound_montecarlo,
)
from .continual import Dataset, LearnerConfig, LearnerKind, RunResult, train_continual
from .data import BenchmarkSpec, Family, IdxFormatError, build_tasks, load_idx, synthetic_clusters
from .linalg import RNG_ALGORITHM, derive_seed, gaussian_matrix, svd
from .model import init_mlp
from .sketch import SketchMethod

log = logging.getLogger("sketchogd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VIOLATION = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


RUN_KEYS = {
    "benchmark.family": None,
    "benchmark.source": "synthetic",
    "benchmark.num_tasks": "10",
    "benchmark.rotation_step": "5",
    "benchmark.seed": "run",
    "benchmark.images": "",
    "benchmark.labels": "",
    "benchmark.per_class": "0",
    "benchmark.dims": "16",
    "benchmark.classes": "10",
    "benchmark.points_per_class": "100",
    "benchmark.separation": "3.0",
    "benchmark.noise": "1.0",
    "model.hidden": "100,100",
    "learner.kind": None,
    "learner.budget": "200",
    "learner.s": "100",
    "learner.epochs": "5",
    "learner.lr": "0.05",
    "learner.batch_size": "32",
    "learner.scenario": "equal",
    "learner.dump_gradients": "false",
    "seeds": "0",
    "out_dir": "out",
}

BOUNDS_KEYS = {
    "spectrum": "flat,linear,step",
    "methods": "1,2,3",
    "p": "200",
    "n": "0",
    "k": "20",
    "l": "22",
    "trials": "300",
    "seed": "0",
    "lambda": "1.0",
    "step.top": "100",
    "step.count": "10",
    "step.tail": "2",
    "out": "bounds.csv",
}


def parse_config(path, valid: dict) -> dict:
    """Read ``key = value`` lines; unknown keys raise ConfigError listing valid ones."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in valid:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(valid))}")
        out[key] = value
    missing = [k for k, v in valid.items() if v is None and k not in out]
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")
    return {k: out.get(k, v) for k, v in valid.items()}


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _bool(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


def fmt(x: float) -> str:
    return repr(float(x))


def _sha256(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def thread_cap() -> int:
    env = os.environ.get("SKETCHOGD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --- run ---------------------------------------------------------------------


@dataclass
class RunJob:
    kind: str
    seed: int
    cfg: dict
    base_dir: str


def _load_base(cfg: dict, seed: int, base_dir: Path) -> tuple[Dataset, int | None]:
    source = cfg["benchmark.source"].lower()
    data_seed = seed if cfg["benchmark.seed"] == "run" else int(cfg["benchmark.seed"])
    if source == "synthetic":
        data = synthetic_clusters(
            data_seed, int(cfg["benchmark.dims"]), int(cfg["benchmark.classes"]),
            int(cfg["benchmark.points_per_class"]), float(cfg["benchmark.separation"]),
            float(cfg["benchmark.noise"]),
        )
        return data, None
    if source == "idx":
        if not cfg["benchmark.images"] or not cfg["benchmark.labels"]:
            raise ConfigError("benchmark.source = idx needs benchmark.images and benchmark.labels")
        try:
            data = load_idx(base_dir / cfg["benchmark.images"], base_dir / cfg["benchmark.labels"])
        except (OSError, IdxFormatError) as e:
            raise DataError(str(e)) from None
        per_class = int(cfg["benchmark.per_class"])
        if per_class > 0:
            keep = np.concatenate([np.flatnonzero(data.y == c)[:per_class] for c in np.unique(data.y)])
            data = data.subset(np.sort(keep))
        side = int(round(np.sqrt(data.x.shape[1])))
        return data, side if side * side == data.x.shape[1] else None
    raise ConfigError(f"benchmark.source must be 'synthetic' or 'idx', got {source!r}")


def execute_run(job: RunJob) -> tuple[RunJob, RunResult]:
    cfg = job.cfg
    base, side = _load_base(cfg, job.seed, Path(job.base_dir))
    data_seed = job.seed if cfg["benchmark.seed"] == "run" else int(cfg["benchmark.seed"])
    spec = BenchmarkSpec(
        family=cfg["benchmark.family"],
        num_tasks=int(cfg["benchmark.num_tasks"]),
        rotation_step_degrees=float(cfg["benchmark.rotation_step"]),
        seed=data_seed,
        image_side=side,
    )
    tasks = build_tasks(spec, base)
    hidden = _int_list(cfg["model.hidden"])
    model = init_mlp([tasks.n_in, *hidden, max(tasks.n_classes, int(base.y.max()) + 1)], job.seed)
    lc = LearnerConfig(
        kind=job.kind,
        memory_budget=int(cfg["learner.budget"]),
        s=int(cfg["learner.s"]),
        epochs=int(cfg["learner.epochs"]),
        learning_rate=float(cfg["learner.lr"]),
        batch_size=int(cfg["learner.batch_size"]),
        seed=job.seed,
        scenario=cfg["learner.scenario"],
        keep_gradients=_bool(cfg["learner.dump_gradients"]),
    )
    return job, train_continual(model, tasks, lc)


def trajectory_csv(run_id: str, kind: str, seed: int, result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "kind", "seed", "task", "epoch_global", "accuracy"])
    for ck in range(result.accuracy.shape[0]):
        for task in range(result.accuracy.shape[1]):
            w.writerow([run_id, kind, seed, task, ck, fmt(result.accuracy[ck, task])])
    return buf.getvalue()


SUMMARY_HEADER = ["run_id", "kind", "seed", "final_average", "peak_memory_vectors", "budget", "tasks"]


def run_benchmark(config_path, threads: int | None = None) -> dict:
    """Execute every (kind, seed) run of a config; returns the manifest dict."""
    config_path = Path(config_path)
    cfg = parse_config(config_path, RUN_KEYS)
    try:
        Family.parse(cfg["benchmark.family"])
        kinds = [LearnerKind.parse(k).value for k in cfg["learner.kind"].split(",") if k.strip()]
        seeds = _int_list(cfg["seeds"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if not kinds or not seeds:
        raise ConfigError("need at least one learner.kind and one seed")
    base_dir = config_path.parent
    out_dir = Path(cfg["out_dir"])
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    inputs = [config_path]
    if cfg["benchmark.source"].lower() == "idx":
        for key in ("benchmark.images", "benchmark.labels"):
            if cfg[key] and not (base_dir / cfg[key]).exists():
                raise DataError(f"missing data file {base_dir / cfg[key]}")
            if cfg[key]:
                inputs.append(base_dir / cfg[key])

    jobs = [RunJob(k, s, cfg, str(base_dir)) for k in kinds for s in seeds]
    workers = min(threads or thread_cap(), len(jobs))
    t0 = time.perf_counter()
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                done = list(pool.map(execute_run, jobs))
        else:
            done = [execute_run(j) for j in jobs]
    except IdxFormatError as e:
        raise DataError(str(e)) from None

    outputs, summary_rows, wall = [], [], {}
    for job, res in done:
        run_id = f"{job.kind}-seed{job.seed}"
        log.info("%s: final_average %.4f in %.1fs", run_id, res.final_average, res.wall_time)
        path = out_dir / f"trajectory_{job.kind}_seed{job.seed}.csv"
        path.write_text(trajectory_csv(run_id, job.kind, job.seed, res))
        outputs.append(str(path))
        if res.gradients is not None:
            gpath = out_dir / f"gradients_{job.kind}_seed{job.seed}.npy"
            np.save(gpath, res.gradients)
            outputs.append(str(gpath))
        summary_rows.append(
            [run_id, job.kind, job.seed, fmt(res.final_average), res.peak_memory_vectors,
             cfg["learner.budget"], res.accuracy.shape[1]]
        )
        wall[run_id] = res.wall_time
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(summary_rows)
    summary = out_dir / "summary.csv"
    summary.write_text(buf.getvalue())
    outputs.append(str(summary))

    manifest = {
        "tool": f"sketchogd {__version__}",
        "config": str(config_path),
        "config_values": cfg,
        "inputs_sha256": _sha256(inputs),
        "seeds": seeds,
        "kinds": kinds,
        "rng": RNG_ALGORITHM,
        "outputs": outputs,
        "wall_time_s": wall,
        "total_wall_time_s": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["final_average"] = float(r["final_average"])
        r["peak_memory_vectors"] = int(r["peak_memory_vectors"])
    return rows


def read_trajectory(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("seed", "task", "epoch_global"):
            r[key] = int(r[key])
        r["accuracy"] = float(r["accuracy"])
    return rows


# --- bounds ------------------------------------------------------------------


def spectrum_values(name: str, p: int, lam: float = 1.0, top: float = 100.0,
                    count: int = 10, tail: float = 2.0) -> np.ndarray:
    """Eigenvalues of G G^T for the named synthetic spectra, nonincreasing."""
    if name == "flat":
        return np.full(p, lam)
    if name == "linear":
        return np.linspace(2.0 * lam, 0.0, p)
    if name == "step":
        out = np.full(p, tail)
        out[: min(count, p)] = top
        return out
    raise ConfigError(f"unknown spectrum {name!r}")


def matrix_with_spectrum(eigenvalues, n: int, seed: int) -> np.ndarray:
    """p x n matrix G with random singular vectors and G G^T eigenvalues given
    (only the leading min(p, n) values can be realized)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    p = lam.size
    r = min(p, n)
    u, _ = np.linalg.qr(gaussian_matrix(p, p, derive_seed(seed, 31)))
    v, _ = np.linalg.qr(gaussian_matrix(n, r, derive_seed(seed, 32)))
    return (u[:, :r] * np.sqrt(lam[:r])) @ v.T


def load_gradients(path) -> np.ndarray:
    """Gradient rows from a .npy checkpoint or a CSV (one gradient per line);
    returned as the p x n matrix G."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            rows = np.load(path)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                rows = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read gradients from {path}: {e}") from None
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.size == 0:
        raise DataError(f"{path}: no gradients")
    if not np.all(np.isfinite(rows)):
        raise DataError(f"{path}: non-finite gradient entries")
    return rows.T


_FROM_GRADIENTS = re.compile(r"from_gradients\((.+)\)")

BOUNDS_HEADER = "spectrum," + BoundReport.CSV_HEADER + ",holds"


def run_bounds(config_path) -> tuple[list[tuple[str, BoundReport]], Path]:
    config_path = Path(config_path)
    cfg = parse_config(config_path, BOUNDS_KEYS)
    try:
        p, k, l = int(cfg["p"]), int(cfg["k"]), int(cfg["l"])
        n = int(cfg["n"]) or p
        trials, seed = int(cfg["trials"]), int(cfg["seed"])
        methods = [SketchMethod.parse(m) for m in cfg["methods"].split(",") if m.strip()]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    # spectrum list may contain parenthesised paths with commas
    names = [s.strip() for s in re.split(r",(?![^()]*\))", cfg["spectrum"]) if s.strip()]
    reports = []
    for name in names:
        m = _FROM_GRADIENTS.fullmatch(name)
        if m:
            gpath = Path(m.group(1).strip())
            g = load_gradients(gpath if gpath.is_absolute() else config_path.parent / gpath)
            lam = None
        else:
            lam = spectrum_values(name, p, float(cfg["lambda"]), float(cfg["step.top"]),
                                  int(cfg["step.count"]), float(cfg["step.tail"]))
            g = matrix_with_spectrum(lam, n, derive_seed(seed, 30))
            # only the leading min(p, n) eigenvalues are realized
            lam = np.where(np.arange(p) < n, lam, 0.0)
        for method in methods:
            rep = verify_bound_montecarlo(g, method, k, l, trials, derive_seed(seed, method.value), lam)
            reports.append((name, rep))
    out = Path(cfg["out"])
    if not out.is_absolute():
        out = config_path.parent / out
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [BOUNDS_HEADER] + [f"{name},{r.csv_row()},{int(r.holds)}" for name, r in reports]
    out.write_text("\n".join(lines) + "\n")
    return reports, out


def read_bounds(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("k", "l", "trials", "optimal_gamma", "holds"):
            r[key] = int(r[key])
        for key in ("empirical_mean", "empirical_stderr", "bound_value"):
            r[key] = float(r[key])
    return rows


# --- spectrum ----------------------------------------------------------------


def export_spectrum(in_path, out_path) -> np.ndarray:
    """Write ``index,singular_value`` rows (1-based) and a ``stable_rank`` footer."""
    g = load_gradients(in_path)
    s = svd(g).sigma
    if not np.any(s > 0):
        raise DataError(f"{in_path}: gradient matrix is zero")
    lines = ["index,singular_value"]
    lines += [f"{i},{fmt(v)}" for i, v in enumerate(s, 1)]
    lines.append(f"stable_rank,{fmt(stable_rank(s))}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    return s


def read_spectrum(path) -> tuple[np.ndarray, float]:
    values, sr = [], None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row[0] == "stable_rank":
                sr = float(row[1])
            else:
                values.append(float(row[1]))
    return np.array(values), sr


# --- selftest ----------------------------------------------------------------


def selftest() -> list[tuple[str, bool]]:
    """Small, fast versions of the core numerical checks."""
    from .bounds import reconstruction_error, sketch_basis
    from .model import LabeledExample, correct_logit_gradient, forward
    from .sketch import init_sketch, omega_row, update_sketch

    checks = []
    rng = np.random.default_rng(0)
    g = rng.standard_normal((60, 30))
    ok = True
    for method in SketchMethod:
        st = init_sketch(method, 60, 8, 10, seed=1)
        for col in g.T:
            update_sketch(st, col)
        if method is SketchMethod.METHOD1:
            ref = g @ np.stack([omega_row(1, i, 8) for i in range(30)])
        else:
            ref = g @ (g.T @ st.omega)
        ok &= np.linalg.norm(st.y - ref) <= 1e-10 * np.linalg.norm(ref)
    checks.append(("online/batch sketch equivalence", bool(ok)))

    low = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 30))
    worst = max(reconstruction_error(low, sketch_basis(low, m, 8, 10, 3)) for m in SketchMethod)
    checks.append(("exact recovery of rank <= k-2 input", worst < 1e-8 * np.sum(low**2)))

    checks.append(("flat-spectrum bound equals p*lambda", bound_method1(np.ones(50), 10) == (50.0, 0)))
    b2 = bound_method2_expected(np.r_[np.full(10, 100.0), np.full(100, 2.0)], 20)
    checks.append(("step-spectrum expected bound", abs(b2[0] - (40 * 10 / 9 + 200)) < 1e-9 and b2[1] == 10))

    model = init_mlp([5, 7, 3], 0)
    x = rng.standard_normal(5)
    grad = correct_logit_gradient(model, LabeledExample(x, 1))
    h, good = 1e-5, True
    for i in rng.choice(model.p, 10, replace=False):
        wp, wm = model.copy(), model.copy()
        wp.weights[i] += h
        wm.weights[i] -= h
        fd = (forward(wp, x)[1] - forward(wm, x)[1]) / (2 * h)
        good &= abs(fd - grad[i]) <= 1e-4 * max(1.0, abs(fd))
    checks.append(("correct-logit gradient vs finite differences", bool(good)))
    return checks


# --- entry point -------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="train learners on a continual benchmark")
    p_run.add_argument("config")
    p_b = sub.add_parser("bounds", help="Monte Carlo check of the sketching error bounds")
    p_b.add_argument("config")
    p_s = sub.add_parser("spectrum", help="singular values and stable rank of stored gradients")
    p_s.add_argument("input")
    p_s.add_argument("output")
    sub.add_parser("selftest", help="fast numerical self-checks")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        if args.cmd == "run":
            manifest = run_benchmark(args.config)
            print(f"wrote {len(manifest['outputs'])} files under {Path(manifest['outputs'][-1]).parent}")
            return EXIT_OK
        if args.cmd == "bounds":
            reports, out = run_bounds(args.config)
            bad = [(n, r) for n, r in reports if not r.holds]
            for name, r in reports:
                print(f"{name:>10s} method{r.method.value}: E={r.empirical_mean:.6g} "
                      f"+- {r.empirical_stderr:.3g}  bound={r.bound_value:.6g}  gamma*={r.optimal_gamma}")
            print(f"wrote {out}")
            return EXIT_VIOLATION if bad else EXIT_OK
        if args.cmd == "spectrum":
            s = export_spectrum(args.input, args.output)
            print(f"{s.size} singular values, stable rank {stable_rank(s):.4g} -> {args.output}")
            return EXIT_OK
        checks = selftest()
        for name, ok in checks:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
        return EXIT_OK if all(ok for _, ok in checks) else EXIT_VIOLATION
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IdxFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # infeasible settings caught below the config layer (e.g. sketch width < 2)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
