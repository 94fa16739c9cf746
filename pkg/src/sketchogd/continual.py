"""Task-sequential training with projected updates and memory-limited learners.

Every learner keeps some memory of past correct-logit gradients and hands the
trainer an orthonormal basis at each task boundary; SGD updates are projected
onto the orthogonal complement of that basis.

Memory is counted in p-vectors of persistent state: the sketch matrices, the
stored gradients (RandomOGD) or the stored orthonormal columns (OGD, PCA-OGD).
"""
from __future__ import annotations

import enum
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import DEFAULT_RANK_TOL, as_matrix, derive_seed, make_rng, orth, svd
from .model import MlpModel, correct_logit_gradients, loss_and_gradient_arrays, predict
from .sketch import SketchMethod, extract_basis, init_sketch, update_sketch_many


class LearnerKind(enum.Enum):
    SGD = "sgd"
    OGD_FULL = "ogd"
    RANDOM_OGD = "random_ogd"
    PCA_OGD = "pca_ogd"
    SKETCH1 = "sketch1"
    SKETCH2 = "sketch2"
    SKETCH3 = "sketch3"

    @classmethod
    def parse(cls, value) -> "LearnerKind":
        if isinstance(value, LearnerKind):
            return value
        text = str(value).strip().lower().replace("-", "_")
        aliases = {"ogdfull": "ogd", "ogd_full": "ogd", "randomogd": "random_ogd", "pcaogd": "pca_ogd"}
        text = aliases.get(text, text)
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown learner kind {value!r} (valid: {valid})") from None

    @property
    def is_sketch(self) -> bool:
        return self in (LearnerKind.SKETCH1, LearnerKind.SKETCH2, LearnerKind.SKETCH3)


SCENARIOS = ("equal", "practical")


@dataclass
class LearnerConfig:
    kind: LearnerKind
    memory_budget: int = 200
    s: int = 100
    epochs: int = 5
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    # "equal": every learner absorbs s gradients per task (same ingredients).
    # "practical": sketches absorb the whole task; PCA-OGD's raw task buffer
    # must fit in the budget next to its store.
    scenario: str = "equal"
    keep_gradients: bool = False

    def __post_init__(self):
        self.kind = LearnerKind.parse(self.kind)
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or self.s < 0:
            raise ValueError("learning_rate, epochs, batch_size must be positive and s >= 0")
        if self.memory_budget < 0:
            raise ValueError("memory_budget must be >= 0")

    def sketch_widths(self) -> tuple[int, int | None]:
        """k (and l) so the sketch footprint matches the budget:
        pk, 2pk, or 2p(k + l) with l = k + 2."""
        b = self.memory_budget
        if self.kind is LearnerKind.SKETCH1:
            k, l = b, None
        elif self.kind is LearnerKind.SKETCH2:
            k, l = b // 2, None
        elif self.kind is LearnerKind.SKETCH3:
            k = (b // 2 - 2) // 2
            l = k + 2
        else:
            raise ValueError(f"{self.kind.value} is not a sketch learner")
        if k < 2:
            raise ValueError(f"budget {b} gives sketch width k={k} < 2 for {self.kind.value}")
        return k, l

    def echo(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError(f"inconsistent dataset shapes {self.x.shape}, {self.y.shape}")

    def __len__(self) -> int:
        return self.y.shape[0]

    def __getitem__(self, i):
        from .model import LabeledExample

        return LabeledExample(self.x[i], int(self.y[i]))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass
class TaskSequence:
    tasks: list[tuple[Dataset, Dataset]]

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("empty task sequence")
        dims = {t.x.shape[1] for pair in self.tasks for t in pair}
        if len(dims) != 1:
            raise ValueError(f"tasks disagree on input dimension: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def n_in(self) -> int:
        return self.tasks[0][0].x.shape[1]

    @property
    def n_classes(self) -> int:
        return int(max(int(t.y.max()) for pair in self.tasks for t in pair if len(t)) + 1)


@dataclass
class RunResult:
    accuracy: np.ndarray  # (checkpoint, task)
    checkpoint_task: np.ndarray
    checkpoint_epoch: np.ndarray
    final_average: float
    config: dict
    wall_time: float
    peak_memory_vectors: int
    memory_log: list[int] = field(default_factory=list)
    gradients: np.ndarray | None = None


def project_update(delta_w, basis) -> np.ndarray:
    """delta_w - B (B^T delta_w) without forming the p x p projector."""
    d = np.asarray(delta_w, dtype=np.float64).ravel()
    if basis is None or np.size(basis) == 0:
        if basis is not None and np.shape(basis)[0] not in (0, d.size):
            raise ValueError("basis rows do not match the update length")
        return d.copy()
    b = np.asarray(basis)
    if b.shape[0] != d.size:
        raise ValueError(f"basis has {b.shape[0]} rows, update has length {d.size}")
    return d - b @ (b.T @ d)


# --- memories ---------------------------------------------------------------


class NoMemory:
    def __init__(self, p: int):
        self.p = p

    def absorb_task(self, grads: np.ndarray) -> None:
        pass

    def basis(self) -> np.ndarray:
        return np.zeros((self.p, 0))

    def memory_vectors(self) -> int:
        return 0


class OgdStore:
    """Stored gradients kept as an incrementally orthonormalized basis."""

    def __init__(self, p: int, cap: int | None = None, tol: float = DEFAULT_RANK_TOL):
        self.p = p
        self.cap = cap
        self.tol = tol
        self.n_stored = 0
        # basis vectors stored as rows so appends and the basis view stay contiguous
        self._rows = np.zeros((16, p))
        self.width = 0

    def _grow(self, extra: int) -> None:
        need = self.width + extra
        if need > self._rows.shape[0]:
            new = np.zeros((max(need, 2 * self._rows.shape[0]), self.p))
            new[: self.width] = self._rows[: self.width]
            self._rows = new

    def absorb_task(self, grads: np.ndarray) -> None:
        for g in np.atleast_2d(grads):
            ogd_full_absorb(self, g)

    def basis(self) -> np.ndarray:
        return self._rows[: self.width].T

    def memory_vectors(self) -> int:
        return self.width


def ogd_full_absorb(store: OgdStore, g) -> None:
    """Append ``g`` to the store: Gram-Schmidt against the current basis with one
    re-orthogonalization pass. Residuals below ``tol * |g|`` are counted as
    stored but add no column."""
    if store.cap is not None and store.n_stored >= store.cap:
        return
    v = np.array(g, dtype=np.float64).ravel()
    if v.size != store.p:
        raise ValueError(f"gradient has length {v.size}, store expects {store.p}")
    norm0 = float(np.linalg.norm(v))
    store.n_stored += 1
    if norm0 == 0.0:
        return
    q = store.basis()
    for _ in range(2):
        v -= q @ (q.T @ v)
    r = float(np.linalg.norm(v))
    if r < store.tol * norm0:
        return
    store._grow(1)
    store._rows[store.width] = v / r
    store.width += 1


class ReservoirStore:
    """Uniform fixed-size sample of the gradient stream (Algorithm R)."""

    def __init__(self, p: int, budget: int, rng: np.random.Generator):
        self.p = p
        self.budget = budget
        self.rng = rng
        self.seen = 0
        self.items: list[np.ndarray] = []
        self.ids: list[int] = []

    def absorb_task(self, grads: np.ndarray) -> None:
        for g in np.atleast_2d(grads):
            random_ogd_absorb(self, g, self.budget, self.rng)

    def basis(self) -> np.ndarray:
        if not self.items:
            return np.zeros((self.p, 0))
        return orth(np.stack(self.items, axis=1))

    def memory_vectors(self) -> int:
        return len(self.items)


def random_ogd_absorb(store: ReservoirStore, g, budget: int, rng) -> None:
    index = store.seen
    store.seen += 1
    if budget <= 0:
        return
    g = np.asarray(g, dtype=np.float64).ravel()
    if len(store.items) < budget:
        store.items.append(g.copy())
        store.ids.append(index)
        return
    j = int(rng.integers(0, index + 1))
    if j < budget:
        store.items[j] = g.copy()
        store.ids[j] = index


def pca_ogd_compress(task_gradients, c: int, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Top-``c`` left singular vectors of a p x m gradient matrix, fewer if the
    matrix has fewer nonzero singular values."""
    if c < 1:
        raise ValueError("c must be >= 1")
    g = as_matrix(task_gradients, "task_gradients")
    if g.shape[1] == 0:
        return np.zeros((g.shape[0], 0))
    res = svd(g)
    if res.sigma.size == 0 or res.sigma[0] == 0:
        return np.zeros((g.shape[0], 0))
    nonzero = int(np.count_nonzero(res.sigma > tol * res.sigma[0]))
    return res.u[:, : min(c, nonzero)].copy()


class PcaStore:
    def __init__(self, p: int, budget: int, per_task: int, raw_cap: int | None = None):
        self.p = p
        self.budget = budget
        self.per_task = per_task
        self.raw_cap = raw_cap
        self.store = np.zeros((p, 0))
        # store plus the raw task buffer, at its largest
        self.transient_peak = 0

    def absorb_task(self, grads: np.ndarray) -> None:
        grads = np.atleast_2d(grads)
        if self.raw_cap is not None:
            grads = grads[: self.raw_cap]
        room = self.budget - self.store.shape[1]
        if room <= 0 or not len(grads):
            return
        self.transient_peak = max(self.transient_peak, self.store.shape[1] + len(grads))
        comps = pca_ogd_compress(grads.T, min(self.per_task, room))
        # components from different tasks are not mutually orthogonal
        self.store = orth(np.hstack([self.store, comps]))[:, : self.budget]

    def basis(self) -> np.ndarray:
        return self.store

    def memory_vectors(self) -> int:
        return self.store.shape[1]


class SketchMemory:
    def __init__(self, p: int, method: SketchMethod, k: int, l: int | None, seed: int):
        self.state = init_sketch(method, p, k, l, seed)

    def absorb_task(self, grads: np.ndarray) -> None:
        grads = np.atleast_2d(grads)
        if len(grads):
            update_sketch_many(self.state, grads)

    def basis(self) -> np.ndarray:
        return extract_basis(self.state)

    def memory_vectors(self) -> int:
        return self.state.memory_vectors()


_SKETCH_METHOD = {
    LearnerKind.SKETCH1: SketchMethod.METHOD1,
    LearnerKind.SKETCH2: SketchMethod.METHOD2,
    LearnerKind.SKETCH3: SketchMethod.METHOD3,
}

# RNG sub-streams derived from the run seed
_SHUFFLE, _SAMPLE, _RESERVOIR, _SKETCH = 10, 11, 12, 13


def pca_allocation(config: LearnerConfig, num_tasks: int) -> tuple[int, int | None]:
    """(components per task, raw gradients per task or None) for PCA-OGD."""
    b = config.memory_budget
    if config.scenario == "equal":
        c = b // num_tasks
        cap = None
    else:
        c = b // (num_tasks + 1)
        cap = b - c * (num_tasks - 1)
    if c < 1:
        raise ValueError(f"budget {b} leaves no PCA components for {num_tasks} tasks")
    return c, cap


def make_memory(config: LearnerConfig, p: int, num_tasks: int):
    kind = config.kind
    if kind is LearnerKind.SGD:
        return NoMemory(p)
    if kind is LearnerKind.OGD_FULL:
        return OgdStore(p)
    if kind is LearnerKind.RANDOM_OGD:
        return ReservoirStore(p, config.memory_budget, make_rng(derive_seed(config.seed, _RESERVOIR)))
    if kind is LearnerKind.PCA_OGD:
        c, cap = pca_allocation(config, num_tasks)
        return PcaStore(p, config.memory_budget, c, cap)
    k, l = config.sketch_widths()
    return SketchMemory(p, _SKETCH_METHOD[kind], k, l, derive_seed(config.seed, _SKETCH))


def accuracy(model: MlpModel, data: Dataset) -> float:
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(model, data.x) == data.y))


StepHook = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


def train_continual(
    model: MlpModel,
    tasks: TaskSequence,
    config: LearnerConfig,
    on_step: StepHook | None = None,
    on_task_end: Callable[[int, MlpModel, np.ndarray, np.ndarray], None] | None = None,
) -> RunResult:
    """Train ``model`` in place on each task in turn.

    ``on_step(task, basis, delta_w, applied)`` sees every update;
    ``on_task_end(task, model, sample_idx, gradients)`` sees the points and
    correct-logit gradients absorbed into memory after each task.
    """
    if model.n_in != tasks.n_in:
        raise ValueError(f"model expects {model.n_in} inputs, tasks have {tasks.n_in}")
    t0 = time.perf_counter()
    p = model.p
    n_tasks = len(tasks)
    memory = make_memory(config, p, n_tasks)
    rows, ck_task, ck_epoch, mem_log, kept = [], [], [], [], []
    lr = config.learning_rate

    for t, (train, _) in enumerate(tasks.tasks):
        basis = memory.basis() if t >= 1 else np.zeros((p, 0))
        shuffle_rng = make_rng(derive_seed(config.seed, _SHUFFLE, t))
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(len(train))
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                _, grad = loss_and_gradient_arrays(model, train.x[idx], train.y[idx])
                delta = -lr * grad
                applied = project_update(delta, basis)
                model.weights += applied
                if on_step is not None:
                    on_step(t, basis, delta, applied)
            rows.append([accuracy(model, test) for _, test in tasks.tasks])
            ck_task.append(t)
            ck_epoch.append(epoch)

        n_pick = len(train) if (config.scenario == "practical" and config.kind.is_sketch) else config.s
        n_pick = min(n_pick, len(train))
        sample_rng = make_rng(derive_seed(config.seed, _SAMPLE, t))
        sample_idx = np.sort(sample_rng.choice(len(train), size=n_pick, replace=False))
        grads = correct_logit_gradients(model, train.x[sample_idx], train.y[sample_idx])
        if on_task_end is not None:
            on_task_end(t, model, sample_idx, grads)
        if config.keep_gradients:
            kept.append(grads)
        memory.absorb_task(grads)
        mem_log.append(max(memory.memory_vectors(), getattr(memory, "transient_peak", 0)))

    acc = np.array(rows)
    return RunResult(
        accuracy=acc,
        checkpoint_task=np.array(ck_task),
        checkpoint_epoch=np.array(ck_epoch),
        final_average=float(np.mean(acc[-1])),
        config=config.echo(),
        wall_time=time.perf_counter() - t0,
        peak_memory_vectors=max(mem_log) if mem_log else 0,
        memory_log=mem_log,
        gradients=np.vstack(kept) if kept else None,
    )


def run_all_kinds(
    make_model: Callable[[], MlpModel],
    tasks: TaskSequence,
    kinds: Sequence[LearnerKind],
    base: LearnerConfig,
) -> dict[LearnerKind, RunResult]:
    out = {}
    for kind in kinds:
        cfg = LearnerConfig(**{**base.echo(), "kind": kind})
        out[kind] = train_continual(make_model(), tasks, cfg)
    return out
