"""Benchmark data: IDX ingestion, synthetic Gaussian clusters, task builders."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .continual import Dataset, TaskSequence
from .linalg import derive_seed, make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _read_idx(path, magic: int, ndim: int):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated magic number at byte offset {len(raw)}")
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x} at byte offset 0, expected 0x{magic:08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    need = head + int(np.prod(dims))
    if len(raw) < need:
        raise IdxFormatError(f"{path}: truncated data at byte offset {len(raw)}, expected {need} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=head)
    return data.reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1] and flattened row-major."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{labels_path}: label count {labels.shape[0]} at byte offset 4 does not match "
            f"image count {images.shape[0]}"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def synthetic_clusters(seed: int, dims: int, classes: int, points_per_class: int,
                       separation: float = 3.0, noise: float = 1.0) -> Dataset:
    """Gaussian clusters: class means ~ N(0, separation^2 I), unit-ish noise."""
    rng = make_rng(derive_seed(seed, 21))
    means = rng.standard_normal((classes, dims)) * separation
    x = np.repeat(means, points_per_class, axis=0)
    x = x + noise * rng.standard_normal(x.shape)
    y = np.repeat(np.arange(classes), points_per_class)
    return Dataset(x, y)


class Family(enum.Enum):
    ROTATED = "rotated"
    PERMUTED = "permuted"
    SPLIT = "split"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        text = str(value).strip().lower().replace("classification", "")
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown benchmark family {value!r}") from None


@dataclass
class BenchmarkSpec:
    family: Family
    num_tasks: int = 10
    rotation_step_degrees: float = 5.0
    seed: int = 0
    # images are rotated as squares; otherwise features rotate pairwise in planes
    image_side: int | None = None
    test_fraction: float = 0.15

    def __post_init__(self):
        self.family = Family.parse(self.family)
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")


def train_test_split(data: Dataset, seed: int, test_fraction: float = 0.15):
    """Fixed per-class split: the first ceil(test_fraction * n_c) of a seeded
    shuffle of each class go to test."""
    rng = make_rng(derive_seed(seed, 22))
    train_idx, test_idx = [], []
    for c in np.unique(data.y):
        idx = np.flatnonzero(data.y == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(np.ceil(test_fraction * idx.size))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return data.subset(tr), data.subset(te)


def rotate_images(x: np.ndarray, side: int, degrees: float) -> np.ndarray:
    """Rotate flattened square images about their centre (bilinear, zero fill)."""
    if degrees % 360 == 0:
        return x.copy()
    imgs = x.reshape(-1, side, side)
    out = ndimage.rotate(imgs, degrees, axes=(2, 1), reshape=False, order=1,
                         mode="constant", cval=0.0, prefilter=False)
    return out.reshape(x.shape[0], -1)


def rotate_planar(x: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate each consecutive feature pair (x0, x1), (x2, x3), ... by ``degrees``."""
    if x.shape[1] % 2:
        raise ValueError("planar rotation needs an even number of features")
    if degrees % 360 == 0:
        return x.copy()
    th = np.deg2rad(degrees)
    c, s = np.cos(th), np.sin(th)
    out = np.empty_like(x)
    out[:, 0::2] = c * x[:, 0::2] - s * x[:, 1::2]
    out[:, 1::2] = s * x[:, 0::2] + c * x[:, 1::2]
    return out


def task_permutation(seed: int, task: int, d: int) -> np.ndarray:
    if task == 0:
        return np.arange(d)
    return make_rng(derive_seed(seed, 23, task)).permutation(d)


def build_tasks(spec: BenchmarkSpec, base: Dataset) -> TaskSequence:
    train, test = train_test_split(base, spec.seed, spec.test_fraction)
    d = base.x.shape[1]
    tasks = []
    if spec.family is Family.ROTATED:
        if spec.image_side is not None:
            if spec.image_side**2 != d:
                raise ValueError(f"image side {spec.image_side} does not match {d} features")
            rot = lambda x, deg: rotate_images(x, spec.image_side, deg)  # noqa: E731
        else:
            if d % 2:
                raise ValueError("rotated benchmark needs square images or an even feature count")
            rot = rotate_planar
        for t in range(spec.num_tasks):
            deg = t * spec.rotation_step_degrees
            tasks.append((Dataset(rot(train.x, deg), train.y), Dataset(rot(test.x, deg), test.y)))
    elif spec.family is Family.PERMUTED:
        for t in range(spec.num_tasks):
            perm = task_permutation(spec.seed, t, d)
            tasks.append((Dataset(train.x[:, perm], train.y), Dataset(test.x[:, perm], test.y)))
    else:
        classes = np.unique(base.y)
        if classes.size % spec.num_tasks:
            raise ValueError(f"{classes.size} classes do not divide into {spec.num_tasks} tasks")
        for group in np.split(classes, spec.num_tasks):
            tr = np.isin(train.y, group)
            te = np.isin(test.y, group)
            tasks.append((train.subset(tr), test.subset(te)))
    return TaskSequence(tasks)
