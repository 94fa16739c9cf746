import struct

import numpy as np
import pytest

from sketchogd.continual import Dataset
from sketchogd.data import (
    BenchmarkSpec,
    IdxFormatError,
    build_tasks,
    load_idx,
    rotate_images,
    rotate_planar,
    synthetic_clusters,
    task_permutation,
    train_test_split,
    write_idx,
)


def idx_pair(tmp_path):
    imgs = struct.pack(">4I", 0x803, 2, 2, 2) + bytes([0, 1, 2, 255, 10, 20, 30, 40])
    labels = struct.pack(">2I", 0x801, 2) + bytes([3, 7])
    (tmp_path / "i.idx").write_bytes(imgs)
    (tmp_path / "l.idx").write_bytes(labels)
    return tmp_path / "i.idx", tmp_path / "l.idx"


class TestIdx:
    def test_hand_crafted(self, tmp_path):
        d = load_idx(*idx_pair(tmp_path))
        assert np.allclose(d.x[0], [0, 1 / 255, 2 / 255, 1.0])
        assert np.allclose(d.x[1] * 255, [10, 20, 30, 40])
        assert list(d.y) == [3, 7]

    def test_labels_with_image_magic(self, tmp_path):
        imgs, _ = idx_pair(tmp_path)
        with pytest.raises(IdxFormatError, match="offset 0"):
            load_idx(imgs, imgs)

    def test_empty_file(self, tmp_path):
        imgs, _ = idx_pair(tmp_path)
        (tmp_path / "e.idx").write_bytes(b"")
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(imgs, tmp_path / "e.idx")

    def test_truncated_data(self, tmp_path):
        imgs, labels = idx_pair(tmp_path)
        imgs.write_bytes(imgs.read_bytes()[:-1])
        with pytest.raises(IdxFormatError, match="offset"):
            load_idx(imgs, labels)

    def test_count_mismatch(self, tmp_path):
        imgs, labels = idx_pair(tmp_path)
        labels.write_bytes(struct.pack(">2I", 0x801, 1) + bytes([3]))
        with pytest.raises(IdxFormatError, match="count"):
            load_idx(imgs, labels)

    def test_write_round_trip(self, tmp_path):
        imgs = np.arange(3 * 4 * 4, dtype=np.uint8).reshape(3, 4, 4)
        write_idx(imgs, np.array([0, 1, 2]), tmp_path / "a", tmp_path / "b")
        d = load_idx(tmp_path / "a", tmp_path / "b")
        assert np.array_equal(np.rint(d.x * 255).astype(np.uint8), imgs.reshape(3, -1))


class TestRotation:
    def test_zero_is_identity(self):
        x = np.random.default_rng(0).random((3, 25))
        assert np.array_equal(rotate_images(x, 5, 0.0), x)
        assert np.array_equal(rotate_planar(x[:, :24], 0.0), x[:, :24])

    def test_image_quarter_turn(self):
        img = np.zeros((5, 5))
        img[0, 2] = 1.0  # top centre
        out = rotate_images(img.reshape(1, -1), 5, 90.0).reshape(5, 5)
        assert np.allclose(out, np.rot90(img, -1), atol=1e-12) or np.allclose(out, np.rot90(img), atol=1e-12)

    def test_planar_90_cluster_means(self):
        base = synthetic_clusters(1, 2, 3, 50)
        r = rotate_planar(base.x, 90.0)
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        for c in range(3):
            m0 = base.x[base.y == c].mean(axis=0)
            m1 = r[base.y == c].mean(axis=0)
            assert np.allclose(m1, rot @ m0, atol=1e-12)

    def test_planar_odd(self):
        with pytest.raises(ValueError):
            rotate_planar(np.ones((1, 3)), 5.0)


class TestTasks:
    def base(self):
        return synthetic_clusters(0, 4, 4, 20)

    def test_rotated_task0(self):
        seq = build_tasks(BenchmarkSpec("rotated", 3, 5.0, 0), self.base())
        train, _ = train_test_split(self.base(), 0)
        assert np.array_equal(seq.tasks[0][0].x, train.x)

    def test_permutation_deterministic(self):
        assert np.array_equal(task_permutation(3, 1, 10), task_permutation(3, 1, 10))
        assert np.array_equal(task_permutation(3, 0, 10), np.arange(10))

    def test_permuted_multiset(self):
        seq = build_tasks(BenchmarkSpec("permuted", 3, seed=2), self.base())
        a, b = seq.tasks[0][0].x, seq.tasks[2][0].x
        assert np.array_equal(np.sort(a, axis=1), np.sort(b, axis=1))

    def test_split(self):
        seq = build_tasks(BenchmarkSpec("split", 2), self.base())
        assert set(seq.tasks[0][0].y) == {0, 1} and set(seq.tasks[1][1].y) == {2, 3}

    def test_split_indivisible(self):
        with pytest.raises(ValueError):
            build_tasks(BenchmarkSpec("split", 3), self.base())

    def test_split_ratio(self):
        train, test = train_test_split(self.base(), 5)
        assert len(test) == 4 * 3 and len(train) == 4 * 17
        assert not set(map(tuple, train.x)) & set(map(tuple, test.x))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            BenchmarkSpec("shuffled")

    def test_dataset_getitem(self):
        d = Dataset(np.eye(3), np.array([0, 1, 2]))
        assert d[1].y == 1 and np.array_equal(d[1].x, [0, 1, 0])
