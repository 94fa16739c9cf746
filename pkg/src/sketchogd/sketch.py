"""Streaming gradient sketches and one-shot sketches with their reconstructions.

Three streaming methods share one state type:

* ``METHOD1`` sketches G itself: ``Y += g w^T`` with a fresh Gaussian ``w`` per
  gradient. The growing test matrix is never stored; the row drawn for the
  i-th absorbed gradient is ``gaussian_matrix(1, k, derive_seed(seed, 1, i))``.
* ``METHOD2`` sketches G G^T with a fixed Gaussian Omega: ``Y += g (g^T Omega)``.
* ``METHOD3`` adds a co-range sketch ``W += (Psi g) g^T`` and extracts the
  basis of the symmetric reconstruction.

Random streams per seed: Omega uses ``derive_seed(seed, 2)``, Psi uses
``derive_seed(seed, 3)``, Method1 rows use ``derive_seed(seed, 1, i)``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import (
    DEFAULT_RANK_TOL,
    as_matrix,
    derive_seed,
    gaussian_matrix,
    orth,
    qr,
    triangular_pinv_apply,
)

_OMEGA_ROWS, _OMEGA, _PSI = 1, 2, 3


class SketchMethod(enum.Enum):
    METHOD1 = 1
    METHOD2 = 2
    METHOD3 = 3

    @classmethod
    def parse(cls, value) -> "SketchMethod":
        if isinstance(value, SketchMethod):
            return value
        text = str(value).strip().lower().replace("method", "")
        try:
            return cls(int(text))
        except ValueError:
            raise ValueError(f"unknown sketch method {value!r}") from None


def omega_row(seed, index: int, k: int) -> np.ndarray:
    """Gaussian row paired with the ``index``-th gradient absorbed by Method1."""
    return gaussian_matrix(1, k, derive_seed(seed, _OMEGA_ROWS, index))[0]


@dataclass
class SketchState:
    method: SketchMethod
    p: int
    k: int
    l: int | None
    seed: int
    y: np.ndarray
    omega: np.ndarray | None = None
    psi: np.ndarray | None = None
    w: np.ndarray | None = None
    n_seen: int = 0

    def footprint(self) -> int:
        """Number of stored floats: pk, 2pk or 2p(l+k)."""
        return sum(a.size for a in (self.y, self.omega, self.psi, self.w) if a is not None)

    def memory_vectors(self) -> int:
        """Footprint expressed in p-vectors."""
        return self.footprint() // self.p


def init_sketch(method, p: int, k: int, l: int | None = None, seed: int = 0) -> SketchState:
    method = SketchMethod.parse(method)
    if p < 1:
        raise ValueError("p must be >= 1")
    if k < 2:
        raise ValueError(f"sketch width k must be >= 2, got {k}")
    if k > p:
        raise ValueError(f"sketch width k={k} exceeds ambient dimension p={p}")
    state = SketchState(method=method, p=p, k=k, l=None, seed=int(seed), y=np.zeros((p, k)))
    if method is SketchMethod.METHOD1:
        return state
    state.omega = gaussian_matrix(p, k, derive_seed(seed, _OMEGA))
    if method is SketchMethod.METHOD3:
        if l is None:
            l = k + 2
        if l < k:
            raise ValueError(f"co-sketch width l={l} must be >= k={k}")
        state.l = l
        state.psi = gaussian_matrix(l, p, derive_seed(seed, _PSI))
        state.w = np.zeros((l, p))
    return state


def update_sketch(state: SketchState, g) -> None:
    """Absorb one gradient in O(pk) (or O(p(k+l))) time."""
    g = np.asarray(g, dtype=np.float64).ravel()
    if g.shape[0] != state.p:
        raise ValueError(f"gradient has length {g.shape[0]}, sketch expects {state.p}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    if state.method is SketchMethod.METHOD1:
        state.y += np.outer(g, omega_row(state.seed, state.n_seen, state.k))
    else:
        state.y += np.outer(g, g @ state.omega)
        if state.method is SketchMethod.METHOD3:
            state.w += np.outer(state.psi @ g, g)
    state.n_seen += 1


def update_sketch_many(state: SketchState, gs) -> None:
    """Absorb the rows of ``gs`` in order; same result as repeated ``update_sketch``."""
    gs = as_matrix(np.atleast_2d(gs), "gradients")
    if gs.shape[1] != state.p:
        raise ValueError(f"gradients have length {gs.shape[1]}, sketch expects {state.p}")
    if state.method is SketchMethod.METHOD1:
        rows = np.stack([omega_row(state.seed, state.n_seen + i, state.k) for i in range(len(gs))])
        state.y += gs.T @ rows
    else:
        state.y += gs.T @ (gs @ state.omega)
        if state.method is SketchMethod.METHOD3:
            state.w += (state.psi @ gs.T) @ gs
    state.n_seen += len(gs)


def symmetric_basis(y, psi, w, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """orth([Q X^T]) with Q = orth(Y), (U, T) = qr(Psi Q), X = T^+ U^T W."""
    q = orth(y, tol)
    if q.shape[1] == 0:
        return q
    u, t = qr(psi @ q)
    x = triangular_pinv_apply(t, u.T @ w)
    xt = x.T
    # unit columns keep the rank cut independent of the scale of W
    norms = np.linalg.norm(xt, axis=0)
    xt = xt[:, norms > 0] / norms[norms > 0]
    return orth(np.hstack([q, xt]), tol)


def extract_basis(state: SketchState, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    if state.n_seen == 0:
        return np.zeros((state.p, 0))
    if state.method is SketchMethod.METHOD3:
        return symmetric_basis(state.y, state.psi, state.w, tol)
    return orth(state.y, tol)


_MAGIC = b"SKOGD1\x00\x00"
_HEADER = struct.Struct("<8sIQQQQq")


def save_sketch(state: SketchState, path) -> None:
    """Binary checkpoint: little-endian header (magic, method, p, k, l, n_seen,
    seed) followed by row-major float64 y, omega, psi, w as present."""
    header = _HEADER.pack(
        _MAGIC, state.method.value, state.p, state.k, state.l or 0, state.n_seen, state.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for a in (state.y, state.omega, state.psi, state.w):
            if a is not None:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_sketch(path) -> SketchState:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"sketch checkpoint truncated at byte {len(raw)}")
    magic, tag, p, k, l, n_seen, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a sketch checkpoint (bad magic at byte 0)")
    method = SketchMethod(tag)
    shapes = [(p, k)]
    if method is not SketchMethod.METHOD1:
        shapes.append((p, k))
    if method is SketchMethod.METHOD3:
        shapes += [(l, p), (l, p)]
    need = _HEADER.size + 8 * sum(a * b for a, b in shapes)
    if len(raw) != need:
        raise ValueError(f"sketch checkpoint has {len(raw)} bytes, expected {need}")
    arrays, off = [], _HEADER.size
    for rows, cols in shapes:
        n = rows * cols
        arrays.append(np.frombuffer(raw, "<f8", n, off).reshape(rows, cols).astype(np.float64))
        off += 8 * n
    arrays += [None] * (4 - len(arrays))
    return SketchState(
        method=method, p=p, k=k, l=l or None, seed=seed, y=arrays[0],
        omega=arrays[1], psi=arrays[2], w=arrays[3], n_seen=n_seen,
    )


@dataclass(frozen=True)
class FullSketch:
    omega: np.ndarray
    psi: np.ndarray
    y: np.ndarray
    w: np.ndarray


def sketch_full(a, k: int, l: int, seed: int) -> FullSketch:
    """One-shot sketch Y = A Omega, W = Psi A of an m x n matrix."""
    a = as_matrix(a, "a")
    m, n = a.shape
    if k > l:
        raise ValueError(f"need k <= l, got k={k}, l={l}")
    if k < 1:
        raise ValueError("k must be >= 1")
    omega = gaussian_matrix(n, k, derive_seed(seed, _OMEGA))
    psi = gaussian_matrix(l, m, derive_seed(seed, _PSI))
    return FullSketch(omega=omega, psi=psi, y=a @ omega, w=psi @ a)


def _core(s: FullSketch, tol: float):
    q = orth(s.y, tol)
    if q.shape[1] == 0:
        return q, np.zeros((0, s.w.shape[1]))
    u, t = qr(s.psi @ q)
    return q, triangular_pinv_apply(t, u.T @ s.w)


def reconstruct_direct(s: FullSketch, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """A_hat = Q (Psi Q)^+ W."""
    q, x = _core(s, tol)
    return q @ x


def reconstruct_symmetric(s: FullSketch, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """A_sym = (Q X + X^T Q^T) / 2, symmetric by construction."""
    q, x = _core(s, tol)
    qx = q @ x
    return 0.5 * (qx + qx.T)
