"""Dense linear-algebra kernels shared by the sketching, bound and training code.

Matrices are plain float64 ``numpy.ndarray`` objects. Every routine checks its
inputs for finiteness and returns fresh arrays.

Random matrices come from numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence``; the generator name is exported as
``RNG_ALGORITHM`` so run manifests can record it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

RNG_ALGORITHM = "numpy.PCG64(SeedSequence)+standard_normal(ziggurat)"

DEFAULT_RANK_TOL = 1e-10


def as_matrix(m, name="matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject NaN/Inf entries."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def derive_seed(seed, *keys: int) -> int:
    """Deterministic 63-bit child seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def gaussian_matrix(rows: int, cols: int, seed) -> np.ndarray:
    """rows x cols matrix of i.i.d. standard normals; a pure function of its arguments."""
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian_matrix needs positive dimensions, got {rows}x{cols}")
    return make_rng(seed).standard_normal((rows, cols))


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.sigma.shape[0]
        return (self.u[:, :k] * self.sigma) @ self.vt[:k]


def svd(m, full: bool = False) -> SvdResult:
    """Thin SVD (LAPACK gesdd); ``full=True`` returns a square left factor."""
    a = as_matrix(m)
    if 0 in a.shape:
        raise ValueError("svd of a matrix with a zero dimension")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=full)
    except np.linalg.LinAlgError:
        u, s, vt = sla.svd(a, full_matrices=full, lapack_driver="gesvd")
    return SvdResult(u=u, sigma=s, vt=vt)


def qr(m):
    """Householder QR of a tall matrix: returns (q, r) with q m x n, r n x n."""
    a = as_matrix(m)
    rows, cols = a.shape
    if rows < cols:
        raise ValueError(f"qr needs rows >= cols, got {rows}x{cols}")
    q, r = np.linalg.qr(a, mode="reduced")
    return q, r


def orth(m, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis for range(m) via column-pivoted Householder QR.

    Pivoted columns whose residual norm (|r_ii|) falls below ``tol`` times the
    largest column norm are dropped, so the result may be narrower than ``m``.
    An all-zero or zero-width input gives a p x 0 matrix.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = as_matrix(m)
    p = a.shape[0]
    if a.shape[1] == 0 or p == 0:
        return np.zeros((p, 0))
    norms = np.linalg.norm(a, axis=0)
    top = norms.max()
    if top == 0.0:
        return np.zeros((p, 0))
    q, r, _ = sla.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    keep = int(np.count_nonzero(diag >= tol * top))
    # pivoting makes |r_ii| nonincreasing up to rounding
    return np.ascontiguousarray(q[:, :keep])


def triangular_pinv_apply(r, b, rel_tol: float = 1e-12) -> np.ndarray:
    """Apply the pseudoinverse of an upper-triangular ``r`` to ``b``.

    Diagonal entries below ``rel_tol * max|r_jj|`` mark singular directions;
    back-substitution runs on the remaining well-conditioned block and the
    singular components of the solution are set to zero.
    """
    r = as_matrix(r, "r")
    b = as_matrix(b, "b")
    k = r.shape[0]
    if r.shape[1] != k:
        raise ValueError(f"r must be square, got {r.shape}")
    if b.shape[0] != k:
        raise ValueError(f"b has {b.shape[0]} rows, r is {k}x{k}")
    out = np.zeros((k, b.shape[1]))
    if k == 0:
        return out
    diag = np.abs(np.diag(r))
    good = diag >= rel_tol * diag.max() if diag.max() > 0 else np.zeros(k, bool)
    idx = np.flatnonzero(good)
    if idx.size:
        sub = np.triu(r[np.ix_(idx, idx)])
        out[idx] = sla.solve_triangular(sub, b[idx], lower=False)
    return out


def range_residual(basis_of, vectors) -> float:
    """Largest relative residual of ``vectors``' columns after projecting onto
    the orthonormal columns of ``basis_of``."""
    q = as_matrix(basis_of)
    v = as_matrix(vectors)
    res = v - q @ (q.T @ v)
    scale = np.maximum(np.linalg.norm(v, axis=0), np.finfo(float).tiny)
    return float(np.max(np.linalg.norm(res, axis=0) / scale)) if v.shape[1] else 0.0
