"""Reconstruction-error metric, split spectra and the sketching error bounds.

``reconstruction_error(G, B)`` is ``||(I - B B^T) G||_F^2``. The bound functions
take the eigenvalues of ``G G^T`` (squared singular values of G, padded with
zeros to length p) sorted in decreasing order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    DEFAULT_RANK_TOL,
    as_matrix,
    derive_seed,
    gaussian_matrix,
    orth,
    svd,
)
from .sketch import SketchMethod, sketch_full, symmetric_basis

ORTHONORMAL_TOL = 1e-8


def reconstruction_error(g_mat, basis) -> float:
    g = as_matrix(g_mat, "G")
    b = as_matrix(basis, "basis") if np.size(basis) else np.zeros((g.shape[0], 0))
    if b.shape[0] != g.shape[0]:
        raise ValueError(f"basis has {b.shape[0]} rows, G has {g.shape[0]}")
    if b.shape[1]:
        gram = b.T @ b
        if np.max(np.abs(gram - np.eye(b.shape[1]))) > ORTHONORMAL_TOL:
            raise ValueError("basis columns are not orthonormal")
        resid = g - b @ (b.T @ g)
    else:
        resid = g
    return float(np.sum(resid * resid))


@dataclass(frozen=True)
class SplitSpectrum:
    gamma: int
    sigma1: np.ndarray
    sigma2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray

    @property
    def diag(self) -> np.ndarray:
        return np.concatenate([self.sigma1, self.sigma2])


def spectrum_of(g_mat) -> np.ndarray:
    """Eigenvalues of G G^T, length p, nonincreasing."""
    g = as_matrix(g_mat, "G")
    s = svd(g).sigma
    out = np.zeros(g.shape[0])
    out[: s.size] = s**2
    return out


def split_svd(g_mat, gamma: int) -> SplitSpectrum:
    g = as_matrix(g_mat, "G")
    p = g.shape[0]
    if not 0 <= gamma <= p:
        raise ValueError(f"gamma={gamma} outside [0, {p}]")
    res = svd(g, full=True)
    lam = np.zeros(p)
    lam[: res.sigma.size] = res.sigma**2
    return SplitSpectrum(
        gamma=gamma,
        sigma1=lam[:gamma].copy(),
        sigma2=lam[gamma:].copy(),
        u1=res.u[:, :gamma].copy(),
        u2=res.u[:, gamma:].copy(),
    )


def _check_spectrum(spectrum_diag) -> np.ndarray:
    lam = np.asarray(spectrum_diag, dtype=np.float64).ravel()
    if lam.size == 0:
        raise ValueError("empty spectrum")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("spectrum must be finite and nonnegative")
    if np.any(np.diff(lam) > 1e-12 * max(lam[0], 1.0)):
        raise ValueError("spectrum must be nonincreasing")
    return lam


def _better(value: float, best: float) -> bool:
    # ties within rounding go to the smaller gamma
    return value < best - 1e-12 * abs(best) if math.isfinite(best) else True


def _tail_sums(lam: np.ndarray, power: float = 1.0) -> np.ndarray:
    # tail[g] = sum(lam[g:] ** power), for g = 0..len(lam)
    return np.concatenate([np.cumsum((lam**power)[::-1])[::-1], [0.0]])


def bound_method1(spectrum_diag, k: int) -> tuple[float, int]:
    """min over gamma in 0..k-2 of (1 + gamma/(k-gamma-1)) * tail(gamma)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    lam = _check_spectrum(spectrum_diag)
    tail = _tail_sums(lam)
    best, best_g = math.inf, 0
    for gamma in range(0, min(k - 2, lam.size) + 1):
        value = (1.0 + gamma / (k - gamma - 1)) * tail[gamma]
        if _better(value, best):
            best, best_g = value, gamma
    return float(best), best_g


def method2_expected_term(lam: np.ndarray, gamma: int, k: int) -> float:
    """gamma/(k-gamma-1) * Tr(S2^2) Tr(S1^-1) + Tr(S2) for one split."""
    s1, s2 = lam[:gamma], lam[gamma:]
    tr2 = float(np.sum(s2))
    if gamma == 0:
        return tr2
    return gamma / (k - gamma - 1) * float(np.sum(s2 * s2)) * float(np.sum(1.0 / s1)) + tr2


def bound_method2_expected(spectrum_diag, k: int) -> tuple[float, int]:
    """Exhaustive scan of the expected-error bound; splits with a zero in the
    top block are skipped."""
    if k < 2:
        raise ValueError("k must be >= 2")
    lam = _check_spectrum(spectrum_diag)
    best, best_g = math.inf, 0
    for gamma in range(0, min(k - 2, lam.size) + 1):
        if gamma and lam[gamma - 1] <= 0:
            break
        value = method2_expected_term(lam, gamma, k)
        if _better(value, best):
            best, best_g = value, gamma
    return float(best), best_g


class PreconditionError(ValueError):
    """An assumption of the bound (full-rank Omega_1) fails for the supplied inputs."""


def numerical_rank(values, rel_tol: float = 1e-12) -> int:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.max() <= 0:
        return 0
    return int(np.count_nonzero(v > rel_tol * v.max()))


def bound_method2_deterministic(split: SplitSpectrum, omega, rank_tol: float = 1e-10) -> float:
    """Per-draw bound ||S2 O2 O1^+ S1^-1/2||_F^2 + Tr(S2) for a realized Omega."""
    omega = as_matrix(omega, "omega")
    gamma = split.gamma
    k = omega.shape[1]
    if gamma > k - 2:
        raise ValueError(f"gamma={gamma} exceeds k-2={k - 2}")
    if omega.shape[0] != split.u1.shape[0]:
        raise ValueError("omega rows must equal p")
    if gamma == 0:
        return float(np.sum(split.sigma2))
    omega1 = split.u1.T @ omega
    s = np.linalg.svd(omega1, compute_uv=False)
    if s.size < gamma or s[-1] <= rank_tol * s[0]:
        raise PreconditionError("Omega_1 = U_1^T Omega is not full rank")
    rank_g = numerical_rank(np.concatenate([split.sigma1, split.sigma2]))
    if gamma >= rank_g:
        return 0.0
    omega2 = split.u2.T @ omega
    core = (split.sigma2[:, None] * omega2) @ np.linalg.pinv(omega1)
    core = core / np.sqrt(split.sigma1)[None, :]
    return float(np.sum(core * core) + np.sum(split.sigma2))


def stable_rank(singular_values) -> float:
    s = np.asarray(singular_values, dtype=np.float64).ravel()
    if s.size == 0 or not np.any(s > 0):
        raise ValueError("stable rank needs at least one positive singular value")
    return float(np.sum(s * s) / np.max(s) ** 2)


@dataclass(frozen=True)
class BoundReport:
    method: SketchMethod
    k: int
    l: int
    empirical_mean: float
    empirical_stderr: float
    bound_value: float
    optimal_gamma: int
    trials: int

    CSV_HEADER = "method,k,l,trials,empirical_mean,empirical_stderr,bound_value,optimal_gamma"

    def csv_row(self) -> str:
        return (
            f"method{self.method.value},{self.k},{self.l},{self.trials},"
            f"{self.empirical_mean!r},{self.empirical_stderr!r},{self.bound_value!r},"
            f"{self.optimal_gamma}"
        )

    @property
    def holds(self) -> bool:
        """Empirical mean plus three standard errors stays under the bound."""
        return self.empirical_mean + 3.0 * self.empirical_stderr <= self.bound_value


def sketch_basis(g_mat, method, k: int, l: int, seed: int, tol: float = DEFAULT_RANK_TOL):
    """Basis extracted from a one-shot sketch of G (Method1) or G G^T (Methods 2, 3)."""
    method = SketchMethod.parse(method)
    g = as_matrix(g_mat, "G")
    if method is SketchMethod.METHOD1:
        return orth(g @ gaussian_matrix(g.shape[1], k, derive_seed(seed, 2)), tol)
    a = g @ g.T
    s = sketch_full(a, k, max(l, k), seed)
    if method is SketchMethod.METHOD2:
        return orth(s.y, tol)
    return symmetric_basis(s.y, s.psi, s.w, tol)


def verify_bound_montecarlo(g_mat, method, k: int, l: int, trials: int, seed: int,
                            spectrum=None) -> BoundReport:
    """Mean and standard error of E_G over independent sketches, paired with the
    matching expected-error bound (Method3 reuses the Method2 bound).

    ``spectrum`` supplies the exact eigenvalues of G G^T when G was built from
    them; otherwise they are computed from G."""
    method = SketchMethod.parse(method)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    g = as_matrix(g_mat, "G")
    errors = np.array(
        [reconstruction_error(g, sketch_basis(g, method, k, l, derive_seed(seed, t))) for t in range(trials)]
    )
    lam = spectrum_of(g) if spectrum is None else np.asarray(spectrum, dtype=np.float64)
    if lam.size != g.shape[0]:
        raise ValueError(f"spectrum has {lam.size} values, G has {g.shape[0]} rows")
    if method is SketchMethod.METHOD1:
        bound, gamma = bound_method1(lam, k)
    else:
        bound, gamma = bound_method2_expected(lam, k)
    mean = float(np.mean(errors))
    stderr = float(np.std(errors, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return BoundReport(
        method=method, k=k, l=l, empirical_mean=mean, empirical_stderr=stderr,
        bound_value=bound, optimal_gamma=gamma, trials=trials,
    )
