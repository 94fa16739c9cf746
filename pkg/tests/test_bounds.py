import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchogd.bounds import (
    BoundReport,
    PreconditionError,
    bound_method1,
    bound_method2_deterministic,
    bound_method2_expected,
    method2_expected_term,
    reconstruction_error,
    sketch_basis,
    spectrum_of,
    split_svd,
    stable_rank,
    verify_bound_montecarlo,
)
from sketchogd.linalg import derive_seed, gaussian_matrix, orth
from sketchogd.sketch import SketchMethod

M1, M2, M3 = SketchMethod.METHOD1, SketchMethod.METHOD2, SketchMethod.METHOD3


def with_spectrum(lam, n, seed):
    """p x n matrix whose G G^T has eigenvalues lam (n >= p)."""
    p = len(lam)
    u = orth(gaussian_matrix(p, p, seed))
    v = orth(gaussian_matrix(n, p, seed + 1))
    return u @ np.diag(np.sqrt(lam)) @ v.T


def brute_min(fn, k):
    vals = [fn(g) for g in range(k - 1)]
    best = min(vals)
    return best, vals.index(best)


class TestMetric:
    def test_full_range(self):
        g = gaussian_matrix(20, 5, 0)
        assert reconstruction_error(g, orth(g)) < 1e-10 * np.sum(g * g)

    def test_empty_basis(self):
        g = gaussian_matrix(6, 3, 1)
        assert reconstruction_error(g, np.zeros((6, 0))) == pytest.approx(np.sum(g * g))

    def test_identity_one_axis(self):
        assert reconstruction_error(np.eye(3), np.eye(3)[:, :1]) == pytest.approx(2.0)

    def test_non_orthonormal(self):
        with pytest.raises(ValueError):
            reconstruction_error(np.eye(3), np.array([[1.0], [1.0], [0.0]]))

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            reconstruction_error(np.eye(3), np.eye(4)[:, :1])


@settings(max_examples=30, deadline=None)
@given(p=st.integers(4, 30), n=st.integers(1, 20), extra=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_metric_monotone_in_basis(p, n, extra, seed):
    g = gaussian_matrix(p, n, seed)
    q = orth(gaussian_matrix(p, min(p, 1 + extra * 2), seed + 7))
    small = q[:, : max(1, q.shape[1] // 2)]
    e_small = reconstruction_error(g, small)
    e_big = reconstruction_error(g, q)
    assert 0 <= e_big <= e_small + 1e-10 * np.sum(g * g)


class TestSplit:
    def test_diag(self):
        s = split_svd(np.diag([3.0, 2.0, 1.0]), 1)
        assert np.allclose(s.sigma1, [9.0])
        assert np.allclose(s.sigma2, [4.0, 1.0])

    def test_gamma_zero(self):
        s = split_svd(np.diag([3.0, 2.0, 1.0]), 0)
        assert s.sigma1.size == 0 and np.allclose(s.sigma2, [9.0, 4.0, 1.0])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            split_svd(np.eye(3), 4)

    def test_random_matches_svd(self):
        g = gaussian_matrix(12, 7, 3)
        s = split_svd(g, 4)
        ref = np.zeros(12)
        ref[:7] = np.linalg.svd(g, compute_uv=False) ** 2
        assert np.max(np.abs(s.diag - ref)) <= 1e-9 * ref[0]
        u = np.hstack([s.u1, s.u2])
        assert np.max(np.abs(u.T @ u - np.eye(12))) < 1e-10
        assert np.allclose(u @ np.diag(s.diag) @ u.T, g @ g.T, atol=1e-9 * ref[0])


class TestBoundMethod1:
    def test_flat(self):
        assert bound_method1(np.full(200, 3.0), 20) == (pytest.approx(600.0, rel=1e-14), 0)

    def test_hand_enumeration(self):
        assert bound_method1([9.0, 4.0, 1.0], 3) == (pytest.approx(10.0), 1)

    @pytest.mark.parametrize("p,k", [(30, 20), (40, 25), (100, 60)])
    def test_linear_decay(self, p, k):
        lam = np.linspace(2.0, 0.0, p)
        value, gamma = bound_method1(lam, k)
        assert gamma == 2 * k - 2 - p
        approx = 4.0 / p * (k - 1) * (p - k + 1)
        assert abs(value - approx) <= 0.05 * approx

    def test_smallest_gamma_on_tie(self):
        # p=30, k=20 has an exact tie between gamma 8 and 9
        lam = np.linspace(2.0, 0.0, 30)
        tail = lambda g: lam[g:].sum()  # noqa: E731
        v8 = (1 + 8 / 11) * tail(8)
        v9 = (1 + 9 / 10) * tail(9)
        assert v8 == pytest.approx(v9, rel=1e-12)
        assert bound_method1(lam, 20)[1] == 8

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            bound_method1([1.0, 1.0], 1)

    def test_increasing_rejected(self):
        with pytest.raises(ValueError):
            bound_method1([1.0, 2.0], 2)


@settings(max_examples=50, deadline=None)
@given(
    lam=st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=25),
    k=st.integers(2, 25),
)
def test_method1_scan_matches_brute_force(lam, k):
    lam = np.sort(np.array(lam))[::-1]
    value, gamma = bound_method1(lam, k)
    fn = lambda g: (1 + g / (k - g - 1)) * lam[g:].sum() if g <= lam.size else math.inf  # noqa: E731
    best, _ = brute_min(fn, k)
    assert value == pytest.approx(best, rel=1e-9, abs=1e-12)
    assert value <= lam.sum() * (1 + 1e-12)


class TestBoundMethod2Expected:
    def test_step_spectrum_traces(self):
        lam = np.concatenate([np.full(10, 100.0), np.full(100, 2.0)])
        s1, s2 = lam[:10], lam[10:]
        assert np.sum(s2 * s2) * np.sum(1.0 / s1) == pytest.approx(40.0, rel=1e-14)
        assert np.sum(s2) == 200.0

    def test_hand_enumeration(self):
        value, gamma = bound_method2_expected([9.0, 4.0, 1.0], 3)
        assert gamma == 1
        assert value == pytest.approx(17.0 / 9.0 + 5.0, rel=1e-14)

    def test_zero_tail(self):
        lam = np.array([5.0, 3.0, 0.0, 0.0, 0.0])
        assert bound_method2_expected(lam, 5) == (0.0, 2)

    def test_gamma_zero_term(self):
        lam = np.array([4.0, 2.0, 1.0])
        assert method2_expected_term(lam, 0, 3) == 7.0

    def test_skips_singular_top_block(self):
        value, gamma = bound_method2_expected([1.0, 0.0, 0.0, 0.0], 4)
        assert gamma == 1 and value == 0.0

    def test_step_beats_method1(self):
        lam = np.concatenate([np.full(10, 100.0), np.full(100, 2.0)])
        assert bound_method2_expected(lam, 20)[0] < bound_method1(lam, 20)[0]

    def test_linear_reverses(self):
        lam = np.linspace(2.0, 0.0, 30)
        assert bound_method1(lam, 20)[0] < bound_method2_expected(lam, 20)[0]

    def test_flat_equal(self):
        lam = np.full(50, 1.5)
        assert bound_method1(lam, 10) == bound_method2_expected(lam, 10)


class TestDeterministic:
    def test_gamma_at_rank(self):
        g = gaussian_matrix(20, 3, 0)
        s = split_svd(g, 3)
        assert bound_method2_deterministic(s, gaussian_matrix(20, 6, 1)) == 0.0

    def test_gamma_zero_is_trace(self):
        g = gaussian_matrix(10, 4, 2)
        s = split_svd(g, 0)
        assert bound_method2_deterministic(s, gaussian_matrix(10, 4, 3)) == pytest.approx(np.sum(g * g))

    def test_rank_deficient_omega1(self):
        s = split_svd(np.diag([3.0, 2.0, 1.0, 0.5, 0.2]), 2)
        omega = np.zeros((5, 4))
        omega[2:, :] = gaussian_matrix(3, 4, 0)
        with pytest.raises(PreconditionError):
            bound_method2_deterministic(s, omega)

    def test_gamma_too_large(self):
        s = split_svd(np.eye(6), 3)
        with pytest.raises(ValueError):
            bound_method2_deterministic(s, gaussian_matrix(6, 4, 0))

    @pytest.mark.parametrize("gamma", [2, 5, 8])
    def test_per_draw_psd(self, gamma):
        p, k = 50, 10
        lam = np.logspace(1, -2, p)
        g = with_spectrum(lam, p, 11)
        split = split_svd(g, gamma)
        for t in range(30):
            seed = derive_seed(77, t)
            omega = gaussian_matrix(p, k, derive_seed(seed, 2))
            measured = reconstruction_error(g, sketch_basis(g, M2, k, k, seed))
            bound = bound_method2_deterministic(split, omega)
            assert measured <= bound * (1 + 1e-9)

    def test_mean_of_per_draw_bound(self):
        # mean of the per-draw bound is Tr(S2^2) Tr(S1^-1) / (k - gamma - 1) + Tr(S2);
        # the reported expected bound carries an extra factor gamma and is never smaller
        p, k, gamma = 40, 12, 4
        lam = np.concatenate([np.linspace(10, 6, gamma), np.linspace(1.0, 0.1, p - gamma)])
        g = with_spectrum(lam, p, 5)
        split = split_svd(g, gamma)
        draws = np.array([
            bound_method2_deterministic(split, gaussian_matrix(p, k, derive_seed(9, t)))
            for t in range(4000)
        ])
        s1, s2 = lam[:gamma], lam[gamma:]
        exact = np.sum(s2**2) * np.sum(1 / s1) / (k - gamma - 1) + np.sum(s2)
        stderr = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - exact) < 5 * stderr
        assert exact <= method2_expected_term(lam, gamma, k)


class TestStableRank:
    @pytest.mark.parametrize("s,expected", [([5.0], 1.0), ([2.0, 2.0, 2.0], 3.0), ([10.0, 1.0, 1.0], 1.02)])
    def test_examples(self, s, expected):
        assert stable_rank(s) == pytest.approx(expected)

    def test_zero(self):
        with pytest.raises(ValueError):
            stable_rank([0.0, 0.0])


class TestMonteCarlo:
    def test_exact_recovery(self):
        g = gaussian_matrix(40, 4, 0) @ gaussian_matrix(4, 30, 1)
        for method in SketchMethod:
            r = verify_bound_montecarlo(g, method, 6, 8, 5, 3)
            assert r.empirical_mean < 1e-8 * np.sum(g * g)

    def test_flat_method1_holds(self):
        g = with_spectrum(np.full(40, 2.0), 40, 4)
        r = verify_bound_montecarlo(g, M1, 8, 8, 60, 5)
        assert r.holds and r.optimal_gamma == 0
        assert r.bound_value == pytest.approx(80.0, rel=1e-9)

    def test_method3_paired_not_worse(self):
        g = with_spectrum(np.logspace(1, -1, 30), 30, 6)
        for t in range(20):
            seed = derive_seed(8, t)
            e2 = reconstruction_error(g, sketch_basis(g, M2, 6, 8, seed))
            e3 = reconstruction_error(g, sketch_basis(g, M3, 6, 8, seed))
            assert e3 <= e2 + 1e-9 * np.sum(g * g)

    def test_csv_row(self):
        r = BoundReport(M2, 4, 6, 1.5, 0.25, 3.0, 1, 30)
        assert BoundReport.CSV_HEADER.count(",") == r.csv_row().count(",")
        assert r.csv_row() == "method2,4,6,30,1.5,0.25,3.0,1"

    def test_spectrum_padding(self):
        lam = spectrum_of(gaussian_matrix(8, 3, 0))
        assert lam.size == 8 and np.all(lam[3:] == 0)
