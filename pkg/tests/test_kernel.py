import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpls_retarget.errors import DegenerateInput, DimensionMismatch, NotUnitVector
from kpls_retarget.kernel import (
    KernelSpec,
    _shifted_kernel,
    deflate_gram,
    fit_kpls,
    gram,
    kernel_eval,
    kernel_matrix,
    median_heuristic,
    predict_kpls,
)
from kpls_retarget.pls_core import fit_pls, predict_pls

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_symmetric(rng, n):
    A = rng.standard_normal((n, n))
    return A + A.T


def unit(rng, n):
    d = rng.standard_normal(n)
    return d / np.linalg.norm(d)


def interpolant_oracle(spec, S, T, X):
    """Dense kernel interpolant on the centered Gram (pseudo-inverse), independent of NIPALS."""
    spec = spec.resolved(S)
    n = S.shape[0]
    H = np.eye(n) - np.ones((n, n)) / n
    K = kernel_matrix(spec, S, S)
    Kc = H @ K @ H
    k = kernel_matrix(spec, X, S)
    kc = k - k.mean(axis=1, keepdims=True) - K.mean(axis=0) + K.mean()
    return kc @ np.linalg.pinv(Kc) @ (T - T.mean(axis=0)) + T.mean(axis=0)


class TestKernelEval:
    def test_rbf_self(self):
        x = np.array([0.3, -1.2, 4.0])
        for sigma in (0.1, 1.0, 50.0):
            assert kernel_eval(KernelSpec("rbf", sigma), x, x) == 1.0

    def test_linear(self):
        assert kernel_eval(KernelSpec("linear"), [1, 2], [3, 4]) == 11.0

    def test_rbf_closed_form(self):
        value = kernel_eval(KernelSpec("rbf", 1.0), [0.0, 0.0], [1.0, 1.0])
        assert value == pytest.approx(np.exp(-1.0), abs=1e-15)
        assert value == pytest.approx(0.3678794, abs=1e-7)

    def test_polynomial(self):
        assert kernel_eval(KernelSpec("polynomial", degree=3, offset=1.0), [1, 1], [2, 0]) == 27.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kernel_eval(KernelSpec("linear"), [1, 2], [1, 2, 3])
        with pytest.raises(DimensionMismatch):
            kernel_matrix(KernelSpec("linear"), np.ones((2, 2)), np.ones((2, 3)))

    def test_rbf_needs_width(self):
        with pytest.raises(ValueError):
            kernel_eval(KernelSpec("rbf"), [1.0], [2.0])

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, kind=st.sampled_from(["linear", "rbf", "polynomial"]), dim=st.integers(1, 8))
    def test_symmetric(self, seed, kind, dim):
        rng = np.random.default_rng(seed)
        spec = KernelSpec(kind, sigma=0.7 if kind == "rbf" else None, degree=3, offset=0.5)
        x, y = rng.standard_normal(dim), rng.standard_normal(dim)
        assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)

    def test_matrix_matches_pairwise(self, rng):
        X, Y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        for spec in (KernelSpec("linear"), KernelSpec("rbf", 0.8), KernelSpec("polynomial", degree=2)):
            K = kernel_matrix(spec, X, Y)
            ref = np.array([[kernel_eval(spec, x, y) for y in Y] for x in X])
            np.testing.assert_allclose(K, ref, rtol=1e-13, atol=1e-15)


class TestKernelSpec:
    @pytest.mark.parametrize("kwargs", [
        {"kind": "sigmoid"},
        {"kind": "rbf", "sigma": 0.0},
        {"kind": "rbf", "sigma": -1.0},
        {"kind": "polynomial", "degree": 0},
        {"kind": "polynomial", "degree": 1.5},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            KernelSpec(**kwargs)

    def test_round_trip(self):
        spec = KernelSpec("polynomial", None, 3, 0.25)
        assert KernelSpec.from_dict(spec.to_dict()) == spec

    def test_median_heuristic(self):
        X = np.array([[0.0], [1.0], [3.0]])
        assert median_heuristic(X) == 2.0
        assert KernelSpec("rbf").resolved(X).sigma == 2.0
        assert KernelSpec("rbf", 5.0).resolved(X).sigma == 5.0
        with pytest.raises(DegenerateInput):
            median_heuristic(np.ones((3, 2)))


class TestGram:
    def test_linear_on_centered_data(self, rng):
        X = rng.standard_normal((6, 3))
        X -= X.mean(axis=0)
        np.testing.assert_allclose(gram(KernelSpec("linear"), X).values, X @ X.T, atol=1e-12)

    @pytest.mark.parametrize("spec", [KernelSpec("linear"), KernelSpec("rbf", 1.3), KernelSpec("polynomial")])
    def test_rows_sum_to_zero(self, rng, spec):
        K = gram(spec, rng.standard_normal((7, 4))).values
        np.testing.assert_allclose(K.sum(axis=1), 0.0, atol=1e-10)
        assert np.max(np.abs(K - K.T)) <= 1e-12

    def test_rbf_positive_definite(self, rng):
        X = rng.standard_normal((4, 3))
        eig = np.linalg.eigvalsh(kernel_matrix(KernelSpec("rbf", 1.0), X, X))
        assert np.all(eig > 0)

    @settings(max_examples=30, deadline=None)
    @given(seed=seeds, n=st.integers(2, 15))
    def test_positive_semidefinite(self, seed, n):
        rng = np.random.default_rng(seed)
        K = gram(KernelSpec("rbf"), rng.standard_normal((n, 3))).values
        eig = np.linalg.eigvalsh(K)
        assert eig.min() >= -1e-8 * max(eig.max(), 1e-300)

    def test_center_query_matches_training_rows(self, rng):
        X = rng.standard_normal((6, 2))
        spec = KernelSpec("rbf", 0.9)
        G = gram(spec, X)
        np.testing.assert_allclose(G.center_query(_shifted_kernel(spec, X, X)), G.values, atol=1e-12)


class TestDeflateGram:
    def test_annihilates_direction(self, rng):
        K, d = random_symmetric(rng, 6), unit(rng, 6)
        K1 = deflate_gram(K, d)
        np.testing.assert_allclose(d @ K1, 0.0, atol=1e-10)
        np.testing.assert_allclose(K1 @ d, 0.0, atol=1e-10)

    def test_linear_kernel_consistency(self, rng):
        S, d = rng.standard_normal((6, 3)), unit(rng, 6)
        S1 = S - np.outer(d, d @ S)
        np.testing.assert_allclose(deflate_gram(S @ S.T, d), S1 @ S1.T, atol=1e-10)

    def test_idempotent(self, rng):
        K, d = random_symmetric(rng, 5), unit(rng, 5)
        K1 = deflate_gram(K, d)
        np.testing.assert_allclose(deflate_gram(K1, d), K1, atol=1e-12)

    def test_keeps_gram_statistics(self, rng):
        G = gram(KernelSpec("rbf", 1.0), rng.standard_normal((5, 2)))
        G1 = deflate_gram(G, unit(rng, 5))
        assert G1.row_means is G.row_means and G1.grand_mean == G.grand_mean

    def test_not_unit(self, rng):
        with pytest.raises(NotUnitVector):
            deflate_gram(np.eye(3), np.array([1.0, 1.0, 0.0]))
        with pytest.raises(DimensionMismatch):
            deflate_gram(np.eye(3), np.array([1.0, 0.0]))

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, n=st.integers(2, 20))
    def test_projector_conjugation_and_symmetry(self, seed, n):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, 3))
        K, d = gram(KernelSpec("rbf", 1.0), X).values, unit(rng, n)
        P = np.eye(n) - np.outer(d, d)
        K1 = deflate_gram(K, d)
        assert np.max(np.abs(K1 - P @ K @ P)) <= 1e-12
        assert np.max(np.abs(K1 - K1.T)) <= 1e-12


class TestFitPredict:
    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, n=st.integers(2, 20), ds=st.integers(1, 10), dt=st.integers(1, 5),
           p=st.integers(1, 5))
    def test_linear_kernel_equals_primal(self, seed, n, ds, dt, p):
        rng = np.random.default_rng(seed)
        S, T = rng.standard_normal((n, ds)), rng.standard_normal((n, dt))
        p = min(p, n)
        dual = fit_kpls(KernelSpec("linear"), S, T, p)
        primal = fit_pls(S, T, p)
        X = rng.standard_normal((5, ds))
        assert np.max(np.abs(predict_kpls(dual, X) - predict_pls(primal, X))) <= 1e-8
        assert np.max(np.abs(predict_kpls(dual, S) - predict_pls(primal, S))) <= 1e-8

    def test_rbf_exact_fit(self, rng):
        S, T = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
        spec = KernelSpec("rbf", 1.5)
        model = fit_kpls(spec, S, T, 5)
        # the centered Gram has rank n - 1
        assert model.n_components == 4
        np.testing.assert_allclose(predict_kpls(model, S), T, atol=1e-6)
        np.testing.assert_allclose(predict_kpls(model, S), interpolant_oracle(spec, S, T, S), atol=1e-6)
        np.testing.assert_allclose(predict_kpls(model, S[2]), T[2], atol=1e-6)
        X = rng.standard_normal((4, 3))
        np.testing.assert_allclose(predict_kpls(model, X), interpolant_oracle(spec, S, T, X), atol=1e-6)

    def test_zero_target(self, rng):
        with pytest.raises(DegenerateInput):
            fit_kpls(KernelSpec("rbf", 1.0), rng.standard_normal((5, 2)), np.zeros((5, 3)), 2)

    def test_wide_rbf_approaches_linear(self, rng):
        S = rng.uniform(-0.5, 0.5, (10, 3))
        T = rng.standard_normal((10, 2))
        diameter = np.max(np.linalg.norm(S[:, None] - S[None], axis=2))
        X = rng.uniform(-0.5, 0.5, (6, 3))
        for p in (1, 2, 3):
            wide = fit_kpls(KernelSpec("rbf", 1e6 * diameter), S, T, p)
            lin = fit_kpls(KernelSpec("linear"), S, T, p)
            np.testing.assert_allclose(predict_kpls(wide, X), predict_kpls(lin, X), atol=1e-3)

    def test_median_width_resolved_at_fit(self, rng):
        S = rng.standard_normal((6, 2))
        model = fit_kpls(KernelSpec("rbf"), S, rng.standard_normal((6, 1)), 2)
        assert model.spec.sigma == pytest.approx(median_heuristic(S))

    def test_errors(self, rng):
        S, T = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        with pytest.raises(DimensionMismatch):
            fit_kpls(KernelSpec("linear"), S, T[:3], 1)
        with pytest.raises(ValueError):
            fit_kpls(KernelSpec("linear"), S, T, 6)
        model = fit_kpls(KernelSpec("linear"), S, T, 2)
        with pytest.raises(DimensionMismatch):
            predict_kpls(model, np.ones(3))

    @settings(max_examples=30, deadline=None)
    @given(seed=seeds, n=st.integers(3, 20), p=st.integers(1, 6))
    def test_scores_orthogonal(self, seed, n, p):
        rng = np.random.default_rng(seed)
        model = fit_kpls(KernelSpec("rbf"), rng.standard_normal((n, 4)), rng.standard_normal((n, 2)),
                         min(p, n))
        G = model.G
        norms = np.linalg.norm(G, axis=0)
        off = np.abs(G.T @ G) - np.diag(np.diag(np.abs(G.T @ G)))
        assert np.all(off <= 1e-8 * np.outer(norms, norms))
        assert model.n_components <= n
